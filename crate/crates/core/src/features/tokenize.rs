use std::collections::HashSet;
use std::sync::OnceLock;

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// English stopwords, split with the same rule as [`tokenize`] so that
/// contractions ("don't") match their fragments.
pub fn stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().flat_map(split_words).collect())
}

/// Lowercased alphanumeric tokens with stopwords and one-character tokens removed.
/// Repeated words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let stop = stopwords();
    split_words(text)
        .filter(|t| t.chars().count() >= 2 && !stop.contains(t))
        .collect()
}
