use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use crate::data::PhotoRecord;
use crate::error::{Error, Result};
use crate::mrf::{Labeling, SparseVector};

/// Families of node features. The declaration order is the block order of
/// the concatenated index space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Word,
    Group,
    Tag,
    Set,
    Gallery,
    Location,
    User,
}

impl FeatureKind {
    pub const TEXTUAL: [FeatureKind; 3] = [FeatureKind::Word, FeatureKind::Group, FeatureKind::Tag];
    pub const ALL: [FeatureKind; 7] = [
        FeatureKind::Word,
        FeatureKind::Group,
        FeatureKind::Tag,
        FeatureKind::Set,
        FeatureKind::Gallery,
        FeatureKind::Location,
        FeatureKind::User,
    ];

    /// Distinct items of this kind present on the photo.
    pub fn items(self, photo: &PhotoRecord) -> BTreeSet<String> {
        match self {
            FeatureKind::Word => {
                let mut words: BTreeSet<String> = tokenize(&photo.title).into_iter().collect();
                words.extend(tokenize(&photo.description));
                for c in &photo.comments {
                    words.extend(tokenize(c));
                }
                words
            }
            FeatureKind::Group => photo.groups.clone(),
            FeatureKind::Tag => photo.tags.clone(),
            FeatureKind::Set => photo.sets.clone(),
            FeatureKind::Gallery => photo.galleries.clone(),
            FeatureKind::Location => photo.location_id.iter().cloned().collect(),
            FeatureKind::User => BTreeSet::from([photo.uploader_id.clone()]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TopPopular,
    CategoryEnriched,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub kind: FeatureKind,
    pub token: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabularyConfig {
    /// Most frequent items kept per kind.
    pub popular_k: usize,
    /// An item is also kept when its rate among positives is at least this
    /// multiple of its overall rate.
    pub enrich_ratio: f64,
    /// Minimum training document frequency for enrichment.
    pub min_enrich_count: usize,
    pub kinds: Vec<FeatureKind>,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            popular_k: 1000,
            enrich_ratio: 2.0,
            min_enrich_count: 2,
            kinds: FeatureKind::TEXTUAL.to_vec(),
        }
    }
}

impl VocabularyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.enrich_ratio >= 1.0 && self.enrich_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "enrich_ratio must be >= 1, got {}",
                self.enrich_ratio
            )));
        }
        Ok(())
    }
}

/// Dense, contiguous index space over words, groups, tags (and optionally
/// the categorical relational blocks).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<VocabEntry>", into = "Vec<VocabEntry>")]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<(FeatureKind, String), u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl From<Vec<VocabEntry>> for Vocabulary {
    fn from(entries: Vec<VocabEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.kind, e.token.clone()), i as u32))
            .collect();
        Self { entries, index }
    }
}

impl From<Vocabulary> for Vec<VocabEntry> {
    fn from(v: Vocabulary) -> Self {
        v.entries
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn index_of(&self, kind: FeatureKind, token: &str) -> Option<u32> {
        self.index.get(&(kind, token.to_string())).copied()
    }

    pub fn kinds(&self) -> BTreeSet<FeatureKind> {
        self.entries.iter().map(|e| e.kind).collect()
    }
}

/// Builds the vocabulary from training photos only. `labels`, when given,
/// aligns with `photos` and drives the enrichment rule.
pub fn build_vocabulary(
    photos: &[&PhotoRecord],
    labels: Option<&Labeling>,
    config: &VocabularyConfig,
) -> Result<Vocabulary> {
    config.validate()?;
    if let Some(l) = labels {
        if l.len() != photos.len() {
            return Err(Error::Dimension {
                what: "vocabulary labels",
                expected: photos.len(),
                actual: l.len(),
            });
        }
    }
    let n_total = photos.len();
    let n_pos = labels.map_or(0, |l| l.positives());
    let kinds: BTreeSet<FeatureKind> = config.kinds.iter().copied().collect();

    let mut entries = Vec::new();
    for kind in kinds {
        // token -> (document frequency, document frequency among positives)
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for (i, photo) in photos.iter().enumerate() {
            let positive = labels.is_some_and(|l| l.is_positive(i));
            for item in kind.items(photo) {
                let c = counts.entry(item).or_default();
                c.0 += 1;
                c.1 += positive as usize;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> =
            counts.into_iter().map(|(t, (df, pos))| (t, df, pos)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let take = config.popular_k.min(ranked.len());
        let rest = ranked.split_off(take);
        entries.extend(ranked.into_iter().map(|(token, _, _)| VocabEntry {
            kind,
            token,
            provenance: Provenance::TopPopular,
        }));

        if n_pos > 0 {
            let mut enriched: Vec<String> = rest
                .into_iter()
                .filter(|&(_, df, pos)| {
                    df >= config.min_enrich_count
                        && pos as f64 / n_pos as f64 >= config.enrich_ratio * df as f64 / n_total as f64
                })
                .map(|(t, _, _)| t)
                .collect();
            enriched.sort();
            entries.extend(enriched.into_iter().map(|token| VocabEntry {
                kind,
                token,
                provenance: Provenance::CategoryEnriched,
            }));
        }
    }
    Ok(Vocabulary::from(entries))
}

/// Binary indicator over vocabulary entries present on the photo.
pub fn node_features(photo: &PhotoRecord, vocab: &Vocabulary) -> SparseVector {
    let kinds = vocab.kinds();
    SparseVector::indicator(kinds.into_iter().flat_map(|kind| {
        kind.items(photo)
            .into_iter()
            .filter_map(move |item| vocab.index_of(kind, &item))
    }))
}
