//! Ranking and labeling scores, co-occurrence statistics and edge-weight
//! importance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabelTable, PhotoRecord, UserTable};
use crate::error::{Error, Result};
use crate::features::{edge_features, EDGE_PROPERTIES};
use crate::learning::ber_loss;
use crate::mrf::{CategoryModel, Labeling, EDGE_DIM};

/// Mean over truth-positive ranks k of precision at k, ranking by score
/// descending with ties kept in input order.
pub fn average_precision(scores: &[f64], truth: &Labeling) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension {
            what: "scores",
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("non-finite score {s}")));
    }
    if truth.positives() == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truth.is_positive(i) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

/// 1 − balanced error rate.
pub fn balanced_error_score(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    Ok(1.0 - ber_loss(pred, truth)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category_id: String,
    pub average_precision: f64,
    pub balanced_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryScore>,
    /// (category, reason) for categories left out of the aggregates.
    pub skipped: Vec<(String, String)>,
    pub map: f64,
    pub mean_balanced_score: f64,
}

impl EvalReport {
    /// Scores one category, recording it as skipped when its truth is
    /// single-class.
    pub fn add(&mut self, category_id: &str, scores: &[f64], pred: &Labeling, truth: &Labeling) -> Result<()> {
        let ap = average_precision(scores, truth);
        let bs = balanced_error_score(pred, truth);
        match (ap, bs) {
            (Ok(ap), Ok(bs)) => self.categories.push(CategoryScore {
                category_id: category_id.to_string(),
                average_precision: ap,
                balanced_score: bs,
            }),
            (Err(e @ (Error::NoPositives | Error::DegenerateCategory { .. })), _)
            | (_, Err(e @ Error::DegenerateCategory { .. })) => {
                log::warn!("skipping category {category_id}: {e}");
                self.skipped.push((category_id.to_string(), e.to_string()));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        let n = self.categories.len();
        if n == 0 {
            self.map = 0.0;
            self.mean_balanced_score = 0.0;
            return;
        }
        self.map = self.categories.iter().map(|c| c.average_precision).sum::<f64>() / n as f64;
        self.mean_balanced_score = self.categories.iter().map(|c| c.balanced_score).sum::<f64>() / n as f64;
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category_id,average_precision,balanced_score\n");
        for c in &self.categories {
            let _ = writeln!(out, "{},{},{}", c.category_id, c.average_precision, c.balanced_score);
        }
        let _ = writeln!(out, "MEAN,{},{}", self.map, self.mean_balanced_score);
        out
    }

    pub fn to_text(&self) -> String {
        let w = self
            .categories
            .iter()
            .map(|c| c.category_id.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = format!("{:<w$}  {:>8}  {:>8}\n", "category", "AP", "1-BER");
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{:<w$}  {:>8.4}  {:>8.4}",
                c.category_id, c.average_precision, c.balanced_score
            );
        }
        let _ = writeln!(out, "{:<w$}  {:>8.4}  {:>8.4}", "mean", self.map, self.mean_balanced_score);
        let _ = writeln!(out, "categories: {}  skipped: {}", self.categories.len(), self.skipped.len());
        for (c, why) in &self.skipped {
            let _ = writeln!(out, "  skipped {c}: {why}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceConfig {
    /// Pairs are sampled (with replacement) once C(N,2) exceeds this.
    pub pair_budget: u64,
    pub seed: u64,
}

impl Default for CooccurrenceConfig {
    fn default() -> Self {
        Self {
            pair_budget: 5_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceRow {
    pub property: String,
    pub shared: u64,
    pub pairs: u64,
    pub shared_label_pairs: u64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub rows: Vec<CooccurrenceRow>,
    pub pairs_examined: u64,
    /// Seed of the pair sample, when sampling was used.
    pub sample_seed: Option<u64>,
}

impl CooccurrenceTable {
    pub fn property(&self, name: &str) -> impl Iterator<Item = &CooccurrenceRow> {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.property == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("property,shared_count,pairs,shared_label_pairs,probability\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.property, r.shared, r.pairs, r.shared_label_pairs, r.probability
            );
        }
        out
    }
}

/// For each relational property, how often photo pairs with a given number
/// of shared items also share at least one positive label.
pub fn cooccurrence_stats(
    photos: &[&PhotoRecord],
    users: &UserTable,
    labels: &LabelTable,
    config: &CooccurrenceConfig,
) -> CooccurrenceTable {
    let mut positive: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (cat, table) in labels {
        for (pid, &y) in table {
            if y > 0 {
                positive.entry(pid.as_str()).or_default().insert(cat.as_str());
            }
        }
    }
    let empty = BTreeSet::new();
    let label_sets: Vec<&BTreeSet<&str>> = photos
        .iter()
        .map(|p| positive.get(p.photo_id.as_str()).unwrap_or(&empty))
        .collect();

    // property -> shared count -> (pairs, pairs sharing a label)
    let mut hist: [BTreeMap<u64, (u64, u64)>; EDGE_DIM] = Default::default();
    let mut tally = |i: usize, j: usize| {
        let f = edge_features(photos[i], photos[j], users);
        let shares = !label_sets[i].is_disjoint(label_sets[j]);
        for (k, &v) in f.iter().enumerate() {
            let e = hist[k].entry(v as u64).or_default();
            e.0 += 1;
            e.1 += shares as u64;
        }
    };

    let n = photos.len() as u64;
    let total = n * n.saturating_sub(1) / 2;
    let (examined, sample_seed) = if total <= config.pair_budget {
        for i in 0..photos.len() {
            for j in i + 1..photos.len() {
                tally(i, j);
            }
        }
        (total, None)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..config.pair_budget {
            let i = rng.random_range(0..photos.len());
            let mut j = rng.random_range(0..photos.len() - 1);
            if j >= i {
                j += 1;
            }
            tally(i, j);
        }
        (config.pair_budget, Some(config.seed))
    };

    let rows = hist
        .iter()
        .enumerate()
        .flat_map(|(k, h)| {
            h.iter().map(move |(&shared, &(pairs, hits))| CooccurrenceRow {
                property: EDGE_PROPERTIES[k].to_string(),
                shared,
                pairs,
                shared_label_pairs: hits,
                probability: hits as f64 / pairs as f64,
            })
        })
        .collect();
    CooccurrenceTable {
        rows,
        pairs_examined: examined,
        sample_seed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub weights: [f64; EDGE_DIM],
    pub used: usize,
    /// Models left out because their edge weights are all zero.
    pub excluded: usize,
}

impl Importance {
    pub fn argmax(&self) -> usize {
        (0..EDGE_DIM).fold(0, |best, k| if self.weights[k] > self.weights[best] { k } else { best })
    }
}

/// Averages the unit-sum-normalized edge weight vectors.
pub fn weight_importance(models: &[CategoryModel]) -> Result<Importance> {
    let mut acc = [0.0; EDGE_DIM];
    let mut used = 0;
    for m in models {
        let sum: f64 = m.theta_edge().iter().sum();
        if sum <= 0.0 {
            continue;
        }
        for (a, t) in acc.iter_mut().zip(m.theta_edge()) {
            *a += t / sum;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyImportance);
    }
    for a in &mut acc {
        *a /= used as f64;
    }
    Ok(Importance {
        weights: acc,
        used,
        excluded: models.len() - used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserRecord;

    fn lab(v: &[i8]) -> Labeling {
        Labeling::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[3.0, 2.0, 1.0, 0.0], &lab(&[1, 1, -1, -1])).unwrap(), 1.0);
        let ap = average_precision(&[3.0, 2.0, 1.0], &lab(&[1, -1, 1])).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(matches!(
            average_precision(&[1.0], &lab(&[-1])),
            Err(Error::NoPositives)
        ));
        assert!(average_precision(&[f64::NAN], &lab(&[1])).is_err());
    }

    #[test]
    fn ap_ties_follow_input_order() {
        // all tied: ranking is input order [-, +] -> precision 1/2
        assert_eq!(average_precision(&[0.0, 0.0], &lab(&[-1, 1])).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.0, 0.0], &lab(&[1, -1])).unwrap(), 1.0);
    }

    #[test]
    fn random_scores_average_to_positive_fraction() {
        let truth = Labeling::from_bools(&(0..500).map(|i| i % 10 == 0).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 10_000;
        let mean: f64 = (0..trials)
            .map(|_| {
                let s: Vec<f64> = (0..truth.len()).map(|_| rng.random()).collect();
                average_precision(&s, &truth).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        // a random ranking's expected AP exceeds the base rate by O(log N / N)
        assert!((mean - 0.1).abs() < 0.02, "{mean}");
    }

    #[test]
    fn balanced_score_examples() {
        let t = lab(&[1, -1, -1]);
        assert_eq!(balanced_error_score(&t, &t).unwrap(), 1.0);
        assert_eq!(balanced_error_score(&lab(&[1, 1, 1]), &t).unwrap(), 0.5);
        assert_eq!(balanced_error_score(&t.negated(), &t).unwrap(), 0.0);
    }

    #[test]
    fn report_aggregates_and_skips() {
        let mut r = EvalReport::default();
        r.add("a", &[1.0, 0.0], &lab(&[1, -1]), &lab(&[1, -1])).unwrap();
        r.add("b", &[0.0, 1.0], &lab(&[1, 1]), &lab(&[1, -1])).unwrap();
        r.add("c", &[0.0, 1.0], &lab(&[1, 1]), &lab(&[-1, -1])).unwrap();
        assert_eq!(r.categories.len(), 2);
        assert_eq!(r.skipped.len(), 1);
        assert!((r.map - 0.75).abs() < 1e-15);
        assert!((r.mean_balanced_score - 0.75).abs() < 1e-15);
        assert!(r.to_csv().starts_with("category_id,"));
        assert!(r.to_text().contains("skipped: 1"));
    }

    fn photo(id: &str, user: &str, groups: &[&str]) -> PhotoRecord {
        PhotoRecord {
            photo_id: id.into(),
            uploader_id: user.into(),
            groups: groups.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn identical_groups_and_labels_give_probability_one() {
        let a = photo("a", "u", &["g1", "g2"]);
        let b = photo("b", "v", &["g1", "g2"]);
        let users: UserTable = ["u", "v"]
            .iter()
            .map(|u| UserRecord {
                user_id: u.to_string(),
                ..Default::default()
            })
            .collect();
        let labels: LabelTable = [(
            "c".to_string(),
            [("a".to_string(), 1), ("b".to_string(), 1)].into(),
        )]
        .into();
        let t = cooccurrence_stats(&[&a, &b], &users, &labels, &CooccurrenceConfig::default());
        let g: Vec<_> = t.property("groups").collect();
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].shared, g[0].pairs, g[0].probability), (2, 1, 1.0));
        assert_eq!(t.pairs_examined, 1);
        assert!(t.sample_seed.is_none());
    }

    #[test]
    fn pair_counts_sum_to_all_pairs() {
        let photos: Vec<PhotoRecord> = (0..9)
            .map(|i| photo(&format!("p{i}"), "u", if i % 2 == 0 { &["g"] } else { &[] }))
            .collect();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let users: UserTable = std::iter::once(UserRecord {
            user_id: "u".into(),
            ..Default::default()
        })
        .collect();
        let t = cooccurrence_stats(&refs, &users, &LabelTable::new(), &CooccurrenceConfig::default());
        for name in EDGE_PROPERTIES {
            assert_eq!(t.property(name).map(|r| r.pairs).sum::<u64>(), 36);
        }
        let sampled = cooccurrence_stats(
            &refs,
            &users,
            &LabelTable::new(),
            &CooccurrenceConfig {
                pair_budget: 10,
                seed: 4,
            },
        );
        assert_eq!(sampled.sample_seed, Some(4));
        assert_eq!(sampled.property("groups").map(|r| r.pairs).sum::<u64>(), 10);
    }

    #[test]
    fn importance_examples() {
        let m = |e: [f64; 7]| CategoryModel::new("c", vec![], e).unwrap();
        let i = weight_importance(&[m([2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])]).unwrap();
        assert_eq!(i.weights, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let i = weight_importance(&[
            m([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            m([0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
            m([0.0; 7]),
        ])
        .unwrap();
        assert_eq!(i.weights, [0.25, 0.25, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!((i.used, i.excluded), (2, 1));
        assert_eq!(i.argmax(), 2);
        assert!((i.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(matches!(weight_importance(&[m([0.0; 7])]), Err(Error::EmptyImportance)));
    }
}
