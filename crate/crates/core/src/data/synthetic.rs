use std::collections::BTreeSet;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, Zipf};
use serde::{Deserialize, Serialize};

use super::{random_split, Dataset, LabelTable, PhotoRecord, UserRecord, UserTable};
use crate::error::{Error, Result};

/// Probability that a photo carrying a planted value of the property is a
/// positive of the category. One entry per relational property.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantingStrengths {
    pub tags: f64,
    pub groups: f64,
    pub sets: f64,
    pub galleries: f64,
    pub location: f64,
    pub user: f64,
    pub contact: f64,
}

impl PlantingStrengths {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.tags,
            self.groups,
            self.sets,
            self.galleries,
            self.location,
            self.user,
            self.contact,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_photos: usize,
    pub n_users: usize,
    pub n_tags: usize,
    pub n_groups: usize,
    pub n_sets: usize,
    pub n_galleries: usize,
    pub n_locations: usize,
    pub n_categories: usize,
    pub n_words: usize,
    pub mean_tags: f64,
    pub mean_groups: f64,
    pub mean_sets: f64,
    pub mean_galleries: f64,
    pub mean_title_words: f64,
    pub mean_description_words: f64,
    pub mean_contacts: f64,
    /// Fraction of photos with a location.
    pub location_rate: f64,
    /// Zipf exponent for photos per user.
    pub user_exponent: f64,
    /// Zipf exponent for tag, group and word popularity.
    pub item_exponent: f64,
    /// Zipf exponent for gallery popularity.
    pub gallery_exponent: f64,
    pub planting: PlantingStrengths,
    /// Fraction of each property's values planted per category.
    pub planted_fraction: f64,
    /// Positive probability of photos carrying no planted value.
    pub base_rate: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_photos: 2000,
            n_users: 150,
            n_tags: 3000,
            n_groups: 400,
            n_sets: 600,
            n_galleries: 250,
            n_locations: 120,
            n_categories: 10,
            n_words: 2000,
            mean_tags: 10.24,
            mean_groups: 5.28,
            mean_sets: 1.0,
            mean_galleries: 1.0,
            mean_title_words: 3.0,
            mean_description_words: 8.0,
            mean_contacts: 6.0,
            location_rate: 0.5,
            user_exponent: 1.0,
            item_exponent: 1.0,
            gallery_exponent: 0.5,
            planting: PlantingStrengths {
                tags: 0.3,
                groups: 0.6,
                galleries: 0.6,
                ..Default::default()
            },
            planted_fraction: 0.05,
            base_rate: 0.05,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0,1], got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("mean_tags", self.mean_tags),
            ("mean_groups", self.mean_groups),
            ("mean_sets", self.mean_sets),
            ("mean_galleries", self.mean_galleries),
            ("mean_title_words", self.mean_title_words),
            ("mean_description_words", self.mean_description_words),
            ("mean_contacts", self.mean_contacts),
            ("user_exponent", self.user_exponent),
            ("item_exponent", self.item_exponent),
            ("gallery_exponent", self.gallery_exponent),
        ] {
            nonneg(n, v)?;
        }
        for (n, v) in [
            ("location_rate", self.location_rate),
            ("planted_fraction", self.planted_fraction),
            ("base_rate", self.base_rate),
            ("train_fraction", self.train_fraction),
        ] {
            unit(n, v)?;
        }
        for (n, v) in ["tags", "groups", "sets", "galleries", "location", "user", "contact"]
            .iter()
            .zip(self.planting.as_array())
        {
            unit(&format!("planting.{n}"), v)?;
        }
        if self.n_photos > 0 && self.n_users == 0 {
            return Err(Error::Config("n_users must be >= 1 when n_photos > 0".into()));
        }
        Ok(())
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Zipf-ranked sampler over `0..n` (rank 1 is index 0).
struct Popularity(Option<Zipf<f64>>, usize);

impl Popularity {
    fn new(n: usize, exponent: f64) -> Self {
        Self((n > 0).then(|| Zipf::new(n as f64, exponent).expect("valid zipf")), n)
    }

    fn one(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        self.0.as_ref().map(|z| (z.sample(rng) as usize - 1).min(self.1 - 1))
    }

    /// Up to `k` distinct indices.
    fn distinct(&self, rng: &mut ChaCha8Rng, k: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let k = k.min(self.1);
        let mut attempts = 0;
        while out.len() < k && attempts < 50 * k {
            out.insert(self.one(rng).expect("non-empty"));
            attempts += 1;
        }
        out
    }
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

fn id(prefix: &str, i: usize, n: usize) -> String {
    format!("{prefix}{i:0w$}", w = width(n))
}

/// Values of the seven relational properties carried by a photo, as indices
/// into each property's value space.
fn property_values(p: &Draft, contacts: &[BTreeSet<usize>]) -> [Vec<usize>; 7] {
    [
        p.tags.iter().copied().collect(),
        p.groups.iter().copied().collect(),
        p.sets.iter().copied().collect(),
        p.galleries.iter().copied().collect(),
        p.location.into_iter().collect(),
        vec![p.user],
        contacts[p.user].iter().copied().collect(),
    ]
}

struct Draft {
    user: usize,
    tags: BTreeSet<usize>,
    groups: BTreeSet<usize>,
    sets: BTreeSet<usize>,
    galleries: BTreeSet<usize>,
    location: Option<usize>,
    title: String,
    description: String,
    timestamp: i64,
}

/// Generates a seeded corpus whose labels are planted on property values:
/// each category designates a random fraction of every property's values,
/// and a photo carrying one of them is positive with the property's planting
/// strength (the largest one if several apply), otherwise with `base_rate`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let s = spec;

    let mut r = rng(s.seed, 1);
    let contacts: Vec<BTreeSet<usize>> = (0..s.n_users)
        .map(|u| {
            let k = poisson(&mut r, s.mean_contacts).min(s.n_users.saturating_sub(1));
            let mut c = BTreeSet::new();
            while c.len() < k {
                let v = r.random_range(0..s.n_users);
                if v != u {
                    c.insert(v);
                }
            }
            c
        })
        .collect();
    let homes: Vec<Option<usize>> = (0..s.n_users)
        .map(|_| (s.n_locations > 0).then(|| r.random_range(0..s.n_locations)))
        .collect();
    let mut owned_sets: Vec<Vec<usize>> = vec![Vec::new(); s.n_users];
    if s.n_users > 0 {
        for set in 0..s.n_sets {
            owned_sets[set % s.n_users].push(set);
        }
    }

    let users_pop = Popularity::new(s.n_users, s.user_exponent);
    let tags_pop = Popularity::new(s.n_tags, s.item_exponent);
    let groups_pop = Popularity::new(s.n_groups, s.item_exponent);
    let gal_pop = Popularity::new(s.n_galleries, s.gallery_exponent);
    let words_pop = Popularity::new(s.n_words, s.item_exponent);
    let mut r = rng(s.seed, 2);
    let text = |r: &mut ChaCha8Rng, mean: f64| {
        let k = poisson(r, mean);
        (0..k)
            .filter_map(|_| words_pop.one(r))
            .map(|w| format!("w{w}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let drafts: Vec<Draft> = (0..s.n_photos)
        .map(|_| {
            let user = users_pop.one(&mut r).expect("n_users >= 1");
            let k = poisson(&mut r, s.mean_tags);
            let tags = tags_pop.distinct(&mut r, k);
            let k = poisson(&mut r, s.mean_groups);
            let groups = groups_pop.distinct(&mut r, k);
            let own = &owned_sets[user];
            let k = poisson(&mut r, s.mean_sets).min(own.len());
            let mut sets = BTreeSet::new();
            while sets.len() < k {
                sets.insert(own[r.random_range(0..own.len())]);
            }
            let k = poisson(&mut r, s.mean_galleries);
            let galleries = gal_pop.distinct(&mut r, k);
            let location = if s.n_locations > 0 && r.random_bool(s.location_rate) {
                if r.random_bool(0.8) {
                    homes[user]
                } else {
                    Some(r.random_range(0..s.n_locations))
                }
            } else {
                None
            };
            let title = text(&mut r, s.mean_title_words);
            let description = text(&mut r, s.mean_description_words);
            Draft {
                user,
                tags,
                groups,
                sets,
                galleries,
                location,
                title,
                description,
                timestamp: 1_200_000_000 + r.random_range(0..300_000_000),
            }
        })
        .collect();

    let value_counts = [
        s.n_tags,
        s.n_groups,
        s.n_sets,
        s.n_galleries,
        s.n_locations,
        s.n_users,
        s.n_users,
    ];
    let strengths = s.planting.as_array();
    let photo_ids: Vec<String> = (0..s.n_photos).map(|i| id("p", i, s.n_photos)).collect();
    let values: Vec<[Vec<usize>; 7]> = drafts.iter().map(|d| property_values(d, &contacts)).collect();
    let mut r = rng(s.seed, 3);
    let mut labels = LabelTable::new();
    for c in 0..s.n_categories {
        let planted: Vec<Vec<bool>> = value_counts
            .iter()
            .zip(strengths)
            .map(|(&n, st)| (0..n).map(|_| st > 0.0 && r.random_bool(s.planted_fraction)).collect())
            .collect();
        let table = values
            .iter()
            .zip(&photo_ids)
            .map(|(vals, pid)| {
                let p = (0..7)
                    .filter(|&k| vals[k].iter().any(|&v| planted[k][v]))
                    .map(|k| strengths[k])
                    .fold(s.base_rate, f64::max);
                (pid.clone(), if r.random_bool(p) { 1 } else { -1 })
            })
            .collect();
        labels.insert(id("c", c, s.n_categories), table);
    }

    let user_id = |u: usize| id("u", u, s.n_users);
    let photos: Vec<PhotoRecord> = drafts
        .into_iter()
        .zip(&photo_ids)
        .map(|(d, pid)| PhotoRecord {
            photo_id: pid.clone(),
            uploader_id: user_id(d.user),
            title: d.title,
            description: d.description,
            comments: Vec::new(),
            tags: d.tags.into_iter().map(|t| id("t", t, s.n_tags)).collect(),
            groups: d.groups.into_iter().map(|g| id("g", g, s.n_groups)).collect(),
            sets: d.sets.into_iter().map(|x| id("s", x, s.n_sets)).collect(),
            galleries: d.galleries.into_iter().map(|g| id("gal", g, s.n_galleries)).collect(),
            location_id: d.location.map(|l| id("loc", l, s.n_locations)),
            timestamp: Some(d.timestamp),
        })
        .collect();
    let users: UserTable = contacts
        .iter()
        .enumerate()
        .map(|(u, c)| UserRecord {
            user_id: user_id(u),
            contact_ids: c.iter().map(|&v| user_id(v)).collect(),
        })
        .collect();
    let splits = random_split(photo_ids.iter().map(String::as_str), s.train_fraction, s.seed ^ 0x5EED)?;
    Dataset::new(photos, users, Some(labels), splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SyntheticSpec {
            n_photos: 400,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 12, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn realized_means_match_spec() {
        let spec = SyntheticSpec {
            n_photos: 10_000,
            n_users: 600,
            seed: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let n = ds.len() as f64;
        let mean = |f: fn(&PhotoRecord) -> usize| ds.photos().iter().map(f).sum::<usize>() as f64 / n;
        let tags = mean(|p| p.tags.len());
        let groups = mean(|p| p.groups.len());
        let galleries = mean(|p| p.galleries.len());
        assert!((tags / 10.24 - 1.0).abs() < 0.05, "tags {tags}");
        assert!((groups / 5.28 - 1.0).abs() < 0.05, "groups {groups}");
        assert!((galleries - 1.0).abs() < 0.05, "galleries {galleries}");
    }

    #[test]
    fn zero_strength_gives_base_rate_labels() {
        let spec = SyntheticSpec {
            n_photos: 3000,
            planting: PlantingStrengths::default(),
            base_rate: 0.2,
            n_categories: 3,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for table in ds.labels().unwrap().values() {
            let pos = table.values().filter(|&&y| y > 0).count() as f64 / table.len() as f64;
            assert!((pos - 0.2).abs() < 0.03, "{pos}");
        }
    }

    #[test]
    fn sets_belong_to_their_uploader() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_photos: 500,
            ..Default::default()
        })
        .unwrap();
        let mut owner = std::collections::BTreeMap::new();
        for p in ds.photos() {
            for s in &p.sets {
                assert_eq!(owner.entry(s.clone()).or_insert(p.uploader_id.clone()), &p.uploader_id);
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec {
            base_rate: 1.5,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec {
            n_users: 0,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn empty_spec_is_valid() {
        let spec = SyntheticSpec {
            n_photos: 0,
            n_users: 0,
            n_categories: 0,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).unwrap().is_empty());
    }
}
