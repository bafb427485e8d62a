//! Dataset tables, file formats, splits, target selection and the planted
//! synthetic generator.

mod io;
mod records;
mod synthetic;
mod targets;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, write_atomic, DatasetPaths, FORMAT_VERSION};
pub use records::{PhotoRecord, UserRecord, UserTable};
pub use synthetic::{generate_synthetic, PlantingStrengths, SyntheticSpec};
pub use targets::{select_targets, TargetKind, Targets};

/// category id -> photo id -> ±1.
pub type LabelTable = BTreeMap<String, BTreeMap<String, i8>>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Splits {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}

/// Seeded uniform split; `train_fraction` of the ids (rounded) go to train.
pub fn random_split<'a>(ids: impl IntoIterator<Item = &'a str>, train_fraction: f64, seed: u64) -> Result<Splits> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction must be in [0,1], got {train_fraction}")));
    }
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (ids.len() as f64 * train_fraction).round() as usize;
    Ok(Splits {
        train: ids[..k].iter().map(|s| s.to_string()).collect(),
        test: ids[k..].iter().map(|s| s.to_string()).collect(),
    })
}

/// A validated photo collection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    photos: Vec<PhotoRecord>,
    index: BTreeMap<String, usize>,
    users: UserTable,
    labels: Option<LabelTable>,
    splits: Splits,
}

impl Dataset {
    pub fn new(photos: Vec<PhotoRecord>, users: UserTable, labels: Option<LabelTable>, splits: Splits) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, p) in photos.iter().enumerate() {
            if index.insert(p.photo_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate photo id {}", p.photo_id)));
            }
        }
        let ds = Self {
            photos,
            index,
            users,
            labels,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for p in &self.photos {
            if !self.users.contains(&p.uploader_id) {
                return Err(Error::Integrity(format!(
                    "photo {} references unknown uploader {}",
                    p.photo_id, p.uploader_id
                )));
            }
        }
        for (cat, table) in self.labels.iter().flatten() {
            for (id, &y) in table {
                if !self.index.contains_key(id) {
                    return Err(Error::Integrity(format!("category {cat} labels unknown photo {id}")));
                }
                if y != 1 && y != -1 {
                    return Err(Error::InvalidLabel(y as i64));
                }
            }
        }
        for id in self.splits.train.iter().chain(&self.splits.test) {
            if !self.index.contains_key(id) {
                return Err(Error::Integrity(format!("split lists unknown photo {id}")));
            }
        }
        if let Some(id) = self.splits.train.intersection(&self.splits.test).next() {
            return Err(Error::Integrity(format!("photo {id} is in both train and test")));
        }
        Ok(())
    }

    pub fn photos(&self) -> &[PhotoRecord] {
        &self.photos
    }

    pub fn photo(&self, id: &str) -> Option<&PhotoRecord> {
        self.index.get(id).map(|&i| &self.photos[i])
    }

    pub fn users(&self) -> &UserTable {
        &self.users
    }

    pub fn labels(&self) -> Option<&LabelTable> {
        self.labels.as_ref()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        self.splits = splits;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.photos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photos.is_empty()
    }
}
