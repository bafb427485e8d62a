use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabelTable, PhotoRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMask, EDGE_GROUPS, EDGE_TAGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Labels,
    Tags,
    Groups,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetKind::Labels => "labels",
            TargetKind::Tags => "tags",
            TargetKind::Groups => "groups",
        })
    }
}

/// Per-category ground truth plus the features a model for these targets
/// must not see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub kind: TargetKind,
    pub truth: LabelTable,
    pub mask: FeatureMask,
}

/// For `Labels`, every category of the labels file. For `Tags` and `Groups`,
/// the `top_k` most frequent items (ties by id) become categories over all
/// photos, absence counting as a negative, and the matching node-feature
/// family and edge component are masked.
pub fn select_targets(ds: &Dataset, kind: TargetKind, top_k: usize) -> Result<Targets> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be >= 1".into()));
    }
    let (family, edge) = match kind {
        TargetKind::Labels => {
            let truth = ds
                .labels()
                .ok_or_else(|| Error::Config("target kind 'labels' needs a labels file".into()))?
                .clone();
            return Ok(Targets {
                kind,
                truth,
                mask: FeatureMask::default(),
            });
        }
        TargetKind::Tags => (FeatureKind::Tag, EDGE_TAGS),
        TargetKind::Groups => (FeatureKind::Group, EDGE_GROUPS),
    };
    fn items(kind: TargetKind, p: &PhotoRecord) -> &BTreeSet<String> {
        match kind {
            TargetKind::Tags => &p.tags,
            _ => &p.groups,
        }
    }
    let get = |p| items(kind, p);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in ds.photos() {
        for item in get(p) {
            *counts.entry(item.clone()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);

    let truth = ranked
        .into_iter()
        .map(|(item, _)| {
            let table = ds
                .photos()
                .iter()
                .map(|p| (p.photo_id.clone(), if get(p).contains(&item) { 1 } else { -1 }))
                .collect();
            (item, table)
        })
        .collect();
    let mut mask = FeatureMask::default();
    mask.excluded_kinds.insert(family);
    mask.masked_edges[edge] = true;
    Ok(Targets { kind, truth, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn labels_target_has_empty_mask() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_photos: 200,
            ..Default::default()
        })
        .unwrap();
        let t = select_targets(&ds, TargetKind::Labels, 5).unwrap();
        assert!(t.mask.is_empty());
        assert_eq!(t.truth.len(), 10);
    }

    #[test]
    fn tags_target_masks_tags() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_photos: 500,
            ..Default::default()
        })
        .unwrap();
        let t = select_targets(&ds, TargetKind::Tags, 100).unwrap();
        assert!(t.mask.excluded_kinds.contains(&FeatureKind::Tag));
        assert_eq!(t.mask.masked_edges, [true, false, false, false, false, false, false]);
        assert_eq!(t.truth.len(), 100);

        let mut freq: Vec<(usize, String)> = Vec::new();
        let mut all: Vec<&String> = ds.photos().iter().flat_map(|p| &p.tags).collect();
        all.sort();
        for chunk in all.chunk_by(|a, b| a == b) {
            freq.push((chunk.len(), chunk[0].clone()));
        }
        freq.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let expected: std::collections::BTreeSet<String> = freq.into_iter().take(100).map(|(_, t)| t).collect();
        let got: std::collections::BTreeSet<String> = t.truth.keys().cloned().collect();
        assert_eq!(got, expected);

        let (tag, table) = t.truth.iter().next().unwrap();
        for p in ds.photos() {
            assert_eq!(table[&p.photo_id] > 0, p.tags.contains(tag));
        }
    }

    #[test]
    fn groups_target_masks_groups() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_photos: 100,
            ..Default::default()
        })
        .unwrap();
        let t = select_targets(&ds, TargetKind::Groups, 3).unwrap();
        assert!(t.mask.excluded_kinds.contains(&FeatureKind::Group));
        assert!(t.mask.masked_edges[EDGE_GROUPS]);
        assert_eq!(t.mask.masked_edges.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn labels_without_file_is_error() {
        let ds = Dataset::default();
        assert!(select_targets(&ds, TargetKind::Labels, 1).is_err());
        assert!(select_targets(&ds, TargetKind::Tags, 0).is_err());
    }
}
