use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::vocab::{node_features, FeatureKind, Vocabulary};
use crate::data::{PhotoRecord, UserTable};
use crate::error::Result;
use crate::mrf::{Edge, EdgeFeatures, InstanceGraph, Node, EDGE_DIM};

/// Names of the relational edge components, in order.
pub const EDGE_PROPERTIES: [&str; EDGE_DIM] = [
    "tags",
    "groups",
    "sets",
    "galleries",
    "location",
    "user",
    "contact",
];

pub const EDGE_TAGS: usize = 0;
pub const EDGE_GROUPS: usize = 1;
pub const EDGE_SETS: usize = 2;
pub const EDGE_GALLERIES: usize = 3;
pub const EDGE_LOCATION: usize = 4;
pub const EDGE_USER: usize = 5;
pub const EDGE_CONTACT: usize = 6;

/// Relational features of a photo pair: shared tag, group, set and gallery
/// counts, then same-location, same-uploader and contact indicators.
pub fn edge_features(a: &PhotoRecord, b: &PhotoRecord, users: &UserTable) -> EdgeFeatures {
    let shared = |x: &BTreeSet<String>, y: &BTreeSet<String>| x.intersection(y).count() as f64;
    let same_location = matches!((&a.location_id, &b.location_id), (Some(x), Some(y)) if x == y);
    let same_user = a.uploader_id == b.uploader_id;
    let contacts = users.are_contacts(&a.uploader_id, &b.uploader_id);
    [
        shared(&a.tags, &b.tags),
        shared(&a.groups, &b.groups),
        shared(&a.sets, &b.sets),
        shared(&a.galleries, &b.galleries),
        same_location as u8 as f64,
        same_user as u8 as f64,
        contacts as u8 as f64,
    ]
}

/// Feature families withheld from a model, e.g. tags when tags are the
/// prediction target.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub excluded_kinds: BTreeSet<FeatureKind>,
    pub masked_edges: [bool; EDGE_DIM],
}

impl FeatureMask {
    pub fn is_empty(&self) -> bool {
        self.excluded_kinds.is_empty() && !self.masked_edges.iter().any(|&m| m)
    }

    pub fn apply(&self, f: &mut EdgeFeatures) {
        for (v, &m) in f.iter_mut().zip(&self.masked_edges) {
            if m {
                *v = 0.0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Maximum number of edges kept; 0 means unlimited.
    pub edge_cap: usize,
    /// Property values shared by more photos than this create no edges; 0
    /// means unlimited.
    pub fanout_cap: usize,
    /// When false the graph is edgeless (flat models).
    pub relational: bool,
    pub mask: FeatureMask,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            edge_cap: 0,
            fanout_cap: 200,
            relational: true,
            mask: FeatureMask::default(),
        }
    }
}

fn within_cap(size: usize, cap: usize) -> bool {
    cap == 0 || size <= cap
}

/// Unordered pairs (i < j) sharing at least one unmasked property value whose
/// membership is within the fanout cap.
fn candidate_pairs<'a>(photos: &[&'a PhotoRecord], users: &UserTable, config: &GraphConfig) -> Vec<(u32, u32)> {
    let masked = &config.mask.masked_edges;
    let mut buckets: HashMap<(usize, &'a str), Vec<u32>> = HashMap::new();
    for (i, &p) in photos.iter().enumerate() {
        let i = i as u32;
        let mut add = |prop: usize, value: &'a str| buckets.entry((prop, value)).or_default().push(i);
        if !masked[EDGE_TAGS] {
            p.tags.iter().for_each(|v| add(EDGE_TAGS, v));
        }
        if !masked[EDGE_GROUPS] {
            p.groups.iter().for_each(|v| add(EDGE_GROUPS, v));
        }
        if !masked[EDGE_SETS] {
            p.sets.iter().for_each(|v| add(EDGE_SETS, v));
        }
        if !masked[EDGE_GALLERIES] {
            p.galleries.iter().for_each(|v| add(EDGE_GALLERIES, v));
        }
        if !masked[EDGE_LOCATION] {
            if let Some(loc) = &p.location_id {
                add(EDGE_LOCATION, loc);
            }
        }
        if !masked[EDGE_USER] || !masked[EDGE_CONTACT] {
            add(EDGE_USER, &p.uploader_id);
        }
    }

    let mut pairs = Vec::new();
    for ((prop, _), members) in &buckets {
        if *prop == EDGE_USER && masked[EDGE_USER] {
            continue;
        }
        if !within_cap(members.len(), config.fanout_cap) {
            continue;
        }
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }

    if !masked[EDGE_CONTACT] {
        // Keyed on the user whose contact list is expanded.
        for user in users.iter() {
            let Some(own) = buckets.get(&(EDGE_USER, user.user_id.as_str())) else {
                continue;
            };
            let theirs: Vec<&Vec<u32>> = user
                .contact_ids
                .iter()
                .filter_map(|c| buckets.get(&(EDGE_USER, c.as_str())))
                .collect();
            let size = own.len() + theirs.iter().map(|v| v.len()).sum::<usize>();
            if theirs.is_empty() || !within_cap(size, config.fanout_cap) {
                continue;
            }
            for &a in own {
                for &b in theirs.iter().flat_map(|v| v.iter()) {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
        }
    }

    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Relational edges over `photos` (indices follow the slice order). When
/// `edge_cap` is exceeded, edges with more nonzero components survive, then
/// larger feature sums, then smaller pair ids.
pub fn build_edges(photos: &[&PhotoRecord], users: &UserTable, config: &GraphConfig) -> Vec<Edge> {
    if !config.relational {
        return Vec::new();
    }
    let mut edges: Vec<Edge> = candidate_pairs(photos, users, config)
        .into_iter()
        .filter_map(|(i, j)| {
            let (i, j) = (i as usize, j as usize);
            let mut f = edge_features(photos[i], photos[j], users);
            config.mask.apply(&mut f);
            f.iter().any(|&v| v > 0.0).then_some(Edge { i, j, features: f })
        })
        .collect();

    if config.edge_cap > 0 && edges.len() > config.edge_cap {
        let nnz = |e: &Edge| e.features.iter().filter(|&&v| v > 0.0).count();
        let total = |e: &Edge| e.features.iter().sum::<f64>();
        edges.sort_by(|a, b| {
            nnz(b)
                .cmp(&nnz(a))
                .then_with(|| total(b).total_cmp(&total(a)))
                .then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
        });
        edges.truncate(config.edge_cap);
        edges.sort_by_key(|e| (e.i, e.j));
    }
    edges
}

/// Node features from `vocab` plus relational edges.
pub fn build_instance_graph(
    photos: &[&PhotoRecord],
    users: &UserTable,
    vocab: &Vocabulary,
    config: &GraphConfig,
) -> Result<InstanceGraph> {
    let nodes = photos
        .iter()
        .map(|p| Node {
            id: p.photo_id.clone(),
            features: node_features(p, vocab),
        })
        .collect();
    InstanceGraph::new(vocab.len(), nodes, build_edges(photos, users, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserRecord;

    fn photo(id: &str, user: &str) -> PhotoRecord {
        PhotoRecord {
            photo_id: id.into(),
            uploader_id: user.into(),
            ..Default::default()
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn users(ids: &[&str]) -> UserTable {
        ids.iter()
            .map(|u| UserRecord {
                user_id: u.to_string(),
                contact_ids: BTreeSet::new(),
            })
            .collect()
    }

    #[test]
    fn disjoint_metadata_gives_zero_features() {
        let a = photo("a", "u1");
        let b = photo("b", "u2");
        assert_eq!(edge_features(&a, &b, &users(&["u1", "u2"])), [0.0; EDGE_DIM]);
    }

    #[test]
    fn same_user_shared_tags_and_set() {
        let mut a = photo("a", "u");
        let mut b = photo("b", "u");
        a.tags = set(&["t1", "t2", "t3", "t4"]);
        b.tags = set(&["t1", "t2", "t3", "t5"]);
        a.sets = set(&["s1"]);
        b.sets = set(&["s1", "s2"]);
        a.galleries = set(&["g1"]);
        b.galleries = set(&["g2"]);
        let f = edge_features(&a, &b, &users(&["u"]));
        assert_eq!(f, [3.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn location_and_contacts() {
        let mut a = photo("a", "u1");
        let mut b = photo("b", "u2");
        a.location_id = Some("paris".into());
        b.location_id = Some("paris".into());
        let table: UserTable = [
            UserRecord {
                user_id: "u1".into(),
                contact_ids: set(&[]),
            },
            UserRecord {
                user_id: "u2".into(),
                contact_ids: set(&["u1"]),
            },
        ]
        .into_iter()
        .collect();
        assert_eq!(edge_features(&a, &b, &table), [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(edge_features(&b, &a, &table), edge_features(&a, &b, &table));
        b.location_id = None;
        assert_eq!(edge_features(&a, &b, &table)[EDGE_LOCATION], 0.0);
    }

    #[test]
    fn disjoint_photos_give_edgeless_graph() {
        let photos = [photo("a", "u1"), photo("b", "u2"), photo("c", "u3")];
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let g = build_instance_graph(&refs, &users(&["u1", "u2", "u3"]), &Vocabulary::default(), &GraphConfig::default())
            .unwrap();
        assert_eq!(g.node_count(), 3);
        assert!(g.edges().is_empty());
    }

    fn triangle() -> Vec<PhotoRecord> {
        let mut photos = vec![photo("a", "u1"), photo("b", "u2"), photo("c", "u3")];
        for p in &mut photos {
            p.groups = set(&["G"]);
        }
        photos[0].tags = set(&["x", "y"]);
        photos[2].tags = set(&["x", "y"]);
        photos
    }

    #[test]
    fn shared_group_forms_clique() {
        let photos = triangle();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let edges = build_edges(&refs, &users(&["u1", "u2", "u3"]), &GraphConfig::default());
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
        assert_eq!(pairs, [(0, 1), (0, 2), (1, 2)]);
        assert!(edges.iter().all(|e| e.features[EDGE_GROUPS] >= 1.0));
    }

    #[test]
    fn edge_cap_keeps_richest_edges() {
        let photos = triangle();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let config = GraphConfig {
            edge_cap: 1,
            ..Default::default()
        };
        let edges = build_edges(&refs, &users(&["u1", "u2", "u3"]), &config);
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].i, edges[0].j), (0, 2));
        assert_eq!(edges[0].features, [2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fanout_cap_suppresses_large_properties() {
        let photos = triangle();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let config = GraphConfig {
            fanout_cap: 2,
            ..Default::default()
        };
        // the group has 3 members; only the tag-sharing pair remains
        let edges = build_edges(&refs, &users(&["u1", "u2", "u3"]), &config);
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].i, edges[0].j), (0, 2));
    }

    #[test]
    fn masked_components_are_zeroed_and_do_not_create_edges() {
        let photos = triangle();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let mut mask = FeatureMask::default();
        mask.masked_edges[EDGE_GROUPS] = true;
        let config = GraphConfig {
            mask,
            ..Default::default()
        };
        let edges = build_edges(&refs, &users(&["u1", "u2", "u3"]), &config);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].features[EDGE_GROUPS], 0.0);
    }

    #[test]
    fn contact_edges_follow_contact_lists() {
        let photos = [photo("a", "u1"), photo("b", "u2"), photo("c", "u3")];
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let table: UserTable = [
            UserRecord {
                user_id: "u1".into(),
                contact_ids: set(&["u3"]),
            },
            UserRecord {
                user_id: "u2".into(),
                contact_ids: set(&[]),
            },
            UserRecord {
                user_id: "u3".into(),
                contact_ids: set(&[]),
            },
        ]
        .into_iter()
        .collect();
        let edges = build_edges(&refs, &table, &GraphConfig::default());
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].i, edges[0].j), (0, 2));
        assert_eq!(edges[0].features[EDGE_CONTACT], 1.0);
    }

    #[test]
    fn flat_config_builds_no_edges() {
        let photos = triangle();
        let refs: Vec<&PhotoRecord> = photos.iter().collect();
        let config = GraphConfig {
            relational: false,
            ..Default::default()
        };
        assert!(build_edges(&refs, &users(&["u1", "u2", "u3"]), &config).is_empty());
    }
}
