//! Fixtures shared by the benchmarks.

use netlabel_core::data::{generate_synthetic, select_targets, Dataset, SyntheticSpec, TargetKind, Targets};
use netlabel_core::oracle::random_sparse_instance;
use netlabel_core::{CategoryModel, InstanceGraph};

pub const SEED: u64 = 0xBE7C;

/// A sparse graph with `nodes` nodes and about ten edges per node.
pub fn inference_fixture(nodes: usize) -> (InstanceGraph, CategoryModel) {
    random_sparse_instance(nodes, nodes * 10, 1000, SEED)
}

/// A small synthetic dataset and its label targets.
pub fn dataset_fixture(photos: usize) -> (Dataset, Targets) {
    let spec = SyntheticSpec {
        n_photos: photos,
        n_categories: 2,
        seed: SEED,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec).expect("valid spec");
    let targets = select_targets(&ds, TargetKind::Labels, 1).expect("labels present");
    (ds, targets)
}
