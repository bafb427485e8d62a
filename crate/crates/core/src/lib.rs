//! Joint binary labeling of photo networks.
//!
//! Each category gets a pairwise model over the photo graph whose edge
//! weights are kept nonnegative, so exact MAP labelings come from a single
//! s-t min cut. Models are learned by max-margin training under the balanced
//! error rate.

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod learning;
pub mod maxflow;
pub mod model_file;
pub mod mrf;
pub mod oracle;
pub mod pipeline;

pub use error::{Error, Result};
pub use mrf::{
    joint_score, map_infer, CategoryModel, Edge, EdgeFeatures, InstanceGraph, Labeling, Node,
    SparseVector, EDGE_DIM,
};
pub use model_file::ModelFile;
