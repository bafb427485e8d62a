//! Metadata to model inputs: tokenization, vocabularies, node indicator
//! vectors, relational edge features and instance-graph assembly.

mod graph;
mod tokenize;
mod vocab;

pub use graph::{
    build_edges, build_instance_graph, edge_features, FeatureMask, GraphConfig, EDGE_CONTACT,
    EDGE_GALLERIES, EDGE_GROUPS, EDGE_LOCATION, EDGE_PROPERTIES, EDGE_SETS, EDGE_TAGS, EDGE_USER,
};
pub use tokenize::{stopwords, tokenize};
pub use vocab::{
    build_vocabulary, node_features, FeatureKind, Provenance, VocabEntry, Vocabulary,
    VocabularyConfig,
};
