//! The joint labeling model: photos are nodes carrying sparse indicator
//! features, relational edges carry a fixed-width nonnegative feature vector,
//! and a [`CategoryModel`] scores a full ±1 labeling of the network.

mod inference;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inference::{
    build_flow_network, clamp_bias, infer_clamped, map_infer, map_infer_augmented, map_infer_fixed,
    solve_binary,
};

/// Width of the relational edge feature vector.
pub const EDGE_DIM: usize = 7;

pub type EdgeFeatures = [f64; EDGE_DIM];

/// A ±1 assignment over all nodes of a graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct Labeling(Vec<i8>);

impl Labeling {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidLabel(bad as i64));
        }
        Ok(Self(values))
    }

    pub fn uniform(len: usize, label: i8) -> Result<Self> {
        Self::new(vec![label; len])
    }

    /// `true` maps to +1.
    pub fn from_bools(positive: &[bool]) -> Self {
        Self(positive.iter().map(|&p| if p { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.0[i] > 0
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.0.iter().copied()
    }

    pub fn positives(&self) -> usize {
        self.0.iter().filter(|&&v| v > 0).count()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|&v| -v).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }
}

impl TryFrom<Vec<i8>> for Labeling {
    type Error = Error;

    fn try_from(values: Vec<i8>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Labeling> for Vec<i8> {
    fn from(l: Labeling) -> Self {
        l.0
    }
}

/// Sparse nonnegative vector, entries sorted by index without duplicates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct SparseVector(Vec<(u32, f64)>);

impl SparseVector {
    pub fn new(mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidGraph(format!(
                    "duplicate sparse index {}",
                    w[0].0
                )));
            }
        }
        if let Some(&(i, v)) = entries.iter().find(|e| !(e.1.is_finite() && e.1 >= 0.0)) {
            return Err(Error::InvalidGraph(format!(
                "feature {i} has invalid value {v}; node features must be nonnegative"
            )));
        }
        Ok(Self(entries))
    }

    /// Indicator vector over the given indices.
    pub fn indicator(indices: impl IntoIterator<Item = u32>) -> Self {
        let mut idx: Vec<u32> = indices.into_iter().collect();
        idx.sort_unstable();
        idx.dedup();
        Self(idx.into_iter().map(|i| (i, 1.0)).collect())
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn nnz(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.0.last().map(|e| e.0)
    }

    pub fn scatter_add(&self, scale: f64, dense: &mut [f64]) {
        for &(i, v) in &self.0 {
            dense[i as usize] += scale * v;
        }
    }
}

impl TryFrom<Vec<(u32, f64)>> for SparseVector {
    type Error = Error;

    fn try_from(v: Vec<(u32, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SparseVector> for Vec<(u32, f64)> {
    fn from(v: SparseVector) -> Self {
        v.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub features: SparseVector,
}

/// An undirected relational edge, stored with `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub features: EdgeFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct InstanceGraph {
    node_dim: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawGraph {
    node_dim: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for InstanceGraph {
    type Error = Error;

    fn try_from(r: RawGraph) -> Result<Self> {
        Self::new(r.node_dim, r.nodes, r.edges)
    }
}

impl InstanceGraph {
    pub fn new(node_dim: usize, nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self> {
        for n in &nodes {
            if let Some(max) = n.features.max_index() {
                if max as usize >= node_dim {
                    return Err(Error::Dimension {
                        what: "node feature index",
                        expected: node_dim,
                        actual: max as usize + 1,
                    });
                }
            }
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &mut edges {
            if e.i == e.j {
                return Err(Error::InvalidGraph(format!("self-edge at node {}", e.i)));
            }
            if e.i.max(e.j) >= nodes.len() {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a missing node",
                    e.i, e.j
                )));
            }
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            if !seen.insert((e.i, e.j)) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    e.i, e.j
                )));
            }
            if e.features.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has a negative or non-finite feature",
                    e.i, e.j
                )));
            }
        }
        Ok(Self {
            node_dim,
            nodes,
            edges,
        })
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn without_edges(&self) -> Self {
        Self {
            node_dim: self.node_dim,
            nodes: self.nodes.clone(),
            edges: Vec::new(),
        }
    }

    /// The subgraph on `keep` (in that order), retaining edges with both ends kept.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Self {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = keep.iter().map(|&i| self.nodes[i].clone()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.i] != usize::MAX && remap[e.j] != usize::MAX)
            .map(|e| {
                let (a, b) = (remap[e.i], remap[e.j]);
                Edge {
                    i: a.min(b),
                    j: a.max(b),
                    features: e.features,
                }
            })
            .collect();
        Self {
            node_dim: self.node_dim,
            nodes,
            edges,
        }
    }

    /// First-order scores ⟨φ(x_i), θ_node⟩.
    pub fn unary_weights(&self, model: &CategoryModel) -> Result<Vec<f64>> {
        model.check_compatible(self)?;
        Ok(self
            .nodes
            .iter()
            .map(|n| n.features.dot(model.theta_node()))
            .collect())
    }

    /// Agreement weights ⟨φ(x_i, x_j), θ_edge⟩, one per edge.
    pub fn edge_weights(&self, model: &CategoryModel) -> Result<Vec<f64>> {
        model.check_compatible(self)?;
        let t = model.theta_edge();
        Ok(self
            .edges
            .iter()
            .map(|e| e.features.iter().zip(t).map(|(f, w)| f * w).sum())
            .collect())
    }
}

/// Parameters for one category. Edge weights are nonnegative at all times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct CategoryModel {
    category_id: String,
    theta_node: Vec<f64>,
    theta_edge: EdgeFeatures,
}

#[derive(Deserialize)]
struct RawModel {
    category_id: String,
    theta_node: Vec<f64>,
    theta_edge: EdgeFeatures,
}

impl TryFrom<RawModel> for CategoryModel {
    type Error = Error;

    fn try_from(r: RawModel) -> Result<Self> {
        Self::new(r.category_id, r.theta_node, r.theta_edge)
    }
}

impl CategoryModel {
    pub fn new(
        category_id: impl Into<String>,
        theta_node: Vec<f64>,
        theta_edge: EdgeFeatures,
    ) -> Result<Self> {
        if let Some((index, &value)) = theta_edge
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::NegativeEdgeWeight { index, value });
        }
        if theta_node.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite node weight".into()));
        }
        Ok(Self {
            category_id: category_id.into(),
            theta_node,
            theta_edge,
        })
    }

    pub fn zeros(category_id: impl Into<String>, node_dim: usize) -> Self {
        Self {
            category_id: category_id.into(),
            theta_node: vec![0.0; node_dim],
            theta_edge: [0.0; EDGE_DIM],
        }
    }

    pub fn category_id(&self) -> &str {
        &self.category_id
    }

    pub fn theta_node(&self) -> &[f64] {
        &self.theta_node
    }

    pub fn theta_edge(&self) -> &EdgeFeatures {
        &self.theta_edge
    }

    pub fn with_edge_weights_zeroed(&self) -> Self {
        Self {
            theta_edge: [0.0; EDGE_DIM],
            ..self.clone()
        }
    }

    /// Multiplies all parameters by `alpha >= 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.category_id.clone(),
            self.theta_node.iter().map(|v| v * alpha).collect(),
            self.theta_edge.map(|v| v * alpha),
        )
    }

    pub fn check_compatible(&self, graph: &InstanceGraph) -> Result<()> {
        if self.theta_node.len() != graph.node_dim() {
            return Err(Error::Dimension {
                what: "node parameters",
                expected: graph.node_dim(),
                actual: self.theta_node.len(),
            });
        }
        Ok(())
    }
}

fn check_labeling(graph: &InstanceGraph, labeling: &Labeling) -> Result<()> {
    if labeling.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "labeling",
            expected: graph.node_count(),
            actual: labeling.len(),
        });
    }
    Ok(())
}

/// Σ_i y_i·w_i + Σ_(i,j) δ(y_i = y_j)·w_ij.
pub fn joint_score(graph: &InstanceGraph, model: &CategoryModel, labeling: &Labeling) -> Result<f64> {
    check_labeling(graph, labeling)?;
    let unary = graph.unary_weights(model)?;
    let pairwise = graph.edge_weights(model)?;
    let node_term: f64 = unary
        .iter()
        .zip(labeling.iter())
        .map(|(w, y)| y as f64 * w)
        .sum();
    let edge_term: f64 = graph
        .edges()
        .iter()
        .zip(&pairwise)
        .filter(|(e, _)| labeling.get(e.i) == labeling.get(e.j))
        .map(|(_, w)| w)
        .sum();
    Ok(node_term + edge_term)
}

/// Φ(X, Y): node block Σ y_i φ(x_i) followed by edge block Σ δ(y_i = y_j) φ(x_i, x_j).
pub fn aggregate_features(graph: &InstanceGraph, labeling: &Labeling) -> Result<Vec<f64>> {
    check_labeling(graph, labeling)?;
    let d = graph.node_dim();
    let mut out = vec![0.0; d + EDGE_DIM];
    for (node, y) in graph.nodes().iter().zip(labeling.iter()) {
        node.features.scatter_add(y as f64, &mut out[..d]);
    }
    for e in graph.edges() {
        if labeling.get(e.i) == labeling.get(e.j) {
            for (o, f) in out[d..].iter_mut().zip(&e.features) {
                *o += f;
            }
        }
    }
    Ok(out)
}
