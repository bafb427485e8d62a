use super::{CategoryModel, InstanceGraph, Labeling};
use crate::error::{Error, Result};
use crate::maxflow::{max_flow, FlowNetwork, Vertex};

/// Builds the s-t network whose minimum cut maximizes
/// Σ y_i·w_i + Σ δ(y_i = y_j)·w_ij.
///
/// Labeling node `i` with −1 costs `2·w_i` relative to +1 (source arc when
/// `w_i > 0`, sink arc when `w_i < 0`), and each edge costs `w_ij` when its
/// ends disagree. Source side means +1.
pub fn build_flow_network(unary: &[f64], edges: &[(usize, usize, f64)]) -> Result<FlowNetwork> {
    let mut net = FlowNetwork::with_capacity(unary.len(), unary.len() + edges.len());
    for (i, &w) in unary.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::InvalidGraph(format!("non-finite unary weight at node {i}")));
        }
        if w > 0.0 {
            net.add_arc(Vertex::Source, Vertex::Node(i), 2.0 * w)?;
        } else if w < 0.0 {
            net.add_arc(Vertex::Node(i), Vertex::Sink, -2.0 * w)?;
        }
    }
    for (k, &(i, j, w)) in edges.iter().enumerate() {
        // f(-1,-1) + f(+1,+1) - f(-1,+1) - f(+1,-1) = 2·w_ij
        if !(w >= 0.0) {
            return Err(Error::NegativeEdgeWeight { index: k, value: w });
        }
        net.add_edge(i, j, w, w)?;
    }
    Ok(net)
}

/// Exact maximizer of Σ y_i·w_i + Σ δ(y_i = y_j)·w_ij for nonnegative `w_ij`.
/// Nodes not reachable from the source in the final residual graph get −1.
pub fn solve_binary(unary: &[f64], edges: &[(usize, usize, f64)]) -> Result<Labeling> {
    let net = build_flow_network(unary, edges)?;
    let cut = max_flow(&net)?;
    Ok(Labeling::from_bools(&cut.source_side))
}

fn weights(graph: &InstanceGraph, model: &CategoryModel) -> Result<(Vec<f64>, Vec<(usize, usize, f64)>)> {
    let unary = graph.unary_weights(model)?;
    let pairwise = graph.edge_weights(model)?;
    let edges = graph
        .edges()
        .iter()
        .zip(pairwise)
        .map(|(e, w)| (e.i, e.j, w))
        .collect();
    Ok((unary, edges))
}

/// MAP labeling of the joint model.
pub fn map_infer(graph: &InstanceGraph, model: &CategoryModel) -> Result<Labeling> {
    let (unary, edges) = weights(graph, model)?;
    solve_binary(&unary, &edges)
}

/// MAP labeling with an additive node-wise term: `bias[i] = (reward for −1,
/// reward for +1)`.
pub fn map_infer_augmented(
    graph: &InstanceGraph,
    model: &CategoryModel,
    bias: &[(f64, f64)],
) -> Result<Labeling> {
    if bias.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "node bias",
            expected: graph.node_count(),
            actual: bias.len(),
        });
    }
    let (mut unary, edges) = weights(graph, model)?;
    for (w, &(neg, pos)) in unary.iter_mut().zip(bias) {
        *w += 0.5 * (pos - neg);
    }
    solve_binary(&unary, &edges)
}

/// Bias pairs that force every observed node to its given label: the reward
/// exceeds the largest score change a single node can cause.
pub fn clamp_bias(
    graph: &InstanceGraph,
    model: &CategoryModel,
    observed: &[Option<i8>],
) -> Result<Vec<(f64, f64)>> {
    if observed.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "observed labels",
            expected: graph.node_count(),
            actual: observed.len(),
        });
    }
    let (unary, edges) = weights(graph, model)?;
    let total: f64 = unary.iter().map(|w| w.abs()).sum::<f64>()
        + edges.iter().map(|e| e.2).sum::<f64>();
    let big = 2.0 * total + 1.0;
    Ok(observed
        .iter()
        .map(|o| match o {
            Some(y) if *y > 0 => (0.0, big),
            Some(_) => (big, 0.0),
            None => (0.0, 0.0),
        })
        .collect())
}

/// MAP labeling with some nodes fixed to known labels; the free nodes are
/// labeled jointly given the fixed ones.
pub fn infer_clamped(
    graph: &InstanceGraph,
    model: &CategoryModel,
    observed: &[Option<i8>],
) -> Result<Labeling> {
    map_infer_fixed(graph, model, &vec![(0.0, 0.0); graph.node_count()], observed)
}

/// `map_infer_augmented` with the nodes in `fixed` held at their labels.
///
/// Fixed nodes are eliminated rather than clamped: each edge to a fixed node
/// becomes a unary term on its free end, so the cut only spans free nodes.
/// The result equals clamping with `clamp_bias` (the minimal minimum cut is
/// unique). `bias` is ignored on fixed nodes.
pub fn map_infer_fixed(
    graph: &InstanceGraph,
    model: &CategoryModel,
    bias: &[(f64, f64)],
    fixed: &[Option<i8>],
) -> Result<Labeling> {
    let n = graph.node_count();
    for (what, len) in [("node bias", bias.len()), ("observed labels", fixed.len())] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    let (unary, edges) = weights(graph, model)?;
    if let Some(i) = unary.iter().position(|w| !w.is_finite()) {
        return Err(Error::InvalidGraph(format!("non-finite unary weight at node {i}")));
    }
    if let Some(k) = edges.iter().position(|e| !(e.2 >= 0.0)) {
        return Err(Error::NegativeEdgeWeight {
            index: k,
            value: edges[k].2,
        });
    }
    let sign = |y: i8| if y > 0 { 1.0 } else { -1.0 };
    let mut index = vec![usize::MAX; n];
    let mut free_unary = Vec::new();
    for i in 0..n {
        if fixed[i].is_none() {
            index[i] = free_unary.len();
            free_unary.push(unary[i] + 0.5 * (bias[i].1 - bias[i].0));
        }
    }
    let mut free_edges = Vec::new();
    for &(i, j, w) in &edges {
        match (fixed[i], fixed[j]) {
            (None, None) => free_edges.push((index[i], index[j], w)),
            (None, Some(y)) => free_unary[index[i]] += 0.5 * w * sign(y),
            (Some(y), None) => free_unary[index[j]] += 0.5 * w * sign(y),
            (Some(_), Some(_)) => {}
        }
    }
    let free = solve_binary(&free_unary, &free_edges)?;
    let labels = (0..n)
        .map(|i| match fixed[i] {
            Some(y) => if y > 0 { 1 } else { -1 },
            None => free.get(index[i]),
        })
        .collect();
    Labeling::new(labels)
}
