//! Exhaustive reference solvers and the randomized cross-check campaign.
//!
//! Enumeration is in reflected Gray-code order starting from the all −1
//! labeling (all nodes on the sink side); bit `i` of the code set means node
//! `i` is +1. The first labeling reaching the optimum wins ties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{ber_loss, check_truth, loss_augmented_argmax};
use crate::maxflow::{max_flow, FlowNetwork, Vertex};
use crate::mrf::{joint_score, map_infer, CategoryModel, Edge, InstanceGraph, Labeling, Node, SparseVector, EDGE_DIM};

/// Largest instance the exhaustive solvers accept.
pub const MAX_ORACLE_NODES: usize = 20;
/// Absolute tolerance for value agreement.
pub const VALUE_TOLERANCE: f64 = 1e-9;

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ORACLE_NODES {
        return Err(Error::TooLarge {
            size: n,
            cap: MAX_ORACLE_NODES,
        });
    }
    Ok(())
}

/// Maximizes `value` over all 2^n assignments in Gray-code order.
fn exhaustive(n: usize, mut value: impl FnMut(&[bool]) -> Result<f64>) -> Result<(Vec<bool>, f64)> {
    let mut bits = vec![false; n];
    let mut best = (bits.clone(), value(&bits)?);
    for k in 1u64..1 << n {
        bits[k.trailing_zeros() as usize] ^= true;
        let v = value(&bits)?;
        if v > best.1 {
            best = (bits.clone(), v);
        }
    }
    Ok(best)
}

pub fn brute_force_map(graph: &InstanceGraph, model: &CategoryModel) -> Result<(Labeling, f64)> {
    check_size(graph.node_count())?;
    model.check_compatible(graph)?;
    let (bits, v) = exhaustive(graph.node_count(), |b| {
        joint_score(graph, model, &Labeling::from_bools(b))
    })?;
    Ok((Labeling::from_bools(&bits), v))
}

pub fn brute_force_loss_augmented(
    graph: &InstanceGraph,
    model: &CategoryModel,
    truth: &Labeling,
) -> Result<(Labeling, f64)> {
    check_size(graph.node_count())?;
    model.check_compatible(graph)?;
    check_truth(truth)?;
    if truth.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "ground truth",
            expected: graph.node_count(),
            actual: truth.len(),
        });
    }
    let (bits, v) = exhaustive(graph.node_count(), |b| {
        let y = Labeling::from_bools(b);
        Ok(joint_score(graph, model, &y)? + ber_loss(&y, truth)?)
    })?;
    Ok((Labeling::from_bools(&bits), v))
}

/// Minimum capacity s-t cut over all source-side subsets of interior nodes.
pub fn brute_force_min_cut(net: &FlowNetwork) -> Result<(Vec<bool>, f64)> {
    check_size(net.node_count())?;
    let (bits, v) = exhaustive(net.node_count(), |b| Ok(-net.cut_capacity(b)))?;
    Ok((bits, -v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Map,
    LossAugmented,
    MaxFlow,
}

/// A self-contained instance that can be replayed with [`check_instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleInstance {
    Map {
        graph: InstanceGraph,
        model: CategoryModel,
    },
    LossAugmented {
        graph: InstanceGraph,
        model: CategoryModel,
        truth: Labeling,
    },
    MaxFlow {
        network: FlowNetwork,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instance: String,
    pub oracle_value: f64,
    pub solver_value: f64,
    pub agreement: bool,
    pub labeling_equal: bool,
}

pub fn check_instance(inst: &OracleInstance) -> Result<OracleReport> {
    let (desc, oracle_value, solver_value, labeling_equal) = match inst {
        OracleInstance::Map { graph, model } => {
            let (yo, vo) = brute_force_map(graph, model)?;
            let ys = map_infer(graph, model)?;
            let vs = joint_score(graph, model, &ys)?;
            (format!("map n={} e={}", graph.node_count(), graph.edges().len()), vo, vs, yo == ys)
        }
        OracleInstance::LossAugmented { graph, model, truth } => {
            let (yo, vo) = brute_force_loss_augmented(graph, model, truth)?;
            let (ys, vs) = loss_augmented_argmax(graph, model, truth)?;
            (
                format!("loss-augmented n={} e={}", graph.node_count(), graph.edges().len()),
                vo,
                vs,
                yo == ys,
            )
        }
        OracleInstance::MaxFlow { network } => {
            let (side, vo) = brute_force_min_cut(network)?;
            let flow = max_flow(network)?;
            (
                format!("max-flow n={} arcs={}", network.node_count(), network.arcs().len()),
                vo,
                flow.flow_value,
                side == flow.source_side,
            )
        }
    };
    Ok(OracleReport {
        instance: desc,
        oracle_value,
        solver_value,
        agreement: (oracle_value - solver_value).abs() <= VALUE_TOLERANCE,
        labeling_equal,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub instances: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Unary weights are drawn from [−weight_range, weight_range].
    pub weight_range: f64,
    /// Edge (or arc) weights are drawn from [0, edge_range].
    pub edge_range: f64,
    /// Probability that any given pair is connected.
    pub density: f64,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            instances: 1000,
            min_nodes: 2,
            max_nodes: 12,
            weight_range: 3.0,
            edge_range: 3.0,
            density: 0.5,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_nodes > self.max_nodes || self.max_nodes > MAX_ORACLE_NODES {
            return Err(Error::Config(format!(
                "node range {}..={} must be ordered and at most {MAX_ORACLE_NODES}",
                self.min_nodes, self.max_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!("density must be in [0,1], got {}", self.density)));
        }
        if !(self.weight_range >= 0.0 && self.edge_range >= 0.0) {
            return Err(Error::Config("weight ranges must be >= 0".into()));
        }
        Ok(())
    }
}

/// A random instance in which node `i` carries indicator feature `i`, so
/// theta_node holds the unary weights directly, and every edge weight sits in
/// a random edge-feature component.
pub fn random_model_instance(rng: &mut ChaCha8Rng, n: usize, cfg: &CampaignConfig) -> (InstanceGraph, CategoryModel) {
    let nodes = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            features: SparseVector::indicator([i as u32]),
        })
        .collect();
    let theta_node: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-1.0..=1.0) * cfg.weight_range)
        .collect();
    let theta_edge: [f64; EDGE_DIM] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(cfg.density) {
                let k = rng.random_range(0..EDGE_DIM);
                let mut features = [0.0; EDGE_DIM];
                features[k] = rng.random_range(0.0..=1.0) * cfg.edge_range / theta_edge[k].max(1e-3);
                edges.push(Edge { i, j, features });
            }
        }
    }
    let graph = InstanceGraph::new(n, nodes, edges).expect("valid random graph");
    let model = CategoryModel::new("oracle", theta_node, theta_edge).expect("nonnegative edge weights");
    (graph, model)
}

/// A seeded sparse instance for throughput tests: `n` nodes with 8 of
/// `node_dim` indicator features each, `m` distinct random edges (fewer when
/// `m` exceeds the number of pairs) with small shared counts.
pub fn random_sparse_instance(n: usize, m: usize, node_dim: usize, seed: u64) -> (InstanceGraph, CategoryModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let node_dim = node_dim.max(1);
    let nodes = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            features: SparseVector::indicator((0..8).map(|_| rng.random_range(0..node_dim as u32))),
        })
        .collect();
    let pairs = n.saturating_mul(n.saturating_sub(1)) / 2;
    let m = m.min(pairs);
    let mut seen = std::collections::HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let mut features = [0.0; EDGE_DIM];
        features[rng.random_range(0..EDGE_DIM)] = rng.random_range(1..=3) as f64;
        edges.push(Edge {
            i: a.min(b),
            j: a.max(b),
            features,
        });
    }
    let theta_node = (0..node_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let theta_edge = std::array::from_fn(|_| rng.random_range(0.0..=0.5));
    let graph = InstanceGraph::new(node_dim, nodes, edges).expect("valid random graph");
    let model = CategoryModel::new("throughput", theta_node, theta_edge).expect("nonnegative edge weights");
    (graph, model)
}

/// A random non-degenerate truth of length `n >= 2`.
pub fn random_truth(rng: &mut ChaCha8Rng, n: usize) -> Labeling {
    loop {
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let pos = bits.iter().filter(|&&b| b).count();
        if pos > 0 && pos < n {
            return Labeling::from_bools(&bits);
        }
    }
}

pub fn random_network(rng: &mut ChaCha8Rng, n: usize, cfg: &CampaignConfig) -> FlowNetwork {
    let mut net = FlowNetwork::new(n);
    let cap = |rng: &mut ChaCha8Rng| rng.random_range(0.0..=1.0) * cfg.edge_range;
    let add = |net: &mut FlowNetwork, rng: &mut ChaCha8Rng, from, to| {
        if rng.random_bool(cfg.density) {
            let c = cap(rng);
            net.add_arc(from, to, c).expect("valid random arc");
        }
    };
    add(&mut net, rng, Vertex::Source, Vertex::Sink);
    for i in 0..n {
        add(&mut net, rng, Vertex::Source, Vertex::Node(i));
        add(&mut net, rng, Vertex::Node(i), Vertex::Sink);
        for j in 0..n {
            if i != j {
                add(&mut net, rng, Vertex::Node(i), Vertex::Node(j));
            }
        }
    }
    net
}

/// Draws the `index`-th campaign instance; each instance has its own stream
/// so any one can be regenerated alone.
pub fn campaign_instance(kind: OracleKind, cfg: &CampaignConfig, index: usize) -> OracleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let lo = match kind {
        OracleKind::LossAugmented => cfg.min_nodes.max(2),
        _ => cfg.min_nodes,
    };
    let n = rng.random_range(lo..=cfg.max_nodes.max(lo));
    match kind {
        OracleKind::Map => {
            let (graph, model) = random_model_instance(&mut rng, n, cfg);
            OracleInstance::Map { graph, model }
        }
        OracleKind::LossAugmented => {
            let (graph, model) = random_model_instance(&mut rng, n, cfg);
            let truth = random_truth(&mut rng, n);
            OracleInstance::LossAugmented { graph, model, truth }
        }
        OracleKind::MaxFlow => OracleInstance::MaxFlow {
            network: random_network(&mut rng, n, cfg),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub kind: OracleKind,
    pub checked: usize,
    pub agreed: usize,
    pub labelings_equal: usize,
    /// Instances whose values disagreed, replayable with [`check_instance`].
    pub failures: Vec<(OracleReport, OracleInstance)>,
}

impl CampaignResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.agreed == self.checked
    }
}

pub fn run_campaign(kind: OracleKind, cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let mut res = CampaignResult {
        kind,
        checked: 0,
        agreed: 0,
        labelings_equal: 0,
        failures: Vec::new(),
    };
    for index in 0..cfg.instances {
        let inst = campaign_instance(kind, cfg, index);
        let report = check_instance(&inst)?;
        res.checked += 1;
        res.labelings_equal += report.labeling_equal as usize;
        if report.agreement {
            res.agreed += 1;
        } else {
            res.failures.push((report, inst));
        }
    }
    Ok(res)
}
