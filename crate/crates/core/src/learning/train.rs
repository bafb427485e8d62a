use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ber_loss, check_truth, loss_augmented_argmax_with_context};
use super::qp::{restricted_qp_solve, Constraint, CuttingPlaneState};
use crate::error::{Error, Result};
use crate::mrf::{
    aggregate_features, infer_clamped, CategoryModel, EdgeFeatures, InstanceGraph,
    Labeling, EDGE_DIM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Node features plus relational edges.
    Graphical,
    /// Independent per-photo classifier over tag indicators.
    FlatTagsOnly,
    /// Independent classifier over all metadata encoded as indicators.
    FlatAllFeatures,
}

impl TrainMode {
    pub fn is_flat(self) -> bool {
        self != TrainMode::Graphical
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Graphical => "graphical",
            TrainMode::FlatTagsOnly => "flat-tags-only",
            TrainMode::FlatAllFeatures => "flat-all-features",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Relative gap at which training stops.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub mode: TrainMode,
    /// Share of training nodes held at their true labels as relational
    /// context while the rest are fit (graphs with edges only; 0 disables).
    pub context_fraction: f64,
    pub context_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            epsilon: 1e-3,
            max_iterations: 200,
            mode: TrainMode::Graphical,
            context_fraction: 0.8,
            context_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.context_fraction) {
            return Err(Error::Config(format!(
                "context_fraction must be in [0, 1), got {}",
                self.context_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub violation: f64,
    pub train_ber: f64,
    pub min_theta_edge: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn final_gap(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, |r| r.upper_bound - r.lower_bound)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lower_bound,upper_bound,violation,train_ber\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.lower_bound, r.upper_bound, r.violation, r.train_ber
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub model: CategoryModel,
    pub trace: TrainingTrace,
}

/// Stratified seeded choice of context nodes; empty when the graph has no
/// edges or a class is too small to spare a member.
fn context_mask(graph: &InstanceGraph, truth: &Labeling, config: &TrainConfig) -> Vec<bool> {
    let n = truth.len();
    let mut mask = vec![false; n];
    if graph.edges().is_empty() || config.context_fraction == 0.0 {
        return mask;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.context_seed);
    for class in [1i8, -1] {
        let mut members: Vec<usize> = (0..n).filter(|&i| truth.get(i) == class).collect();
        let k = (members.len() as f64 * config.context_fraction).round() as usize;
        let k = k.min(members.len().saturating_sub(1));
        members.shuffle(&mut rng);
        for &i in &members[..k] {
            mask[i] = true;
        }
    }
    mask
}

fn norm_sq(node: &[f64], edge: &EdgeFeatures) -> f64 {
    node.iter().chain(edge).map(|v| v * v).sum()
}

/// Max-margin training by constraint generation.
///
/// Scores inside the learner are divided by the number of fitted nodes, so λ
/// trades the balanced error against a per-node margin and does not depend on
/// the size of the training graph. MAP predictions are invariant to that
/// scaling.
///
/// On graphs with edges a seeded share of the nodes (`context_fraction`) is
/// held at its true labels and the rest are fit given them, the same
/// situation prediction faces with training photos clamped.
pub fn train_category(
    category_id: &str,
    graph: &InstanceGraph,
    truth: &Labeling,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    check_truth(truth)?;
    if truth.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "ground truth",
            expected: graph.node_count(),
            actual: truth.len(),
        });
    }
    let d = graph.node_dim();
    let context = context_mask(graph, truth, config);
    let fitted: Vec<usize> = (0..truth.len()).filter(|&i| !context[i]).collect();
    let fitted_truth = truth.select(&fitted);
    let observed: Vec<Option<i8>> = truth
        .iter()
        .zip(&context)
        .map(|(t, &c)| c.then_some(t))
        .collect();
    let scale = 1.0 / fitted.len() as f64;
    let phi_truth = aggregate_features(graph, truth)?;

    let mut state = CuttingPlaneState::new(d);
    let mut theta_node = vec![0.0; d];
    let mut theta_edge = [0.0; EDGE_DIM];
    let mut lower = 0.0f64;
    let mut best: Option<(f64, Vec<f64>, EdgeFeatures)> = None;
    let mut trace = TrainingTrace::default();

    for iteration in 1..=config.max_iterations {
        let current = CategoryModel::new(category_id, theta_node.clone(), theta_edge)?;
        let scaled = current.scaled(scale)?;
        let (worst, value) = loss_augmented_argmax_with_context(graph, &scaled, truth, &context)?;
        let truth_score: f64 = phi_truth[..d]
            .iter()
            .zip(&theta_node)
            .chain(phi_truth[d..].iter().zip(&theta_edge))
            .map(|(f, t)| f * t)
            .sum::<f64>()
            * scale;
        let violation = (value - truth_score).max(0.0);
        let upper = config.lambda * norm_sq(&theta_node, &theta_edge) + violation;
        if best.as_ref().is_none_or(|b| upper < b.0) {
            best = Some((upper, theta_node.clone(), theta_edge));
        }
        let best_upper = best.as_ref().map_or(upper, |b| b.0);
        let fit = infer_clamped(graph, &current, &observed)?;
        let train_ber = ber_loss(&fit.select(&fitted), &fitted_truth)?;
        trace.rows.push(TraceRow {
            iteration,
            lower_bound: lower,
            upper_bound: best_upper,
            violation,
            train_ber,
            min_theta_edge: theta_edge.iter().copied().fold(f64::INFINITY, f64::min),
        });
        if best_upper - lower <= config.epsilon * best_upper.max(1.0) {
            trace.converged = true;
            break;
        }

        let phi_worst = aggregate_features(graph, &worst)?;
        let diff: Vec<f64> = phi_truth.iter().zip(&phi_worst).map(|(a, b)| (a - b) * scale).collect();
        state.add(Constraint {
            node: diff[..d].to_vec(),
            edge: std::array::from_fn(|e| diff[d + e]),
            loss: ber_loss(&worst.select(&fitted), &fitted_truth)?,
        })?;
        let tol = 0.1 * config.epsilon * best_upper.max(1.0);
        let sol = restricted_qp_solve(&mut state, config.lambda, tol)?;
        debug_assert!(sol.theta_edge.iter().all(|&t| t >= 0.0));
        theta_node = sol.theta_node;
        theta_edge = sol.theta_edge;
        lower = lower.max(sol.dual);
    }

    if !trace.converged {
        log::warn!(
            "category {category_id}: no convergence after {} iterations (gap {:.3e})",
            config.max_iterations,
            trace.final_gap()
        );
    }
    let (_, node, edge) = best.expect("at least one iteration");
    Ok(Trained {
        model: CategoryModel::new(category_id, node, edge)?,
        trace,
    })
}

/// The regularized objective λ‖Θ‖² + max(0, H(Θ)) that [`train_category`]
/// minimizes, evaluated at `model`.
pub fn training_objective(
    graph: &InstanceGraph,
    truth: &Labeling,
    config: &TrainConfig,
    model: &CategoryModel,
) -> Result<f64> {
    check_truth(truth)?;
    let context = context_mask(graph, truth, config);
    let fitted = context.iter().filter(|&&c| !c).count();
    let scaled = model.scaled(1.0 / fitted as f64)?;
    let (_, value) = loss_augmented_argmax_with_context(graph, &scaled, truth, &context)?;
    let truth_score = crate::mrf::joint_score(graph, &scaled, truth)?;
    Ok(config.lambda * norm_sq(model.theta_node(), model.theta_edge()) + (value - truth_score).max(0.0))
}

/// The independent per-photo model: the same learner on the edgeless graph.
pub fn train_flat(
    category_id: &str,
    graph: &InstanceGraph,
    truth: &Labeling,
    config: &TrainConfig,
) -> Result<Trained> {
    train_category(category_id, &graph.without_edges(), truth, config)
}

/// Dispatches on `config.mode`.
pub fn train(category_id: &str, graph: &InstanceGraph, truth: &Labeling, config: &TrainConfig) -> Result<Trained> {
    if config.mode.is_flat() {
        train_flat(category_id, graph, truth, config)
    } else {
        train_category(category_id, graph, truth, config)
    }
}

/// The default regularization grid.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// (λ, held-out balanced error) per grid point.
    pub scores: Vec<(f64, f64)>,
}

/// Picks λ by balanced error on a seeded 20% hold-out of the training graph.
/// The remaining 80% is fit, then the full graph is labeled with the fitted
/// nodes fixed to their labels. Ties go to the larger λ. Falls back to
/// `config.lambda` when either part would be single-class.
pub fn select_lambda(
    category_id: &str,
    graph: &InstanceGraph,
    truth: &Labeling,
    config: &TrainConfig,
    grid: &[f64],
    seed: u64,
) -> Result<LambdaSelection> {
    let n = graph.node_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n / 5;
    let (holdout, fit) = order.split_at(held);
    let mut fit = fit.to_vec();
    fit.sort_unstable();
    let mut holdout = holdout.to_vec();
    holdout.sort_unstable();

    let fit_truth = truth.select(&fit);
    let hold_truth = truth.select(&holdout);
    if grid.is_empty() || check_truth(&fit_truth).is_err() || check_truth(&hold_truth).is_err() {
        return Ok(LambdaSelection {
            lambda: config.lambda,
            scores: Vec::new(),
        });
    }
    let fit_graph = graph.induced_subgraph(&fit);
    let mut observed = vec![None; n];
    for &i in &fit {
        observed[i] = Some(truth.get(i));
    }

    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        let trained = train(category_id, &fit_graph, &fit_truth, &cfg)?;
        let model = if cfg.mode.is_flat() {
            trained.model.with_edge_weights_zeroed()
        } else {
            trained.model
        };
        let full = infer_clamped(graph, &model, &observed)?;
        scores.push((lambda, ber_loss(&full.select(&holdout), &hold_truth)?));
    }
    let lambda = scores
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(l, e)| match acc {
            Some((bl, be)) if e > be || (e == be && l < bl) => Some((bl, be)),
            _ => Some((l, e)),
        })
        .map(|(l, _)| l)
        .unwrap_or(config.lambda);
    Ok(LambdaSelection { lambda, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::map_infer;
    use crate::mrf::test_support::weighted;
    use crate::mrf::{Edge, Node, SparseVector};

    fn lab(v: &[i8]) -> Labeling {
        Labeling::new(v.to_vec()).unwrap()
    }

    /// Node i carries feature (truth_i > 0 ? 0 : 1) plus noise feature 2.
    fn separable(truth: &[i8]) -> InstanceGraph {
        let nodes = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| Node {
                id: i.to_string(),
                features: SparseVector::indicator([if t > 0 { 0 } else { 1 }, 2]),
            })
            .collect();
        InstanceGraph::new(3, nodes, Vec::new()).unwrap()
    }

    #[test]
    fn separable_instance_reaches_zero_training_error() {
        let truth = lab(&[1, -1, -1, 1, -1]);
        let g = separable(truth.as_slice());
        let trained = train_category("c", &g, &truth, &TrainConfig::default()).unwrap();
        assert!(trained.trace.converged);
        let y = map_infer(&g, &trained.model).unwrap();
        assert_eq!(ber_loss(&y, &truth).unwrap(), 0.0);
    }

    #[test]
    fn single_discriminative_feature() {
        // two nodes; only node 0 has the feature; truth (+1, -1)
        let nodes = vec![
            Node {
                id: "a".into(),
                features: SparseVector::indicator([0]),
            },
            Node {
                id: "b".into(),
                features: SparseVector::default(),
            },
        ];
        let g = InstanceGraph::new(1, nodes, Vec::new()).unwrap();
        let truth = lab(&[1, -1]);
        let trained = train_category("c", &g, &truth, &TrainConfig::default()).unwrap();
        assert!(trained.model.theta_node()[0] > 0.0);
        assert_eq!(map_infer(&g, &trained.model).unwrap(), truth);
    }

    #[test]
    fn trace_is_a_valid_bound_sandwich() {
        let truth = lab(&[1, -1, 1, 1, -1, -1, 1, -1]);
        let (g, _) = weighted(
            &[0.0; 8],
            &[(0, 2, 1.0), (2, 3, 1.0), (1, 4, 1.0), (4, 5, 2.0), (6, 7, 1.0), (3, 6, 0.5)],
        );
        let trained = train_category("c", &g, &truth, &TrainConfig::default()).unwrap();
        let rows = &trained.trace.rows;
        assert!(!rows.is_empty());
        for w in rows.windows(2) {
            assert!(w[1].lower_bound >= w[0].lower_bound);
        }
        for r in rows {
            assert!(r.upper_bound >= r.lower_bound - 1e-9);
            assert!(r.min_theta_edge >= 0.0);
        }
        assert!(trained.model.theta_edge().iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn flat_equals_graphical_without_edges() {
        let truth = lab(&[1, -1, -1, 1, -1, 1]);
        let g = separable(truth.as_slice());
        let cfg = TrainConfig::default();
        let a = train_category("c", &g, &truth, &cfg).unwrap();
        let b = train_flat("c", &g, &truth, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn featureless_flat_model_predicts_negative() {
        let nodes = (0..4)
            .map(|i| Node {
                id: i.to_string(),
                features: SparseVector::default(),
            })
            .collect();
        let g = InstanceGraph::new(2, nodes, Vec::new()).unwrap();
        let truth = lab(&[1, -1, 1, -1]);
        let cfg = TrainConfig {
            mode: TrainMode::FlatTagsOnly,
            ..Default::default()
        };
        let trained = train("c", &g, &truth, &cfg).unwrap();
        assert_eq!(map_infer(&g, &trained.model).unwrap(), lab(&[-1; 4]));
    }

    #[test]
    fn relational_signal_gets_positive_edge_weight() {
        // Pairs joined by component 3 share labels; component 0 joins
        // disagreeing pairs. Only even nodes carry an informative feature.
        let truth_v: Vec<i8> = (0..12).map(|i| if (i / 2) % 2 == 0 { 1 } else { -1 }).collect();
        let truth = lab(&truth_v);
        let nodes: Vec<Node> = (0..12)
            .map(|i| Node {
                id: i.to_string(),
                features: SparseVector::indicator([match (i % 2, truth_v[i] > 0) {
                    (0, true) => 0,
                    (0, false) => 1,
                    _ => 2,
                }]),
            })
            .collect();
        let mut edges = Vec::new();
        for p in 0..6 {
            let mut f = [0.0; EDGE_DIM];
            f[3] = 1.0;
            edges.push(Edge { i: 2 * p, j: 2 * p + 1, features: f });
        }
        for (i, j) in [(0, 3), (4, 7), (8, 11), (1, 10)] {
            let mut f = [0.0; EDGE_DIM];
            f[0] = 1.0;
            edges.push(Edge { i, j, features: f });
        }
        let g = InstanceGraph::new(3, nodes, edges).unwrap();
        let trained = train_category("c", &g, &truth, &TrainConfig::default()).unwrap();
        let t = trained.model.theta_edge();
        assert!(t[3] > 0.0);
        assert!(t[3] >= t.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn parameter_norm_shrinks_with_lambda() {
        let truth = lab(&[1, -1, 1, 1, -1, -1, 1, -1, 1, -1]);
        let nodes = (0..10)
            .map(|i| Node {
                id: i.to_string(),
                features: SparseVector::indicator([(i % 4) as u32, 4 + (i % 3) as u32]),
            })
            .collect();
        let g = InstanceGraph::new(7, nodes, Vec::new()).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let cfg = TrainConfig {
                lambda,
                epsilon: 1e-6,
                max_iterations: 500,
                ..Default::default()
            };
            let m = train_category("c", &g, &truth, &cfg).unwrap().model;
            let norm = norm_sq(m.theta_node(), m.theta_edge()).sqrt();
            assert!(norm <= prev * (1.0 + 1e-3) + 1e-9, "λ={lambda}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn degenerate_truth_is_rejected() {
        let truth = lab(&[1, 1, 1]);
        let g = separable(truth.as_slice());
        assert!(matches!(
            train_category("c", &g, &truth, &TrainConfig::default()),
            Err(Error::DegenerateCategory { .. })
        ));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let truth = lab(&[1, -1]);
        let g = separable(truth.as_slice());
        let trained = train_category("c", &g, &truth, &TrainConfig::default()).unwrap();
        let csv = trained.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,lower_bound,upper_bound,violation,train_ber"));
        assert_eq!(lines.count(), trained.trace.rows.len());
    }

    #[test]
    fn lambda_selection_is_deterministic() {
        let truth_v: Vec<i8> = (0..30).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let truth = lab(&truth_v);
        let g = separable(&truth_v);
        let cfg = TrainConfig::default();
        let a = select_lambda("c", &g, &truth, &cfg, &default_lambda_grid(), 3).unwrap();
        let b = select_lambda("c", &g, &truth, &cfg, &default_lambda_grid(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scores.len(), 6);
        assert!(default_lambda_grid().contains(&a.lambda));
    }
}
