//! The restricted master problem of the cutting-plane learner:
//!
//!   min_{Θ, ξ}  ξ + λ‖Θ‖²
//!   s.t.        ⟨a_k, Θ⟩ ≥ b_k − ξ  for every accumulated constraint k,
//!               ξ ≥ 0,  Θ_edge ≥ 0.
//!
//! It is solved in the dual, maximizing
//!   D(α) = Σ α_k b_k − ‖Π(Σ α_k a_k)‖² / (4λ)
//! over the simplex {α ≥ 0, Σ α ≤ 1} (the slack takes the remaining mass),
//! where Π clips the edge block at zero. The primal point is
//! Θ = Π(Σ α_k a_k) / (2λ).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{EdgeFeatures, EDGE_DIM};

/// Default duality-gap tolerance.
pub const QP_TOLERANCE: f64 = 1e-8;
const MAX_STEPS: usize = 200_000;

/// ⟨a, Θ⟩ ≥ loss − ξ, with `a` split into node and edge blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub node: Vec<f64>,
    pub edge: EdgeFeatures,
    pub loss: f64,
}

impl Constraint {
    pub fn dot(&self, theta_node: &[f64], theta_edge: &EdgeFeatures) -> f64 {
        dot(&self.node, theta_node) + dot(&self.edge, theta_edge)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub theta_node: Vec<f64>,
    pub theta_edge: EdgeFeatures,
    pub xi: f64,
    /// ξ + λ‖Θ‖² at the returned point.
    pub primal: f64,
    /// Dual objective; a lower bound on the restricted (and full) optimum.
    pub dual: f64,
    pub steps: usize,
}

/// Accumulated constraints, their node-block Gram matrix and the warm-started
/// dual point. Index 0 of `alpha` is the slack.
#[derive(Clone, Debug)]
pub struct CuttingPlaneState {
    node_dim: usize,
    constraints: Vec<Constraint>,
    gram: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl CuttingPlaneState {
    pub fn new(node_dim: usize) -> Self {
        Self {
            node_dim,
            constraints: Vec::new(),
            gram: Vec::new(),
            alpha: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn add(&mut self, c: Constraint) -> Result<()> {
        if c.node.len() != self.node_dim {
            return Err(Error::Dimension {
                what: "constraint",
                expected: self.node_dim,
                actual: c.node.len(),
            });
        }
        let row: Vec<f64> = self
            .constraints
            .iter()
            .map(|o| dot(&o.node, &c.node))
            .chain(std::iter::once(dot(&c.node, &c.node)))
            .collect();
        for (g, &v) in self.gram.iter_mut().zip(&row) {
            g.push(v);
        }
        self.gram.push(row);
        self.constraints.push(c);
        self.alpha.push(0.0);
        Ok(())
    }

    // Accessors over the slack-augmented index space (0 = slack).
    fn loss(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.constraints[k - 1].loss
        }
    }

    fn edge(&self, k: usize) -> EdgeFeatures {
        if k == 0 {
            [0.0; EDGE_DIM]
        } else {
            self.constraints[k - 1].edge
        }
    }

    fn gram(&self, a: usize, b: usize) -> f64 {
        if a == 0 || b == 0 {
            0.0
        } else {
            self.gram[a - 1][b - 1]
        }
    }
}

/// Euclidean projection onto {x ≥ 0, Σ x = 1}.
fn project_simplex(x: &mut [f64]) {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - shift).max(0.0);
    }
}

fn mat_vec(h: &[f64], z: &[f64], out: &mut [f64]) {
    let n = z.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&h[i * n..(i + 1) * n], z);
    }
}

/// Largest eigenvalue of the PSD matrix `h` (power iteration, padded).
fn spectral_bound(h: &[f64], n: usize) -> f64 {
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..100 {
        mat_vec(h, &x, &mut y);
        let norm = dot(&y, &y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        if (norm - est).abs() <= 1e-6 * norm {
            est = norm;
            break;
        }
        est = norm;
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / norm;
        }
    }
    let trace: f64 = (0..n).map(|i| h[i * n + i]).sum();
    (1.1 * est).min(trace).max(est)
}

/// Primal-dual interior point (Mehrotra predictor-corrector) for
///   min ½ zᵀQz − cᵀz  s.t.  Σ_{i<k} z_i = 1,  z ≥ 0.
/// Returns `None` if a factorization fails.
fn interior_point(q: &DMatrix<f64>, c: &[f64], k: usize, done: impl Fn(&[f64]) -> bool) -> Option<Vec<f64>> {
    let n = c.len();
    let ind = DVector::from_fn(n, |i, _| if i < k { 1.0 } else { 0.0 });
    let c = DVector::from_column_slice(c);
    let mut z = DVector::from_fn(n, |i, _| if i < k { 1.0 / k as f64 } else { 1.0 });
    let mut s = DVector::from_element(n, 1.0);
    let mut y = 0.0;
    let scale = 1.0 + c.amax() + q.amax();
    let max_step = |z: &DVector<f64>, dz: &DVector<f64>, s: &DVector<f64>, ds: &DVector<f64>| {
        let mut t = 1.0_f64;
        for i in 0..n {
            if dz[i] < 0.0 {
                t = t.min(-z[i] / dz[i]);
            }
            if ds[i] < 0.0 {
                t = t.min(-s[i] / ds[i]);
            }
        }
        t
    };
    for _ in 0..100 {
        let rd = q * &z - &c - &ind * y - &s;
        let rp = 1.0 - ind.dot(&z);
        let mu = z.dot(&s) / n as f64;
        if mu < 1e-3 && done(&z.as_slice()[..k]) || mu < 1e-18 * scale {
            break;
        }
        let mut m = q.clone();
        for i in 0..n {
            m[(i, i)] += s[i] / z[i];
        }
        let chol = m.cholesky()?;
        let m_ind = chol.solve(&ind);
        let denom = ind.dot(&m_ind);
        let direction = |rc: &DVector<f64>| {
            let r1 = -&rd + rc.component_div(&z);
            let mr = chol.solve(&r1);
            let dy = (rp - ind.dot(&mr)) / denom;
            let dz = mr + &m_ind * dy;
            let ds = (rc - s.component_mul(&dz)).component_div(&z);
            (dz, ds, dy)
        };
        let zs = z.component_mul(&s);
        let (dz_aff, ds_aff, _) = direction(&-&zs);
        let t_aff = max_step(&z, &dz_aff, &s, &ds_aff);
        let mu_aff = (&z + &dz_aff * t_aff).dot(&(&s + &ds_aff * t_aff)) / n as f64;
        let sigma = (mu_aff / mu).powi(3);
        let rc = -zs - dz_aff.component_mul(&ds_aff) + DVector::from_element(n, sigma * mu);
        let (dz, ds, dy) = direction(&rc);
        let t = (0.99 * max_step(&z, &dz, &s, &ds)).min(1.0);
        z += dz * t;
        s += ds * t;
        y += dy * t;
    }
    Some(z.iter().copied().collect())
}

/// Solves the restricted problem to a dual gap of `tolerance`, warm
/// starting from the state's dual point. The returned dual value is a valid
/// lower bound however early the solver stops.
///
/// The edge clipping is handled with explicit multipliers μ ≥ 0, which makes
/// the dual a smooth concave quadratic in (α, μ). An interior-point solve
/// gives the point; monotone accelerated projected gradient with restarts
/// polishes it until the gap certificate holds.
pub fn restricted_qp_solve(state: &mut CuttingPlaneState, lambda: f64, tolerance: f64) -> Result<QpSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    if state.is_empty() {
        return Err(Error::Config("restricted problem has no constraints".into()));
    }
    let k = state.alpha.len();
    let n = k + EDGE_DIM;
    let inv = 0.5 / lambda;
    let losses: Vec<f64> = (0..k).map(|a| state.loss(a)).collect();
    let edges: Vec<EdgeFeatures> = (0..k).map(|a| state.edge(a)).collect();

    // z = (α, μ); D(z) = c·z − inv/2 · zᵀHz.
    let mut h = vec![0.0; n * n];
    for a in 0..k {
        for b in 0..k {
            h[a * n + b] = state.gram(a, b) + dot(&edges[a], &edges[b]);
        }
        for e in 0..EDGE_DIM {
            h[a * n + k + e] = edges[a][e];
            h[(k + e) * n + a] = edges[a][e];
        }
    }
    for e in 0..EDGE_DIM {
        h[(k + e) * n + k + e] = 1.0;
    }
    let mut c = losses.clone();
    c.resize(n, 0.0);
    let objective = |z: &[f64], hz: &[f64]| dot(&c, z) - 0.5 * inv * dot(z, hz);
    let step = 1.0 / (inv * spectral_bound(&h, n));

    // Frank-Wolfe gap of the dual with μ eliminated; bounds the distance of
    // α to the optimum.
    let reduced_gap = |alpha: &[f64]| {
        let mut v = [0.0; EDGE_DIM];
        for (e, &al) in edges.iter().zip(alpha) {
            for (ve, x) in v.iter_mut().zip(e) {
                *ve += al * x;
            }
        }
        let clipped = v.map(|x| x.max(0.0));
        let grad: Vec<f64> = (0..k)
            .map(|a| {
                let s: f64 = (0..k).map(|m| alpha[m] * state.gram(a, m)).sum();
                losses[a] - inv * (s + dot(&edges[a], &clipped))
            })
            .collect();
        let best = grad.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best - dot(alpha, &grad)
    };

    let reduced_dual = |alpha: &[f64]| {
        let mut v = [0.0; EDGE_DIM];
        for (e, &al) in edges.iter().zip(alpha) {
            for (ve, x) in v.iter_mut().zip(e) {
                *ve += al * x;
            }
        }
        let quad: f64 = (0..k)
            .map(|a| alpha[a] * (0..k).map(|m| alpha[m] * state.gram(a, m)).sum::<f64>())
            .sum();
        dot(alpha, &losses) - 0.5 * inv * (quad + v.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>())
    };
    let mut z = state.alpha.clone();
    if reduced_gap(&z) > tolerance {
        let q = DMatrix::from_row_slice(n, n, &h) * inv;
        let feasible = |z: &[f64]| {
            let mut alpha: Vec<f64> = z.iter().map(|x| x.max(0.0)).collect();
            let total: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|x| *x /= total);
            alpha
        };
        if let Some(sol) = interior_point(&q, &c, k, |z| reduced_gap(&feasible(z)) <= tolerance) {
            let alpha = feasible(&sol[..k]);
            if alpha.iter().all(|x| x.is_finite()) {
                if reduced_dual(&alpha) > reduced_dual(&z) {
                    z = alpha;
                }
            }
        }
    }
    {
        let mut v = [0.0; EDGE_DIM];
        for (e, &al) in edges.iter().zip(&z) {
            for (ve, x) in v.iter_mut().zip(e) {
                *ve += al * x;
            }
        }
        z.extend(v.iter().map(|x| (-x).max(0.0)));
    }
    let mut hz = vec![0.0; n];
    mat_vec(&h, &z, &mut hz);
    let mut value = objective(&z, &hz);
    let mut prev = z.clone();
    let mut momentum = 1.0_f64;
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut hnext = vec![0.0; n];
    let mut steps = 0;
    loop {
        if steps % 8 == 0 {
            let gap = reduced_gap(&z[..k]);
            if gap <= tolerance {
                break;
            }
            if steps >= MAX_STEPS {
                log::warn!("restricted QP stopped after {steps} steps with gap {gap:.3e}");
                break;
            }
        }
        steps += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / t_next;
        for i in 0..n {
            y[i] = z[i] + beta * (z[i] - prev[i]);
        }
        mat_vec(&h, &y, &mut hy);
        for i in 0..n {
            next[i] = y[i] + step * (c[i] - inv * hy[i]);
        }
        project_simplex(&mut next[..k]);
        for m in &mut next[k..] {
            *m = m.max(0.0);
        }
        mat_vec(&h, &next, &mut hnext);
        let next_value = objective(&next, &hnext);
        if next_value < value {
            // restart from the current point
            momentum = 1.0;
            prev.copy_from_slice(&z);
            if beta == 0.0 {
                break;
            }
            continue;
        }
        momentum = t_next;
        prev.copy_from_slice(&z);
        std::mem::swap(&mut z, &mut next);
        std::mem::swap(&mut hz, &mut hnext);
        value = next_value;
    }
    state.alpha.copy_from_slice(&z[..k]);

    let s: Vec<f64> = (0..k)
        .map(|a| (0..k).map(|m| state.alpha[m] * state.gram(a, m)).sum())
        .collect();
    let mut v = [0.0; EDGE_DIM];
    for (m, e) in edges.iter().enumerate() {
        for (ve, x) in v.iter_mut().zip(e) {
            *ve += state.alpha[m] * x;
        }
    }

    let mut theta_node = vec![0.0; state.node_dim];
    for (c, &al) in state.constraints.iter().zip(&state.alpha[1..]) {
        if al > 0.0 {
            for (t, x) in theta_node.iter_mut().zip(&c.node) {
                *t += inv * al * x;
            }
        }
    }
    let theta_edge = v.map(|x| inv * x.max(0.0));
    let xi = state
        .constraints
        .iter()
        .map(|c| c.loss - c.dot(&theta_node, &theta_edge))
        .fold(0.0, f64::max);
    let norm_sq = dot(&theta_node, &theta_node) + dot(&theta_edge, &theta_edge);
    let vn_sq: f64 = (0..k).map(|a| state.alpha[a] * s[a]).sum();
    let clipped_sq: f64 = v.iter().map(|x| x.max(0.0).powi(2)).sum();
    let dual = dot(&state.alpha, &losses) - (vn_sq + clipped_sq) * inv * 0.5;
    Ok(QpSolution {
        theta_node,
        theta_edge,
        xi,
        primal: xi + lambda * norm_sq,
        dual,
        steps,
    })
}
