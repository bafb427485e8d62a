//! s-t maximum flow / minimum cut over real-valued capacities.
//!
//! The solver grows two search trees, one rooted at the source and one at
//! the sink, and reuses them across augmentations: after a path is saturated
//! only the nodes cut off from their root ("orphans") are re-attached or
//! released. This works well on the sparse, terminal-heavy networks produced
//! by the binary labeling reduction.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Capacities below this are treated as absent arcs.
pub const CAPACITY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vertex {
    Source,
    Sink,
    Node(usize),
}

/// One arc as added by the caller. Interior arcs may carry a reverse capacity,
/// which is equivalent to adding the opposite arc separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: Vertex,
    pub to: Vertex,
    pub capacity: f64,
    #[serde(default)]
    pub reverse_capacity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    node_count: usize,
    arcs: Vec<Arc>,
}

impl FlowNetwork {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            arcs: Vec::new(),
        }
    }

    pub fn with_capacity(node_count: usize, arcs: usize) -> Self {
        Self {
            node_count,
            arcs: Vec::with_capacity(arcs),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    fn check_vertex(&self, v: Vertex) -> Result<()> {
        match v {
            Vertex::Node(i) if i >= self.node_count => Err(Error::InvalidNetwork(format!(
                "node {i} out of range (node count {})",
                self.node_count
            ))),
            _ => Ok(()),
        }
    }

    fn check_capacity(c: f64) -> Result<()> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "capacity {c} must be finite and nonnegative"
            )));
        }
        Ok(())
    }

    /// Adds a directed arc and returns its index.
    pub fn add_arc(&mut self, from: Vertex, to: Vertex, capacity: f64) -> Result<usize> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        Self::check_capacity(capacity)?;
        if to == Vertex::Source {
            return Err(Error::InvalidNetwork("arc into the source".into()));
        }
        if from == Vertex::Sink {
            return Err(Error::InvalidNetwork("arc out of the sink".into()));
        }
        if from == to {
            return Err(Error::InvalidNetwork(format!("self-loop at {from:?}")));
        }
        self.arcs.push(Arc {
            from,
            to,
            capacity,
            reverse_capacity: 0.0,
        });
        Ok(self.arcs.len() - 1)
    }

    /// Adds the pair of interior arcs `u -> v` and `v -> u` as one record.
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) -> Result<usize> {
        self.check_vertex(Vertex::Node(u))?;
        self.check_vertex(Vertex::Node(v))?;
        Self::check_capacity(cap_uv)?;
        Self::check_capacity(cap_vu)?;
        if u == v {
            return Err(Error::InvalidNetwork(format!("self-loop at node {u}")));
        }
        self.arcs.push(Arc {
            from: Vertex::Node(u),
            to: Vertex::Node(v),
            capacity: cap_uv,
            reverse_capacity: cap_vu,
        });
        Ok(self.arcs.len() - 1)
    }

    /// Total capacity of arcs leaving `source_side ∪ {source}` towards
    /// `sink_side ∪ {sink}`.
    pub fn cut_capacity(&self, source_side: &[bool]) -> f64 {
        let on_source = |v: Vertex| match v {
            Vertex::Source => true,
            Vertex::Sink => false,
            Vertex::Node(i) => source_side[i],
        };
        self.arcs
            .iter()
            .map(|a| {
                let mut c = 0.0;
                if on_source(a.from) && !on_source(a.to) {
                    c += a.capacity;
                }
                if on_source(a.to) && !on_source(a.from) {
                    c += a.reverse_capacity;
                }
                c
            })
            .sum()
    }

    /// DIMACS max-flow text. Interior node `i` is numbered `i + 1`, the
    /// source `n + 1` and the sink `n + 2`.
    pub fn to_dimacs(&self) -> String {
        let n = self.node_count;
        let id = |v: Vertex| match v {
            Vertex::Node(i) => i + 1,
            Vertex::Source => n + 1,
            Vertex::Sink => n + 2,
        };
        let mut lines = Vec::new();
        for a in &self.arcs {
            if a.capacity > 0.0 {
                lines.push((id(a.from), id(a.to), a.capacity));
            }
            if a.reverse_capacity > 0.0 {
                lines.push((id(a.to), id(a.from), a.reverse_capacity));
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "p max {} {}", n + 2, lines.len());
        let _ = writeln!(out, "n {} s", n + 1);
        let _ = writeln!(out, "n {} t", n + 2);
        for (u, v, c) in lines {
            let _ = writeln!(out, "a {u} {v} {c}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxFlow {
    pub flow_value: f64,
    /// `true` iff the node is reachable from the source in the residual graph.
    pub source_side: Vec<bool>,
    /// Net flow on each arc in insertion order (negative when an interior
    /// edge record carries flow in its reverse direction).
    pub arc_flows: Vec<f64>,
}

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tree {
    Free,
    Source,
    Sink,
}

struct Solver {
    offsets: Vec<u32>,
    out: Vec<u32>,
    head: Vec<u32>,
    residual: Vec<f64>,
    src_cap: Vec<f64>,
    sink_cap: Vec<f64>,
    tree: Vec<Tree>,
    parent: Vec<u32>,
    ts: Vec<u64>,
    dist: Vec<u32>,
    time: u64,
    active: VecDeque<u32>,
    queued: Vec<bool>,
    orphans: VecDeque<u32>,
    flow: f64,
}

impl Solver {
    #[inline]
    fn arcs_of(&self, i: u32) -> std::ops::Range<usize> {
        self.offsets[i as usize] as usize..self.offsets[i as usize + 1] as usize
    }

    #[inline]
    fn tail(&self, a: u32) -> u32 {
        self.head[(a ^ 1) as usize]
    }

    fn activate(&mut self, i: u32) {
        if !self.queued[i as usize] {
            self.queued[i as usize] = true;
            self.active.push_back(i);
        }
    }

    fn orphan(&mut self, i: u32) {
        self.parent[i as usize] = NONE;
        self.orphans.push_back(i);
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            self.queued[i as usize] = false;
            if self.tree[i as usize] != Tree::Free {
                return Some(i);
            }
        }
        None
    }

    /// Grows the tree of `i` by one layer. Returns an arc from a source-tree
    /// node to a sink-tree node with positive residual, if one is met.
    fn grow(&mut self, i: u32) -> Option<u32> {
        let iu = i as usize;
        let side = self.tree[iu];
        for k in self.arcs_of(i) {
            let a = self.out[k];
            let usable = match side {
                Tree::Source => self.residual[a as usize],
                _ => self.residual[(a ^ 1) as usize],
            };
            if usable <= 0.0 {
                continue;
            }
            let j = self.head[a as usize] as usize;
            match self.tree[j] {
                Tree::Free => {
                    self.tree[j] = side;
                    self.parent[j] = a ^ 1;
                    self.ts[j] = self.ts[iu];
                    self.dist[j] = self.dist[iu] + 1;
                    self.activate(j as u32);
                }
                t if t == side => {
                    if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                        self.parent[j] = a ^ 1;
                        self.ts[j] = self.ts[iu];
                        self.dist[j] = self.dist[iu] + 1;
                    }
                }
                _ => {
                    return Some(if side == Tree::Source { a } else { a ^ 1 });
                }
            }
        }
        None
    }

    fn augment(&mut self, bridge: u32) {
        let mut bottleneck = self.residual[bridge as usize];
        let mut x = self.tail(bridge);
        loop {
            let p = self.parent[x as usize];
            if p == TERMINAL {
                bottleneck = bottleneck.min(self.src_cap[x as usize]);
                break;
            }
            bottleneck = bottleneck.min(self.residual[(p ^ 1) as usize]);
            x = self.head[p as usize];
        }
        let mut x = self.head[bridge as usize];
        loop {
            let p = self.parent[x as usize];
            if p == TERMINAL {
                bottleneck = bottleneck.min(self.sink_cap[x as usize]);
                break;
            }
            bottleneck = bottleneck.min(self.residual[p as usize]);
            x = self.head[p as usize];
        }

        self.residual[bridge as usize] -= bottleneck;
        self.residual[(bridge ^ 1) as usize] += bottleneck;

        let mut x = self.tail(bridge);
        loop {
            let p = self.parent[x as usize];
            if p == TERMINAL {
                self.src_cap[x as usize] -= bottleneck;
                if self.src_cap[x as usize] <= 0.0 {
                    self.orphan(x);
                }
                break;
            }
            self.residual[p as usize] += bottleneck;
            self.residual[(p ^ 1) as usize] -= bottleneck;
            let next = self.head[p as usize];
            if self.residual[(p ^ 1) as usize] <= 0.0 {
                self.orphan(x);
            }
            x = next;
        }
        let mut x = self.head[bridge as usize];
        loop {
            let p = self.parent[x as usize];
            if p == TERMINAL {
                self.sink_cap[x as usize] -= bottleneck;
                if self.sink_cap[x as usize] <= 0.0 {
                    self.orphan(x);
                }
                break;
            }
            self.residual[(p ^ 1) as usize] += bottleneck;
            self.residual[p as usize] -= bottleneck;
            let next = self.head[p as usize];
            if self.residual[p as usize] <= 0.0 {
                self.orphan(x);
            }
            x = next;
        }
        self.flow += bottleneck;
    }

    /// Distance of `j` to its tree root, or `None` if its chain ends at an orphan.
    fn origin_distance(&mut self, j: u32) -> Option<u32> {
        let mut d: u32 = 0;
        let mut x = j as usize;
        loop {
            if self.ts[x] == self.time {
                d += self.dist[x];
                break;
            }
            let p = self.parent[x];
            d += 1;
            if p == TERMINAL {
                self.ts[x] = self.time;
                self.dist[x] = 1;
                break;
            }
            if p == NONE {
                return None;
            }
            x = self.head[p as usize] as usize;
        }
        let mut x = j as usize;
        let mut dd = d;
        while self.ts[x] != self.time {
            self.ts[x] = self.time;
            self.dist[x] = dd;
            dd -= 1;
            x = self.head[self.parent[x] as usize] as usize;
        }
        Some(d)
    }

    fn adopt(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            let iu = i as usize;
            let side = self.tree[iu];
            let mut best: Option<(u32, u32)> = None;
            for k in self.arcs_of(i) {
                let a = self.out[k];
                let usable = match side {
                    Tree::Source => self.residual[(a ^ 1) as usize],
                    _ => self.residual[a as usize],
                };
                if usable <= 0.0 {
                    continue;
                }
                let j = self.head[a as usize];
                if self.tree[j as usize] != side || self.parent[j as usize] == NONE {
                    continue;
                }
                if let Some(d) = self.origin_distance(j) {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((a, d));
                    }
                }
            }
            if let Some((a, d)) = best {
                self.parent[iu] = a;
                self.ts[iu] = self.time;
                self.dist[iu] = d + 1;
                continue;
            }
            for k in self.arcs_of(i) {
                let a = self.out[k];
                let j = self.head[a as usize];
                if self.tree[j as usize] != side {
                    continue;
                }
                let usable = match side {
                    Tree::Source => self.residual[(a ^ 1) as usize],
                    _ => self.residual[a as usize],
                };
                if usable > 0.0 {
                    self.activate(j);
                }
                let pj = self.parent[j as usize];
                if pj != NONE && pj != TERMINAL && self.head[pj as usize] == i {
                    self.orphan(j);
                }
            }
            self.tree[iu] = Tree::Free;
        }
    }
}

/// Computes a maximum flow and the source side of a minimum cut.
pub fn max_flow(net: &FlowNetwork) -> Result<MaxFlow> {
    let n = net.node_count;
    let mut flow = 0.0;

    // arc_slot[k]: index of the interior arc pair for interior arcs.
    let mut arc_slot = vec![NONE; net.arcs.len()];
    let mut pair_ends: Vec<(u32, u32)> = Vec::new();
    let mut residual: Vec<f64> = Vec::new();
    let mut src_cap = vec![0.0; n];
    let mut sink_cap = vec![0.0; n];
    let mut direct = 0.0;

    for (k, a) in net.arcs.iter().enumerate() {
        let cap = if a.capacity < CAPACITY_EPS { 0.0 } else { a.capacity };
        let rev = if a.reverse_capacity < CAPACITY_EPS {
            0.0
        } else {
            a.reverse_capacity
        };
        match (a.from, a.to) {
            (Vertex::Source, Vertex::Sink) => direct += cap,
            (Vertex::Source, Vertex::Node(v)) => src_cap[v] += cap,
            (Vertex::Node(u), Vertex::Sink) => sink_cap[u] += cap,
            (Vertex::Node(u), Vertex::Node(v)) => {
                if cap == 0.0 && rev == 0.0 {
                    continue;
                }
                arc_slot[k] = pair_ends.len() as u32;
                pair_ends.push((u as u32, v as u32));
                residual.push(cap);
                residual.push(rev);
            }
            _ => unreachable!("validated on insertion"),
        }
    }
    let src_orig = src_cap.clone();
    let sink_orig = sink_cap.clone();
    flow += direct;

    // CSR adjacency of arc ids by tail node; arc 2p is u->v, 2p+1 is v->u.
    let mut head = vec![0u32; residual.len()];
    let mut degree = vec![0u32; n + 1];
    for (p, &(u, v)) in pair_ends.iter().enumerate() {
        head[2 * p] = v;
        head[2 * p + 1] = u;
        degree[u as usize] += 1;
        degree[v as usize] += 1;
    }
    let mut offsets = vec![0u32; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + degree[i];
    }
    let mut fill = offsets.clone();
    let mut out = vec![0u32; residual.len()];
    for (p, &(u, v)) in pair_ends.iter().enumerate() {
        out[fill[u as usize] as usize] = 2 * p as u32;
        fill[u as usize] += 1;
        out[fill[v as usize] as usize] = 2 * p as u32 + 1;
        fill[v as usize] += 1;
    }

    let mut s = Solver {
        offsets,
        out,
        head,
        residual,
        src_cap,
        sink_cap,
        tree: vec![Tree::Free; n],
        parent: vec![NONE; n],
        ts: vec![0; n],
        dist: vec![0; n],
        time: 0,
        active: VecDeque::new(),
        queued: vec![false; n],
        orphans: VecDeque::new(),
        flow,
    };

    for i in 0..n {
        let m = s.src_cap[i].min(s.sink_cap[i]);
        if m > 0.0 {
            s.flow += m;
            s.src_cap[i] -= m;
            s.sink_cap[i] -= m;
        }
        if s.src_cap[i] > 0.0 {
            s.tree[i] = Tree::Source;
        } else if s.sink_cap[i] > 0.0 {
            s.tree[i] = Tree::Sink;
        } else {
            continue;
        }
        s.parent[i] = TERMINAL;
        s.dist[i] = 1;
        s.activate(i as u32);
    }

    let budget = (n as u64 + 2).saturating_mul(net.arcs.len() as u64 + 1);
    let mut augmentations: u64 = 0;
    let mut current: Option<u32> = None;
    loop {
        let i = match current.filter(|&c| s.tree[c as usize] != Tree::Free) {
            Some(c) => c,
            None => match s.next_active() {
                Some(c) => c,
                None => break,
            },
        };
        match s.grow(i) {
            Some(bridge) => {
                current = Some(i);
                s.time += 1;
                s.augment(bridge);
                s.adopt();
                augmentations += 1;
                if augmentations > budget {
                    return Err(Error::FlowBudget(budget));
                }
            }
            None => current = None,
        }
    }

    // Residual reachability from the source decides the cut side.
    let mut source_side = vec![false; n];
    let mut queue: VecDeque<u32> = VecDeque::new();
    for i in 0..n {
        if s.src_cap[i] > 0.0 {
            source_side[i] = true;
            queue.push_back(i as u32);
        }
    }
    while let Some(i) = queue.pop_front() {
        for k in s.arcs_of(i) {
            let a = s.out[k];
            let j = s.head[a as usize] as usize;
            if !source_side[j] && s.residual[a as usize] > 0.0 {
                source_side[j] = true;
                queue.push_back(j as u32);
            }
        }
    }

    let mut src_used: Vec<f64> = (0..n).map(|i| src_orig[i] - s.src_cap[i]).collect();
    let mut sink_used: Vec<f64> = (0..n).map(|i| sink_orig[i] - s.sink_cap[i]).collect();
    let arc_flows = net
        .arcs
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let cap = if a.capacity < CAPACITY_EPS { 0.0 } else { a.capacity };
            match (a.from, a.to) {
                (Vertex::Source, Vertex::Sink) => cap,
                (Vertex::Source, Vertex::Node(v)) => {
                    let f = src_used[v].min(cap);
                    src_used[v] -= f;
                    f
                }
                (Vertex::Node(u), Vertex::Sink) => {
                    let f = sink_used[u].min(cap);
                    sink_used[u] -= f;
                    f
                }
                _ => match arc_slot[k] {
                    NONE => 0.0,
                    p => cap - s.residual[2 * p as usize],
                },
            }
        })
        .collect();

    Ok(MaxFlow {
        flow_value: s.flow,
        source_side,
        arc_flows,
    })
}
