//! Discrete Lax–Oleinik eigenproblem on an [`EdgeGraph`]:
//!
//! `u(y) + λ = min_x [u(x) + c(x, y)]`, with `λ = τ·L̄(τ)`.
//!
//! `λ` is the minimum cycle mean of the graph (Karp, or Howard policy
//! iteration on large graphs). A subsolution of the reduced problem then
//! identifies the tight edges; their cyclic strongly connected components
//! are the critical nodes, and `u` is the multi-source shortest-path
//! distance from the critical set under reduced costs `c − λ`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digraph::{strongly_connected, Components, Csr};
use crate::error::{Error, Result};
use crate::graph::{EdgeGraph, TorusGrid, VelocityBound};
use crate::model::norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleMethod {
    Karp,
    Howard,
    /// Karp when `n·m ≤ AUTO_KARP_LIMIT`, Howard otherwise.
    Auto,
}

pub const AUTO_KARP_LIMIT: usize = 200_000_000;

impl CycleMethod {
    fn resolve(self, graph: &EdgeGraph) -> CycleMethod {
        match self {
            CycleMethod::Auto => {
                if graph.node_count().saturating_mul(graph.edge_count()) <= AUTO_KARP_LIMIT {
                    CycleMethod::Karp
                } else {
                    CycleMethod::Howard
                }
            }
            m => m,
        }
    }
}

/// Result of a minimum-cycle-mean computation.
#[derive(Clone, Debug)]
pub struct MeanCycle {
    pub lambda: f64,
    pub method: CycleMethod,
    /// Howard only: chosen in-edge of every node.
    pub policy: Option<Vec<usize>>,
    /// Howard only: bias vector solving the eigen-equation.
    pub bias: Option<Vec<f64>>,
    pub iterations: usize,
}

pub fn min_mean_cycle(graph: &EdgeGraph, method: CycleMethod) -> Result<MeanCycle> {
    if graph.node_count() == 0 {
        return Err(Error::Data("empty graph".into()));
    }
    if let Some(e) = graph.costs().iter().position(|c| !c.is_finite()) {
        return Err(Error::Data(format!("non-finite cost at edge {e}")));
    }
    match method.resolve(graph) {
        CycleMethod::Howard => howard(graph),
        _ => Ok(MeanCycle {
            lambda: karp(graph),
            method: CycleMethod::Karp,
            policy: None,
            bias: None,
            iterations: graph.node_count(),
        }),
    }
}

/// One relaxation round `next(y) = min_k prev(tail) + c(tail → y)`.
fn karp_row(graph: &EdgeGraph, prev: &[f64], next: &mut [f64]) {
    let s = graph.stencil_len();
    let costs = graph.costs();
    next.par_iter_mut().enumerate().for_each(|(y, out)| {
        let mut best = f64::INFINITY;
        for k in 0..s {
            let e = graph.in_edge(y, k);
            let cand = prev[e / s] + costs[e];
            if cand < best {
                best = cand;
            }
        }
        *out = best;
    });
}

/// Karp's characterization with a virtual source joined to every node:
/// `λ = min_v max_{k<n} (D_n(v) − D_k(v)) / (n − k)`.
///
/// Runs the DP twice so that only two rows are held in memory.
fn karp(graph: &EdgeGraph) -> f64 {
    let n = graph.node_count();
    let mut prev = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..n {
        karp_row(graph, &prev, &mut next);
        std::mem::swap(&mut prev, &mut next);
    }
    let d_n = prev.clone();
    let mut worst = vec![f64::NEG_INFINITY; n];
    prev.iter_mut().for_each(|p| *p = 0.0);
    for k in 0..n {
        let denom = (n - k) as f64;
        for v in 0..n {
            let q = (d_n[v] - prev[v]) / denom;
            if q > worst[v] {
                worst[v] = q;
            }
        }
        karp_row(graph, &prev, &mut next);
        std::mem::swap(&mut prev, &mut next);
    }
    worst.into_iter().fold(f64::INFINITY, f64::min)
}

fn howard(graph: &EdgeGraph) -> Result<MeanCycle> {
    let n = graph.node_count();
    let s = graph.stencil_len();
    let costs = graph.costs();
    let scale = 1.0 + costs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol_eta = 1e-13 * scale;

    // smallest (tail, offset) among the cheapest in-edges
    let mut policy: Vec<usize> = (0..n)
        .map(|y| {
            let mut best = (f64::INFINITY, usize::MAX);
            for k in 0..s {
                let e = graph.in_edge(y, k);
                let key = (costs[e], e);
                if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
                    best = key;
                }
            }
            best.1
        })
        .collect();

    let mut eta = vec![0.0; n];
    let mut bias = vec![0.0; n];
    let mut state = vec![0u8; n];
    let mut path: Vec<usize> = Vec::new();
    let max_iter = 20 * n + 1000;

    for iter in 1..=max_iter {
        // value determination on the functional graph y -> tail(policy[y])
        state.iter_mut().for_each(|s| *s = 0);
        for start in 0..n {
            if state[start] != 0 {
                continue;
            }
            path.clear();
            let mut cur = start;
            while state[cur] == 0 {
                state[cur] = 1;
                path.push(cur);
                cur = graph.tail(policy[cur]);
            }
            let tree_end = if state[cur] == 1 {
                let pos = path.iter().position(|&p| p == cur).expect("cycle node on path");
                let cycle = &path[pos..];
                let total: f64 = cycle.iter().map(|&v| costs[policy[v]]).sum();
                let mean = total / cycle.len() as f64;
                let (root_pos, &root) = cycle
                    .iter()
                    .enumerate()
                    .min_by_key(|&(_, &v)| v)
                    .expect("non-empty cycle");
                // path[i+1] is the parent of path[i]: walk child-ward from root
                let len = cycle.len();
                eta[root] = mean;
                let mut parent = root;
                for step in 1..len {
                    let child = cycle[(root_pos + len - step) % len];
                    bias[child] = bias[parent] + costs[policy[child]] - mean;
                    eta[child] = mean;
                    parent = child;
                }
                for &v in cycle {
                    state[v] = 2;
                }
                pos
            } else {
                path.len()
            };
            for i in (0..tree_end).rev() {
                let v = path[i];
                let p = graph.tail(policy[v]);
                eta[v] = eta[p];
                bias[v] = bias[p] + costs[policy[v]] - eta[p];
                state[v] = 2;
            }
        }

        // first improve the cycle means
        let mut changed = false;
        for y in 0..n {
            let mut best = (eta[y], policy[y]);
            for k in 0..s {
                let e = graph.in_edge(y, k);
                let t = e / s;
                if eta[t] < best.0 - tol_eta {
                    best = (eta[t], e);
                }
            }
            if best.1 != policy[y] {
                policy[y] = best.1;
                changed = true;
            }
        }
        if changed {
            continue;
        }

        // then the bias within each class
        let hscale = scale + bias.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let tol_h = 1e-12 * hscale;
        for y in 0..n {
            let mut best = (bias[y], policy[y]);
            for k in 0..s {
                let e = graph.in_edge(y, k);
                let t = e / s;
                if (eta[t] - eta[y]).abs() > tol_eta {
                    continue;
                }
                let val = bias[t] + costs[e] - eta[y];
                if val < best.0 - tol_h {
                    best = (val, e);
                }
            }
            if best.1 != policy[y] {
                policy[y] = best.1;
                changed = true;
            }
        }
        if !changed {
            let lambda = eta.iter().copied().fold(f64::INFINITY, f64::min);
            return Ok(MeanCycle {
                lambda,
                method: CycleMethod::Howard,
                policy: Some(policy),
                bias: Some(bias),
                iterations: iter,
            });
        }
    }
    Err(Error::Solver(format!(
        "policy iteration did not terminate within {max_iter} iterations"
    )))
}

/// Solution of the discrete Lax–Oleinik equation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakKamSolution {
    pub grid: TorusGrid,
    pub tau: f64,
    /// Per-step ergodic value `λ = τ·L̄(τ)`.
    pub lambda: f64,
    /// `L̄(τ) = λ/τ`.
    pub bar_l: f64,
    /// Potential on nodes, `min u = 0`.
    pub u: Vec<f64>,
    pub residual: f64,
    pub critical_nodes: Vec<usize>,
    /// Number of critical components. With more than one, `u` depends on
    /// the choice of sources and is not unique.
    pub critical_components: usize,
    pub method: CycleMethod,
    pub tight_tolerance: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub method: CycleMethod,
    /// Defaults to `10⁻⁹·(1 + |λ|)` when `None`.
    pub tight_tolerance: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: CycleMethod::Auto,
            tight_tolerance: None,
        }
    }
}

pub fn solve_weak_kam(graph: &EdgeGraph) -> Result<WeakKamSolution> {
    solve_weak_kam_with(graph, SolveOptions::default())
}

pub fn solve_weak_kam_with(graph: &EdgeGraph, opts: SolveOptions) -> Result<WeakKamSolution> {
    let mc = min_mean_cycle(graph, opts.method)?;
    let lambda = mc.lambda;
    let eps_tight = opts.tight_tolerance.unwrap_or(1e-9 * (1.0 + lambda.abs()));
    let n = graph.node_count();
    let costs = graph.costs();

    let phi = match mc.bias {
        Some(b) => b,
        None => subsolution(graph, lambda)?,
    };
    let reduced = |e: usize| phi[graph.tail(e)] + costs[e] - lambda - phi[graph.head(e)];

    let scale = 1.0 + costs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let worst = (0..graph.edge_count())
        .into_par_iter()
        .map(reduced)
        .reduce(|| f64::INFINITY, f64::min);
    if worst < -1e-6 * scale {
        return Err(Error::Solver(format!(
            "reduced costs admit a negative cycle (min reduced cost {worst:e}); λ is too large"
        )));
    }

    let tight = Csr::from_edges(
        n,
        (0..graph.edge_count())
            .filter(|&e| reduced(e) <= eps_tight)
            .map(|e| (graph.tail(e), graph.head(e), e))
            .collect::<Vec<_>>(),
    );
    let comps = strongly_connected(&tight);
    let critical_nodes: Vec<usize> = (0..n).filter(|&v| comps.cyclic[comps.id[v] as usize]).collect();
    if critical_nodes.is_empty() {
        return Err(Error::Solver("no critical cycle among tight edges".into()));
    }
    let critical_components = comps.cyclic.iter().filter(|&&c| c).count();

    // Karp's λ carries the rounding of long path sums; the mean of an actual
    // tight cycle is exact up to one summation and never below the true λ.
    let lambda = match min_tight_cycle_mean(&tight, &comps, costs) {
        Some(m) if m <= lambda + 1e-12 * (1.0 + lambda.abs()) => m,
        _ => lambda,
    };

    // Dijkstra on reweighted costs r(e) ≥ 0; u(y) = label(y) + φ(y).
    let mut label = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &c in &critical_nodes {
        label[c] = -phi[c];
        heap.push(HeapItem(label[c], c));
    }
    let s = graph.stencil_len();
    while let Some(HeapItem(d, v)) = heap.pop() {
        if done[v] || d > label[v] {
            continue;
        }
        done[v] = true;
        for k in 0..s {
            let e = graph.edge_id(v, k);
            let w = graph.head(e);
            let cand = d + reduced(e).max(0.0);
            if cand < label[w] {
                label[w] = cand;
                heap.push(HeapItem(cand, w));
            }
        }
    }
    if label.iter().any(|l| !l.is_finite()) {
        return Err(Error::Solver(
            "some nodes are unreachable from the critical set; the graph is not strongly connected and the fixed point does not exist".into(),
        ));
    }
    let mut u: Vec<f64> = label.iter().zip(&phi).map(|(l, p)| l + p).collect();
    let min_u = u.iter().copied().fold(f64::INFINITY, f64::min);
    u.iter_mut().for_each(|x| *x -= min_u);

    let residual = fixed_point_residual(graph, &u, lambda);
    Ok(WeakKamSolution {
        grid: *graph.grid(),
        tau: graph.tau(),
        lambda,
        bar_l: lambda / graph.tau(),
        u,
        residual,
        critical_nodes,
        critical_components,
        method: mc.method,
        tight_tolerance: eps_tight,
    })
}

/// Mean of one cycle per cyclic component of the tight graph, minimized.
fn min_tight_cycle_mean(tight: &Csr, comps: &Components, costs: &[f64]) -> Option<f64> {
    let mut seen = vec![false; comps.count];
    let mut best: Option<f64> = None;
    let mut position = vec![usize::MAX; tight.node_count()];
    for v0 in 0..tight.node_count() {
        let c = comps.id[v0] as usize;
        if !comps.cyclic[c] || seen[c] {
            continue;
        }
        seen[c] = true;
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut v = v0;
        let start = loop {
            if position[v] != usize::MAX {
                break position[v];
            }
            position[v] = path.len();
            let &(w, e) = tight.out(v).iter().find(|(w, _)| comps.id[*w as usize] as usize == c)?;
            path.push((v, e as usize));
            v = w as usize;
        };
        let cycle = &path[start..];
        let mean = cycle.iter().map(|&(_, e)| costs[e]).sum::<f64>() / cycle.len() as f64;
        best = Some(best.map_or(mean, |b: f64| b.min(mean)));
        for &(v, _) in &path {
            position[v] = usize::MAX;
        }
    }
    best
}

/// Bellman–Ford from a virtual source: `φ(y) = min over walks ending at y of
/// Σ(c − λ)`, all walks starting at potential 0. Gauss–Seidel sweeps
/// alternate direction; at most `n + 1` sweeps are needed.
fn subsolution(graph: &EdgeGraph, lambda: f64) -> Result<Vec<f64>> {
    let n = graph.node_count();
    let s = graph.stencil_len();
    let costs = graph.costs();
    let scale = 1.0 + costs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut phi = vec![0.0; n];
    let mut last_change = 0.0;
    for sweep in 0..=n + 1 {
        let mut change: f64 = 0.0;
        let mut relax = |y: usize, phi: &mut [f64]| {
            let mut best = phi[y];
            for k in 0..s {
                let e = graph.in_edge(y, k);
                let cand = phi[e / s] + costs[e] - lambda;
                if cand < best {
                    best = cand;
                }
            }
            change = change.max(phi[y] - best);
            phi[y] = best;
        };
        if sweep % 2 == 0 {
            for y in 0..n {
                relax(y, &mut phi);
            }
        } else {
            for y in (0..n).rev() {
                relax(y, &mut phi);
            }
        }
        if change == 0.0 {
            return Ok(phi);
        }
        last_change = change;
    }
    // Rounding makes zero-mean critical cycles look marginally negative;
    // a large residual change means λ overshoots.
    if last_change > 1e-9 * scale {
        return Err(Error::Solver(format!(
            "reduced costs admit a negative cycle (last sweep moved by {last_change:e})"
        )));
    }
    Ok(phi)
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on node index
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `max_y |min_x (u(x) + c(x, y)) − u(y) − λ|`.
pub fn fixed_point_residual(graph: &EdgeGraph, u: &[f64], lambda: f64) -> f64 {
    let s = graph.stencil_len();
    let costs = graph.costs();
    (0..graph.node_count())
        .into_par_iter()
        .map(|y| {
            let mut best = f64::INFINITY;
            for k in 0..s {
                let e = graph.in_edge(y, k);
                best = best.min(u[e / s] + costs[e]);
            }
            (best - u[y] - lambda).abs()
        })
        .reduce(|| 0.0, f64::max)
}

pub fn lax_oleinik_residual(solution: &WeakKamSolution, graph: &EdgeGraph) -> f64 {
    fixed_point_residual(graph, &solution.u, solution.lambda)
}

/// One backward step `x_{−k−1} → x_{−k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub edge: usize,
    pub tail: usize,
    pub head: usize,
    pub offset: usize,
    pub cost: f64,
    pub defect: f64,
    pub speed: f64,
}

/// Backward calibrated configuration `x_0, x_{−1}, …, x_{−n}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConfiguration {
    pub tau: f64,
    /// `nodes[k]` is `x_{−k}`.
    pub nodes: Vec<usize>,
    /// `steps[k]` is the edge `x_{−k−1} → x_{−k}`.
    pub steps: Vec<CalibrationStep>,
}

impl CalibratedConfiguration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_defect(&self) -> f64 {
        self.steps.iter().fold(0.0, |a, s| a.max(s.defect))
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    /// Builds a configuration from explicit backward steps on `graph`,
    /// evaluating defects against `solution`.
    pub fn from_edges(graph: &EdgeGraph, solution: &WeakKamSolution, edges: &[usize]) -> Result<Self> {
        let mut nodes = Vec::with_capacity(edges.len() + 1);
        let mut steps = Vec::with_capacity(edges.len());
        for (k, &e) in edges.iter().enumerate() {
            let head = graph.head(e);
            if k == 0 {
                nodes.push(head);
            } else if nodes[k] != head {
                return Err(Error::Data(format!("edge {e} does not end at x_-{k}")));
            }
            let st = make_step(graph, solution, e);
            nodes.push(st.tail);
            steps.push(st);
        }
        Ok(Self {
            tau: graph.tau(),
            nodes,
            steps,
        })
    }
}

fn make_step(graph: &EdgeGraph, solution: &WeakKamSolution, e: usize) -> CalibrationStep {
    let tail = graph.tail(e);
    let head = graph.head(e);
    let k = graph.offset_index(e);
    let d = graph.grid().dimension();
    let v = graph.velocity(k);
    CalibrationStep {
        edge: e,
        tail,
        head,
        offset: k,
        cost: graph.cost(e),
        defect: solution.u[tail] + graph.cost(e) - solution.u[head] - solution.lambda,
        speed: norm(&v[..d]),
    }
}

/// Greedy backward configuration from `x0`: each step takes a predecessor
/// attaining the Lax–Oleinik minimum, ties going to the smallest node index
/// and then the smallest offset index.
pub fn backward_calibrated_configuration(
    solution: &WeakKamSolution,
    graph: &EdgeGraph,
    x0: usize,
    n_steps: usize,
) -> Result<CalibratedConfiguration> {
    if n_steps == 0 {
        return Err(Error::Config("a calibrated configuration needs at least one step".into()));
    }
    if x0 >= graph.node_count() {
        return Err(Error::Config(format!("start node {x0} out of range")));
    }
    let s = graph.stencil_len();
    let umax = solution.u.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tie = 1e-12 * (1.0 + solution.lambda.abs() + umax);
    let mut nodes = vec![x0];
    let mut steps = Vec::with_capacity(n_steps);
    let mut y = x0;
    for _ in 0..n_steps {
        let mut best = f64::INFINITY;
        for k in 0..s {
            let e = graph.in_edge(y, k);
            best = best.min(solution.u[e / s] + graph.cost(e));
        }
        let mut chosen: Option<(usize, usize, usize)> = None;
        for k in 0..s {
            let e = graph.in_edge(y, k);
            let t = e / s;
            if solution.u[t] + graph.cost(e) <= best + tie {
                let key = (t, k, e);
                if chosen.is_none_or(|c| (key.0, key.1) < (c.0, c.1)) {
                    chosen = Some(key);
                }
            }
        }
        let (_, _, e) = chosen.expect("finite graph has a minimizer");
        let st = make_step(graph, solution, e);
        y = st.tail;
        nodes.push(y);
        steps.push(st);
    }
    Ok(CalibratedConfiguration {
        tau: graph.tau(),
        nodes,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub max_speed: f64,
    pub within_bound: bool,
}

pub fn velocity_check(config: &CalibratedConfiguration, bound: &VelocityBound) -> VelocityReport {
    let max_speed = config.steps.iter().fold(0.0, |a: f64, s| a.max(s.speed));
    VelocityReport {
        max_speed,
        within_bound: max_speed <= bound.d,
    }
}
