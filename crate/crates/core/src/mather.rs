//! Holonomic edge measures, optimal (Mather) measures, Cesàro and recovery
//! measures, and penalized selection among optimal measures.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aubry::{calibration_graph, defect_field};
use crate::digraph::{strongly_connected, Csr};
use crate::error::{Error, Result};
use crate::graph::EdgeGraph;
use crate::model::{minimal_displacement, Coords, MAX_DIM};
use crate::phase::{PhasePoint, PhaseSet, PhaseState, SetKind};
use crate::weakkam::{solve_weak_kam, CalibratedConfiguration, WeakKamSolution};

/// Probability weights on the edges of one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMeasure {
    pub tau: f64,
    pub weights: Vec<f64>,
}

impl EdgeMeasure {
    pub fn zeros(graph: &EdgeGraph) -> Self {
        Self {
            tau: graph.tau(),
            weights: vec![0.0; graph.edge_count()],
        }
    }

    /// Point mass on one edge.
    pub fn dirac(graph: &EdgeGraph, edge: usize) -> Self {
        let mut m = Self::zeros(graph);
        m.weights[edge] = 1.0;
        m
    }

    /// Uniform measure on a list of edges (with multiplicity).
    pub fn uniform_on(graph: &EdgeGraph, edges: &[usize]) -> Self {
        let mut m = Self::zeros(graph);
        let w = 1.0 / edges.len() as f64;
        for &e in edges {
            m.weights[e] += w;
        }
        m
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(e, _)| e)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Convex combination `Σ c_i m_i`.
    pub fn mix(parts: &[(f64, &EdgeMeasure)]) -> Result<Self> {
        let (_, first) = parts.first().ok_or_else(|| Error::Config("empty mixture".into()))?;
        let mut out = vec![0.0; first.weights.len()];
        for (c, m) in parts {
            if m.weights.len() != out.len() {
                return Err(Error::Config("mixing measures on different graphs".into()));
            }
            for (o, w) in out.iter_mut().zip(&m.weights) {
                *o += c * w;
            }
        }
        Ok(Self {
            tau: first.tau,
            weights: out,
        })
    }

    /// Support of the lifted measure as phase points `(x, o·h/τ)`.
    pub fn support_set(&self, graph: &EdgeGraph) -> PhaseSet {
        let points = self.support().map(|e| edge_phase_point(graph, e)).collect();
        let mut s = PhaseSet::new(graph.grid().dimension(), SetKind::Support, points);
        s.tau = Some(graph.tau());
        s
    }

    /// CSV rows `x..,v..,weight` for edges with positive weight.
    pub fn write_csv<W: Write>(&self, graph: &EdgeGraph, mut w: W) -> Result<()> {
        let d = graph.grid().dimension();
        let header = if d == 1 { "x,v,weight" } else { "x,y,vx,vy,weight" };
        writeln!(w, "{header}")?;
        for e in self.support() {
            let p = edge_phase_point(graph, e);
            let mut fields: Vec<String> = p.x[..d].iter().chain(&p.v[..d]).map(|c| c.to_string()).collect();
            fields.push(self.weights[e].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn edge_phase_point(graph: &EdgeGraph, e: usize) -> PhasePoint {
    PhasePoint {
        x: graph.grid().coords(graph.tail(e)),
        v: graph.velocity(graph.offset_index(e)),
    }
}

fn check_measure(measure: &EdgeMeasure, graph: &EdgeGraph) -> Result<()> {
    if measure.weights.len() != graph.edge_count() {
        return Err(Error::Config("measure and graph sizes differ".into()));
    }
    if let Some(e) = measure.weights.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::Data(format!("negative or NaN weight on edge {e}")));
    }
    Ok(())
}

/// `max_z |in-mass(z) − out-mass(z)|`.
pub fn holonomy_defect(measure: &EdgeMeasure, graph: &EdgeGraph) -> Result<f64> {
    check_measure(measure, graph)?;
    let n = graph.node_count();
    let mut balance = vec![0.0; n];
    for (e, &w) in measure.weights.iter().enumerate() {
        if w > 0.0 {
            balance[graph.tail(e)] -= w;
            balance[graph.head(e)] += w;
        }
    }
    Ok(balance.iter().fold(0.0, |a: f64, b| a.max(b.abs())))
}

pub fn discrete_action_of_measure(graph: &EdgeGraph, measure: &EdgeMeasure) -> f64 {
    measure
        .weights
        .iter()
        .zip(graph.costs())
        .map(|(w, c)| w * c)
        .sum()
}

/// Uniform measure on one minimum-mean cycle per critical component, with
/// equal component weights.
pub fn optimal_edge_measure(graph: &EdgeGraph, solution: &WeakKamSolution) -> Result<EdgeMeasure> {
    let cycles = critical_cycles(graph, solution)?;
    let per = 1.0 / cycles.len() as f64;
    let mut m = EdgeMeasure::zeros(graph);
    for cyc in &cycles {
        let w = per / cyc.len() as f64;
        for &e in cyc {
            m.weights[e] += w;
        }
    }
    let action = discrete_action_of_measure(graph, &m);
    if (action - solution.lambda).abs() > 1e-9 * (1.0 + solution.lambda.abs()) {
        return Err(Error::Solver(format!(
            "optimal measure has action {action} but λ = {}",
            solution.lambda
        )));
    }
    Ok(m)
}

/// One tight cycle per cyclic component of the tight graph, components in
/// order of their smallest node.
pub fn critical_cycles(graph: &EdgeGraph, solution: &WeakKamSolution) -> Result<Vec<Vec<usize>>> {
    let tol = solution.tight_tolerance + 2.0 * solution.residual;
    let n = graph.node_count();
    let tight: Vec<usize> = (0..graph.edge_count())
        .filter(|&e| {
            solution.u[graph.tail(e)] + graph.cost(e) - solution.u[graph.head(e)] - solution.lambda <= tol
        })
        .collect();
    let csr = Csr::from_edges(n, tight.iter().map(|&e| (graph.tail(e), graph.head(e), e)));
    let comps = strongly_connected(&csr);
    let mut seen = vec![false; comps.count];
    let mut cycles = Vec::new();
    for v0 in 0..n {
        let c = comps.id[v0] as usize;
        if seen[c] || !comps.cyclic[c] {
            continue;
        }
        seen[c] = true;
        // walk inside the component until a node repeats
        let mut visited: HashMap<usize, usize> = HashMap::new();
        let mut edges: Vec<usize> = Vec::new();
        let mut v = v0;
        let start = loop {
            if let Some(&i) = visited.get(&v) {
                break i;
            }
            visited.insert(v, edges.len());
            let &(_, e) = csr
                .out(v)
                .iter()
                .find(|(w, _)| comps.id[*w as usize] as usize == c)
                .ok_or_else(|| Error::Solver("cyclic component without internal edge".into()))?;
            edges.push(e as usize);
            v = graph.head(e as usize);
        };
        cycles.push(edges[start..].to_vec());
    }
    if cycles.is_empty() {
        return Err(Error::Solver("no tight cycle found".into()));
    }
    Ok(cycles)
}

/// Edges with defect at most `ε` that lie on a cycle of the ε-tight graph,
/// lifted to phase points.
pub fn mather_set(graph: &EdgeGraph, solution: &WeakKamSolution, epsilon: f64) -> Result<PhaseSet> {
    let cal = calibration_graph(&defect_field(graph, solution)?, epsilon)?;
    let idx = cal.cyclic_edges();
    let mut set = PhaseSet::new(
        graph.grid().dimension(),
        SetKind::Mather,
        idx.iter().map(|&i| cal.phase_point(&cal.edges[i])).collect(),
    );
    set.tau = Some(graph.tau());
    set.epsilon = Some(epsilon);
    Ok(set)
}

/// Empirical measure `(1/N) Σ δ_(x_{−k−1}, x_{−k})`.
pub fn cesaro_measure(config: &CalibratedConfiguration, graph: &EdgeGraph) -> Result<EdgeMeasure> {
    if config.is_empty() {
        return Err(Error::Config("empty configuration".into()));
    }
    let edges: Vec<usize> = config.steps.iter().map(|s| s.edge).collect();
    if edges.iter().any(|&e| e >= graph.edge_count()) {
        return Err(Error::Config("configuration does not belong to this graph".into()));
    }
    Ok(EdgeMeasure::uniform_on(graph, &edges))
}

/// Continuous orbit sampled at a uniform time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledOrbit {
    pub dt: f64,
    pub states: Vec<PhaseState>,
}

impl SampledOrbit {
    pub fn duration(&self) -> f64 {
        self.dt * self.states.len().saturating_sub(1) as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub measure: EdgeMeasure,
    pub holonomy_defect: f64,
    /// `𝔄_τ(η)/τ`.
    pub action_per_tau: f64,
    pub samples: usize,
}

/// Flow-averaged measure: every orbit sample at time `s` contributes the
/// edge from the node nearest `x(s)` to the node nearest `x(s + τ)`.
pub fn recovery_measure(graph: &EdgeGraph, orbit: &SampledOrbit) -> Result<RecoveryReport> {
    let tau = graph.tau();
    let dt = orbit.dt;
    if !(dt > 0.0) || dt > tau / 10.0 * (1.0 + 1e-12) {
        return Err(Error::Config(format!("orbit step {dt} must be in (0, τ/10]")));
    }
    let ratio = tau / dt;
    let stride = ratio.round() as usize;
    if (ratio - stride as f64).abs() > 1e-6 * ratio {
        return Err(Error::Config("τ must be an integer multiple of the orbit step".into()));
    }
    if orbit.duration() < 100.0 * tau * (1.0 - 1e-12) {
        return Err(Error::Config(format!(
            "orbit covers {} time units, need at least 100τ = {}",
            orbit.duration(),
            100.0 * tau
        )));
    }
    let grid = graph.grid();
    let d = grid.dimension();
    let n_axis = grid.nodes_per_axis() as i64;
    let samples = orbit.states.len() - stride;
    let mut edges = Vec::with_capacity(samples);
    for j in 0..samples {
        let a = &orbit.states[j];
        let b = &orbit.states[j + stride];
        let tail = grid.nearest_node(&a.x[..d]);
        let head = grid.nearest_node(&b.x[..d]);
        let mt = grid.multi_index(tail);
        let mh = grid.multi_index(head);
        // lift the node displacement with the continuous one
        let disp = minimal_displacement(&a.x[..d], &b.x[..d]);
        let mut o = [0i32; MAX_DIM];
        for axis in 0..d {
            let raw = mh[axis] as i64 - mt[axis] as i64;
            let cont = disp[axis] * n_axis as f64;
            let wraps = ((cont - raw as f64) / n_axis as f64).round() as i64;
            o[axis] = (raw + wraps * n_axis) as i32;
        }
        let k = graph.offset_position(&o).ok_or_else(|| {
            Error::Data(format!("orbit step with offset {:?} leaves the velocity bound", &o[..d]))
        })?;
        edges.push(graph.edge_id(tail, k));
    }
    let measure = EdgeMeasure::uniform_on(graph, &edges);
    let holonomy = holonomy_defect(&measure, graph)?;
    let action = discrete_action_of_measure(graph, &measure);
    Ok(RecoveryReport {
        measure,
        holonomy_defect: holonomy,
        action_per_tau: action / tau,
        samples,
    })
}

/// Phase-space weight `ψ(x, v)` for penalized selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Penalty {
    Constant { value: f64 },
    /// `exp(1 − 1/(1 − (r/width)²))` for torus distance `r < width` from
    /// `center`, zero outside.
    Bump { center: Vec<f64>, width: f64 },
    /// `amplitude · cos(2π k·x + phase)`.
    Trig {
        amplitude: f64,
        frequency: Vec<i32>,
        #[serde(default)]
        phase: f64,
    },
}

impl Penalty {
    pub fn eval(&self, x: &[f64], _v: &[f64]) -> f64 {
        match self {
            Penalty::Constant { value } => *value,
            Penalty::Bump { center, width } => {
                let r = crate::model::torus_distance(x, &center[..x.len().min(center.len())]);
                let q = r / width;
                if q < 1.0 {
                    (1.0 - 1.0 / (1.0 - q * q)).exp()
                } else {
                    0.0
                }
            }
            Penalty::Trig {
                amplitude,
                frequency,
                phase,
            } => {
                let dot: f64 = frequency.iter().zip(x).map(|(k, xi)| f64::from(*k) * xi).sum();
                amplitude * (2.0 * std::f64::consts::PI * dot + phase).cos()
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Penalty::Constant { value } if value.is_finite() => Ok(()),
            Penalty::Bump { center, width } if center.len() == dim && *width > 0.0 => Ok(()),
            Penalty::Trig { frequency, .. } if frequency.len() == dim => Ok(()),
            _ => Err(Error::Config(format!("invalid penalty {self:?} for dimension {dim}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PenalizedSelection {
    pub measure: EdgeMeasure,
    pub support: PhaseSet,
    /// Solution of the perturbed problem.
    pub solution: WeakKamSolution,
}

/// Minimizes `𝔄_τ(ν)/τ + ε ∫ψ dν̃` over holonomic measures by solving the
/// graph with costs `c + ε·τ·ψ(x, o·h/τ)`.
pub fn penalized_mather(
    graph: &EdgeGraph,
    solution: &WeakKamSolution,
    psi: &dyn Fn(&[f64], &[f64]) -> f64,
    epsilon_pen: f64,
) -> Result<PenalizedSelection> {
    if !(epsilon_pen >= 0.0) || !epsilon_pen.is_finite() {
        return Err(Error::Config(format!("penalty weight must be ≥ 0, got {epsilon_pen}")));
    }
    let (perturbed, sol) = if epsilon_pen == 0.0 {
        (graph.clone(), solution.clone())
    } else {
        let d = graph.grid().dimension();
        let tau = graph.tau();
        let vel: Vec<Coords> = (0..graph.stencil_len()).map(|k| graph.velocity(k)).collect();
        let mut costs = graph.costs().to_vec();
        for (e, c) in costs.iter_mut().enumerate() {
            let x = graph.grid().coords(graph.tail(e));
            let p = psi(&x[..d], &vel[graph.offset_index(e)][..d]);
            if !p.is_finite() {
                return Err(Error::Data(format!("penalty is not finite at edge {e}")));
            }
            *c += epsilon_pen * tau * p;
        }
        let g = graph.with_costs(costs)?;
        let s = solve_weak_kam(&g)?;
        (g, s)
    };
    let measure = optimal_edge_measure(&perturbed, &sol)?;
    let mut support = measure.support_set(graph);
    support.kind = SetKind::Mather;
    Ok(PenalizedSelection {
        measure,
        support,
        solution: sol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_edge_graph, build_grid, VelocityBound};
    use crate::model::LagrangianModel;

    fn ring(n: usize) -> EdgeGraph {
        let grid = build_grid(1, n).unwrap();
        let s = vec![[-1, 0], [0, 0], [1, 0]];
        let costs = (0..3 * n).map(|i| (i % 5) as f64 - 2.0).collect();
        EdgeGraph::from_costs(grid, 1.0, s, costs).unwrap()
    }

    #[test]
    fn holonomy_examples() {
        let g = ring(4);
        let loop0 = g.edge_id(0, 1);
        assert_eq!(holonomy_defect(&EdgeMeasure::dirac(&g, loop0), &g).unwrap(), 0.0);
        let ab = g.edge_id(0, 2);
        let ba = g.edge_id(1, 0);
        assert_eq!(holonomy_defect(&EdgeMeasure::uniform_on(&g, &[ab, ba]), &g).unwrap(), 0.0);
        assert_eq!(holonomy_defect(&EdgeMeasure::dirac(&g, ab), &g).unwrap(), 1.0);
        let mut bad = EdgeMeasure::dirac(&g, ab);
        bad.weights[0] = -0.1;
        assert!(matches!(holonomy_defect(&bad, &g), Err(Error::Data(_))));
    }

    #[test]
    fn action_examples() {
        let grid = build_grid(1, 2).unwrap();
        let g = EdgeGraph::from_costs(grid, 0.1, vec![[-1, 0], [0, 0], [1, 0]], vec![9.0, -0.1, 1.0, 3.0, 0.0, 9.0])
            .unwrap();
        assert_eq!(discrete_action_of_measure(&g, &EdgeMeasure::dirac(&g, 1)), -0.1);
        assert_eq!(discrete_action_of_measure(&g, &EdgeMeasure::dirac(&g, 4)), 0.0);
        assert_eq!(discrete_action_of_measure(&g, &EdgeMeasure::uniform_on(&g, &[2, 3])), 2.0);
    }

    #[test]
    fn free_model_optimal_measure_is_uniform_on_loops() {
        let grid = build_grid(1, 10).unwrap();
        let g = build_edge_graph(grid, &LagrangianModel::free(1).unwrap(), 0.1, &VelocityBound::user(2.0).unwrap())
            .unwrap();
        let sol = solve_weak_kam(&g).unwrap();
        let m = optimal_edge_measure(&g, &sol).unwrap();
        let z = g.zero_offset();
        for node in 0..10 {
            assert!((m.weights[g.edge_id(node, z)] - 0.1).abs() < 1e-15);
        }
        assert_eq!(m.support().count(), 10);
        assert_eq!(discrete_action_of_measure(&g, &m), 0.0);
    }

    #[test]
    fn bump_penalty_shape() {
        let p = Penalty::Bump {
            center: vec![0.5],
            width: 0.25,
        };
        assert_eq!(p.eval(&[0.5], &[0.0]), 1.0);
        assert_eq!(p.eval(&[0.0], &[0.0]), 0.0);
        assert!(p.eval(&[0.6], &[0.0]) > 0.0);
        assert!(p.validate(1).is_ok());
        assert!(p.validate(2).is_err());
    }

    #[test]
    fn recovery_requires_fine_long_orbits() {
        let grid = build_grid(1, 16).unwrap();
        let g = build_edge_graph(grid, &LagrangianModel::pendulum(), 0.1, &VelocityBound::user(2.0).unwrap())
            .unwrap();
        let rest = PhasePoint::new(&[0.0], &[0.0]);
        let short = SampledOrbit {
            dt: 0.01,
            states: vec![rest; 50],
        };
        assert!(matches!(recovery_measure(&g, &short), Err(Error::Config(_))));
        let coarse = SampledOrbit {
            dt: 0.05,
            states: vec![rest; 1000],
        };
        assert!(matches!(recovery_measure(&g, &coarse), Err(Error::Config(_))));
        let ok = SampledOrbit {
            dt: 0.01,
            states: vec![rest; 1001],
        };
        let r = recovery_measure(&g, &ok).unwrap();
        assert!((r.measure.weights[g.edge_id(0, g.zero_offset())] - 1.0).abs() < 1e-12);
        assert!(r.holonomy_defect < 1e-12);
        assert!((r.action_per_tau + 1.0).abs() < 1e-12);
    }
}
