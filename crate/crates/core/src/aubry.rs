//! Calibration defects, ε-calibration graphs and discrete Aubry sets.
//!
//! An edge belongs to the Aubry set of a calibration graph when some
//! bi-infinite path runs through it. On a finite graph this is decided
//! exactly: the tail must be reachable from a cyclic strongly connected
//! component and the head must reach one.

use serde::{Deserialize, Serialize};

use crate::digraph::{bfs_path, reachable, strongly_connected, Components, Csr};
use crate::error::{Error, Result};
use crate::graph::{EdgeGraph, Offset, TorusGrid};
use crate::model::MAX_DIM;
use crate::phase::{phase_distance, PhasePoint, PhaseSet, SetKind};
use crate::weakkam::WeakKamSolution;

/// Tolerance below which a negative defect is attributed to rounding.
pub const DOMINATION_TOLERANCE: f64 = 1e-6;

/// `g(x, o) = u(x) + c(x, o) − u(x + o) − λ` on every edge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectField {
    pub grid: TorusGrid,
    pub tau: f64,
    pub stencil: Vec<Offset>,
    pub values: Vec<f64>,
    /// Lax–Oleinik residual of the solution the field was computed from.
    pub residual: f64,
}

pub fn defect_field(graph: &EdgeGraph, solution: &WeakKamSolution) -> Result<DefectField> {
    if solution.u.len() != graph.node_count() {
        return Err(Error::Config("solution and graph sizes differ".into()));
    }
    let values: Vec<f64> = (0..graph.edge_count())
        .map(|e| solution.u[graph.tail(e)] + graph.cost(e) - solution.u[graph.head(e)] - solution.lambda)
        .collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -DOMINATION_TOLERANCE {
        return Err(Error::Solver(format!(
            "domination violated: minimal defect {min:e}"
        )));
    }
    Ok(DefectField {
        grid: *graph.grid(),
        tau: graph.tau(),
        stencil: graph.stencil().to_vec(),
        values,
        residual: solution.residual,
    })
}

impl DefectField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn head(&self, edge: usize) -> usize {
        let s = self.stencil.len();
        self.grid.shift(edge / s, &self.stencil[edge % s])
    }

    /// Edge closest to a phase point: nearest node, offset `round(vτ/h)`.
    pub fn project(&self, p: &PhasePoint) -> Result<usize> {
        let d = self.grid.dimension();
        let node = self.grid.nearest_node(&p.x[..d]);
        let h = self.grid.spacing();
        let mut o: Offset = [0; MAX_DIM];
        for axis in 0..d {
            o[axis] = (p.v[axis] * self.tau / h).round() as i32;
        }
        let k = self
            .stencil
            .iter()
            .position(|q| *q == o)
            .ok_or_else(|| Error::Data(format!("velocity {:?} is outside the stencil", &p.v[..d])))?;
        Ok(node * self.stencil.len() + k)
    }
}

/// The default Aubry tolerance `10·residual + 10⁻⁹`.
pub fn default_epsilon(residual: f64) -> f64 {
    10.0 * residual + 1e-9
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalEdge {
    /// Edge id in the parent graph.
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    pub offset: usize,
}

/// Subgraph of edges with defect at most `ε`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationGraph {
    pub grid: TorusGrid,
    pub tau: f64,
    pub stencil: Vec<Offset>,
    pub epsilon: f64,
    pub edges: Vec<CalEdge>,
}

pub fn calibration_graph(defects: &DefectField, epsilon: f64) -> Result<CalibrationGraph> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let s = defects.stencil.len();
    let edges = defects
        .values
        .iter()
        .enumerate()
        .filter(|(_, &g)| g <= epsilon)
        .map(|(e, _)| CalEdge {
            id: e,
            tail: e / s,
            head: defects.head(e),
            offset: e % s,
        })
        .collect();
    Ok(CalibrationGraph {
        grid: defects.grid,
        tau: defects.tau,
        stencil: defects.stencil.clone(),
        epsilon,
        edges,
    })
}

/// Bi-infinite path through one Aubry edge: a backward cycle, a path from
/// it to the edge, the edge, a path onward, and a forward cycle. All
/// entries are parent-graph edge ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiInfiniteWitness {
    pub backward_cycle: Vec<usize>,
    pub lead_in: Vec<usize>,
    pub edge: usize,
    pub lead_out: Vec<usize>,
    pub forward_cycle: Vec<usize>,
}

impl BiInfiniteWitness {
    /// Every edge of the witness, each cycle traversed once.
    pub fn all_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.backward_cycle
            .iter()
            .chain(&self.lead_in)
            .chain(std::iter::once(&self.edge))
            .chain(&self.lead_out)
            .chain(&self.forward_cycle)
            .copied()
    }
}

struct Analysis {
    forward: Csr,
    backward: Csr,
    comps: Components,
    backward_good: Vec<bool>,
    forward_good: Vec<bool>,
}

impl CalibrationGraph {
    /// Subgraph of `graph` given by explicit edge ids.
    pub fn from_edge_ids(graph: &EdgeGraph, ids: &[usize], epsilon: f64) -> Self {
        let edges = ids
            .iter()
            .map(|&e| CalEdge {
                id: e,
                tail: graph.tail(e),
                head: graph.head(e),
                offset: graph.offset_index(e),
            })
            .collect();
        Self {
            grid: *graph.grid(),
            tau: graph.tau(),
            stencil: graph.stencil().to_vec(),
            epsilon,
            edges,
        }
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn phase_point(&self, edge: &CalEdge) -> PhasePoint {
        let d = self.grid.dimension();
        let h = self.grid.spacing();
        let x = self.grid.coords(edge.tail);
        let mut v = [0.0; MAX_DIM];
        for axis in 0..d {
            v[axis] = f64::from(self.stencil[edge.offset][axis]) * h / self.tau;
        }
        PhasePoint { x, v }
    }

    fn csr(&self) -> Csr {
        Csr::from_edges(
            self.node_count(),
            self.edges.iter().enumerate().map(|(i, e)| (e.tail, e.head, i)),
        )
    }

    fn analyse(&self) -> Analysis {
        let forward = self.csr();
        let backward = forward.reversed();
        let comps = strongly_connected(&forward);
        let n = self.node_count();
        let seeds: Vec<usize> = (0..n).filter(|&v| comps.cyclic[comps.id[v] as usize]).collect();
        let backward_good = reachable(&forward, seeds.iter().copied());
        let forward_good = reachable(&backward, seeds.iter().copied());
        Analysis {
            forward,
            backward,
            comps,
            backward_good,
            forward_good,
        }
    }

    /// Indices into `self.edges` of edges inside cyclic components.
    pub fn cyclic_edges(&self) -> Vec<usize> {
        let comps = strongly_connected(&self.csr());
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                let c = comps.id[e.tail];
                c == comps.id[e.head] && comps.cyclic[c as usize]
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices into `self.edges` of edges lying on a bi-infinite path.
    pub fn aubry_edges(&self) -> Vec<usize> {
        let a = self.analyse();
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| a.backward_good[e.tail] && a.forward_good[e.head])
            .map(|(i, _)| i)
            .collect()
    }

    /// Explicit bi-infinite path through `self.edges[index]`, if one exists.
    pub fn witness(&self, index: usize) -> Option<BiInfiniteWitness> {
        let a = self.analyse();
        let e = self.edges[index];
        if !(a.backward_good[e.tail] && a.forward_good[e.head]) {
            return None;
        }
        let in_cycle = |v: usize| a.comps.cyclic[a.comps.id[v] as usize];
        // backward search yields reversed labels from tail to a cyclic node
        let (start, mut lead_in) = bfs_path(&a.backward, e.tail, in_cycle)?;
        lead_in.reverse();
        let (end, lead_out) = bfs_path(&a.forward, e.head, in_cycle)?;
        let backward_cycle = self.cycle_through(&a, start)?;
        let forward_cycle = self.cycle_through(&a, end)?;
        let ids = |v: Vec<usize>| v.into_iter().map(|i| self.edges[i].id).collect::<Vec<_>>();
        Some(BiInfiniteWitness {
            backward_cycle: ids(backward_cycle),
            lead_in: ids(lead_in),
            edge: e.id,
            lead_out: ids(lead_out),
            forward_cycle: ids(forward_cycle),
        })
    }

    fn cycle_through(&self, a: &Analysis, v: usize) -> Option<Vec<usize>> {
        let comp = a.comps.id[v];
        for &(w, l) in a.forward.out(v) {
            let w = w as usize;
            if a.comps.id[w] != comp {
                continue;
            }
            if w == v {
                return Some(vec![l as usize]);
            }
            let (_, rest) = bfs_path(&a.forward, w, |x| x == v)?;
            let mut cyc = vec![l as usize];
            cyc.extend(rest);
            return Some(cyc);
        }
        None
    }
}

/// Phase points `(x_tail, o·h/τ)` of edges on bi-infinite paths.
pub fn aubry_set(cal: &CalibrationGraph) -> PhaseSet {
    let idx = cal.aubry_edges();
    if idx.is_empty() {
        log::warn!("calibration graph at ε = {} has no cycle; Aubry set is empty", cal.epsilon);
    }
    let mut set = PhaseSet::new(
        cal.grid.dimension(),
        SetKind::Aubry,
        idx.iter().map(|&i| cal.phase_point(&cal.edges[i])).collect(),
    );
    set.tau = Some(cal.tau);
    set.epsilon = Some(cal.epsilon);
    set
}

/// Samples the modulus relating calibration defect to distance from the
/// Aubry set: `η` is the largest defect over the orbit's projected edges,
/// `dist` the distance from the orbit's central point to the Aubry set.
pub fn nearby_aubry_distance(
    orbit: &[PhasePoint],
    defects: &DefectField,
    aubry: &PhaseSet,
) -> Result<(f64, f64)> {
    if orbit.is_empty() {
        return Err(Error::Config("empty orbit".into()));
    }
    if aubry.is_empty() {
        return Err(Error::Domain("empty Aubry set".into()));
    }
    let mut eta: f64 = 0.0;
    for p in orbit {
        let e = defects.project(p)?;
        eta = eta.max(defects.values[e]);
    }
    assert!(eta <= defects.max(), "projected defect exceeds the field maximum");
    let centre = &orbit[orbit.len() / 2];
    let dist = aubry
        .points
        .iter()
        .map(|a| phase_distance(centre, a))
        .fold(f64::INFINITY, f64::min);
    Ok((eta, dist))
}
