//! Torus grids and the velocity-stencil edge graph carrying discrete action
//! costs `τ L(x, o·h/τ)`.

use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, superlinearity_constants, Coords, LagrangianModel, MAX_DIM};
use crate::weakkam::{solve_weak_kam, WeakKamSolution};

/// Integer displacement in grid units. Unused components are 0.
pub type Offset = [i32; MAX_DIM];

pub const DEFAULT_MEMORY_CAP: usize = 100_000_000;
pub const DEFAULT_SAFETY: f64 = 1.5;
pub const COARSE_NODES: usize = 16;
pub const COARSE_TAU: f64 = 0.2;

/// Uniform grid of `N^d` nodes on `T^d`, indexed lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n_axis: usize,
}

pub fn build_grid(dim: usize, n_axis: usize) -> Result<TorusGrid> {
    if dim != 1 && dim != 2 {
        return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
    }
    if n_axis < 2 {
        return Err(Error::Config(format!("need at least 2 nodes per axis, got {n_axis}")));
    }
    Ok(TorusGrid { dim, n_axis })
}

impl TorusGrid {
    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_axis
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_axis as f64
    }

    pub fn node_count(&self) -> usize {
        self.n_axis.pow(self.dim as u32)
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .take(self.dim)
            .fold(0, |acc, &i| acc * self.n_axis + i % self.n_axis)
    }

    pub fn multi_index(&self, index: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n_axis;
            rest /= self.n_axis;
        }
        out
    }

    pub fn coords(&self, index: usize) -> Coords {
        let m = self.multi_index(index);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = m[axis] as f64 * h;
        }
        x
    }

    /// Node whose coordinates are closest to `x` on the torus.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let n = self.n_axis as f64;
        let mut multi = [0; MAX_DIM];
        for axis in 0..self.dim {
            let r = (model::wrap_unit(x[axis]) * n).round() as usize;
            multi[axis] = r % self.n_axis;
        }
        self.index(&multi[..self.dim])
    }

    /// Node reached from `index` by the offset, with wraparound.
    pub fn shift(&self, index: usize, offset: &Offset) -> usize {
        let mut m = self.multi_index(index);
        let n = self.n_axis as i64;
        for axis in 0..self.dim {
            m[axis] = (m[axis] as i64 + offset[axis] as i64).rem_euclid(n) as usize;
        }
        self.index(&m[..self.dim])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    User,
    Derived,
}

/// Maximal speed admitted on the stencil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityBound {
    pub d: f64,
    pub provenance: Provenance,
    pub lambda_coarse: Option<f64>,
    pub tau_coarse: Option<f64>,
    pub k_lip: Option<f64>,
    pub c_of_k_plus_1: Option<f64>,
    pub safety: Option<f64>,
}

impl VelocityBound {
    pub fn user(d: f64) -> Result<Self> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Config(format!("velocity bound must be positive, got {d}")));
        }
        Ok(Self {
            d,
            provenance: Provenance::User,
            lambda_coarse: None,
            tau_coarse: None,
            k_lip: None,
            c_of_k_plus_1: None,
            safety: None,
        })
    }
}

/// Derives `D = safety · (|L̄_coarse| + max(0, −C(K+1)))` where `K` is the
/// largest difference quotient of the coarse potential and
/// `L ≥ (K+1)|v| + C(K+1)`.
///
/// Without a coarse solution, one is computed on a 16-node grid with
/// `τ = 0.2` and every offset of the fundamental domain in the stencil.
pub fn velocity_bound(
    model: &LagrangianModel,
    coarse: Option<&WeakKamSolution>,
    safety: f64,
) -> Result<VelocityBound> {
    if !(safety > 0.0) || !safety.is_finite() {
        return Err(Error::Config(format!("safety factor must be positive, got {safety}")));
    }
    let owned;
    let sol = match coarse {
        Some(s) => s,
        None => {
            let grid = build_grid(model.dimension(), COARSE_NODES)?;
            let half = (COARSE_NODES as i32 - 1) / 2;
            let stencil = box_stencil(grid.dimension(), half);
            let g = EdgeGraph::with_stencil(grid, model, COARSE_TAU, stencil)?;
            owned = solve_weak_kam(&g)?;
            &owned
        }
    };
    if !sol.lambda.is_finite() || sol.u.iter().any(|u| !u.is_finite()) {
        return Err(Error::Solver("coarse solve produced non-finite values".into()));
    }
    let grid = sol.grid;
    let h = grid.spacing();
    let mut k_lip: f64 = 0.0;
    for i in 0..grid.node_count() {
        for axis in 0..grid.dimension() {
            let mut o = [0; MAX_DIM];
            o[axis] = 1;
            let j = grid.shift(i, &o);
            k_lip = k_lip.max((sol.u[j] - sol.u[i]).abs() / h);
        }
    }
    let radius = 4.0 * (k_lip + 1.0) + 4.0;
    let c = superlinearity_constants(model, k_lip + 1.0, radius)?.c_of_k;
    let bar_l = sol.lambda / sol.tau;
    let d = safety * (bar_l.abs() + (-c).max(0.0));
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Solver(format!("derived velocity bound is degenerate: {d}")));
    }
    Ok(VelocityBound {
        d,
        provenance: Provenance::Derived,
        lambda_coarse: Some(sol.lambda),
        tau_coarse: Some(sol.tau),
        k_lip: Some(k_lip),
        c_of_k_plus_1: Some(c),
        safety: Some(safety),
    })
}

fn box_stencil(dim: usize, half: i32) -> Vec<Offset> {
    let mut out = Vec::new();
    if dim == 1 {
        for a in -half..=half {
            out.push([a, 0]);
        }
    } else {
        for a in -half..=half {
            for b in -half..=half {
                out.push([a, b]);
            }
        }
    }
    out
}

/// Offsets `o` with `|o|·h ≤ τD`, each component strictly inside the
/// fundamental domain `|o_i| < N/2`, sorted lexicographically.
pub fn stencil_for(grid: &TorusGrid, tau: f64, d: f64) -> (Vec<Offset>, bool) {
    let h = grid.spacing();
    let reach = tau * d * (1.0 + 1e-12);
    let radius = (reach / h).floor() as i64;
    let n = grid.nodes_per_axis() as i64;
    let half = (n - 1) / 2;
    let truncated = radius > half;
    let r = radius.min(half) as i32;
    let stencil = box_stencil(grid.dimension(), r)
        .into_iter()
        .filter(|o| {
            let len = ((o[0] as f64).powi(2) + (o[1] as f64).powi(2)).sqrt();
            len * h <= reach
        })
        .collect();
    (stencil, truncated)
}

/// Regular multigraph on the grid nodes: node `x` has one out-edge per
/// stencil offset `o`, to `x + o·h`, with cost `τ L(x, o·h/τ)`.
///
/// Edge `(node, k)` has flat id `node · |stencil| + k`.
#[derive(Clone, Debug)]
pub struct EdgeGraph {
    grid: TorusGrid,
    tau: f64,
    velocity_bound: Option<f64>,
    stencil: Vec<Offset>,
    negation: Vec<usize>,
    costs: Vec<f64>,
    heads: Vec<u32>,
    warnings: Vec<String>,
}

pub fn build_edge_graph(
    grid: TorusGrid,
    model: &LagrangianModel,
    tau: f64,
    bound: &VelocityBound,
) -> Result<EdgeGraph> {
    build_edge_graph_with_cap(grid, model, tau, bound, DEFAULT_MEMORY_CAP)
}

pub fn build_edge_graph_with_cap(
    grid: TorusGrid,
    model: &LagrangianModel,
    tau: f64,
    bound: &VelocityBound,
    memory_cap: usize,
) -> Result<EdgeGraph> {
    check_tau(tau)?;
    if model.dimension() != grid.dimension() {
        return Err(Error::Config("model and grid dimensions differ".into()));
    }
    let (stencil, truncated) = stencil_for(&grid, tau, bound.d);
    let n = grid.node_count();
    let m = n.saturating_mul(stencil.len());
    if m > memory_cap {
        let per_node = memory_cap / n.max(1);
        let suggested_n = match grid.dimension() {
            1 => ((memory_cap as f64) / (2.0 * tau * bound.d)).sqrt().floor() as usize,
            _ => ((memory_cap as f64) / (std::f64::consts::PI * (tau * bound.d).powi(2)))
                .powf(0.25)
                .floor() as usize,
        };
        let suggested_d = match grid.dimension() {
            1 => (per_node as f64 / 2.0) * grid.spacing() / tau,
            _ => (per_node as f64 / std::f64::consts::PI).sqrt() * grid.spacing() / tau,
        };
        return Err(Error::Config(format!(
            "graph would have {m} edges (cap {memory_cap}); use at most {suggested_n} nodes per axis or D ≤ {suggested_d:.4}"
        )));
    }
    let mut g = EdgeGraph::with_stencil(grid, model, tau, stencil)?;
    g.velocity_bound = Some(bound.d);
    if tau * bound.d < grid.spacing() {
        g.push_warning(format!(
            "τ·D = {} is below the grid spacing {}; stencil holds only self-loops",
            tau * bound.d,
            grid.spacing()
        ));
    }
    if truncated {
        g.push_warning(format!(
            "τ·D = {} exceeds half the torus; stencil truncated to the fundamental domain",
            tau * bound.d
        ));
    }
    Ok(g)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time step must be positive, got {tau}")))
    }
}

fn validate_stencil(grid: &TorusGrid, stencil: &[Offset]) -> Result<Vec<usize>> {
    if stencil.is_empty() {
        return Err(Error::Config("empty stencil".into()));
    }
    let d = grid.dimension();
    for o in stencil {
        if o[d..].iter().any(|&c| c != 0) {
            return Err(Error::Config(format!("offset {o:?} exceeds grid dimension")));
        }
    }
    if !stencil.iter().any(|o| o.iter().all(|&c| c == 0)) {
        return Err(Error::Config("stencil must contain the zero offset".into()));
    }
    let mut neg = Vec::with_capacity(stencil.len());
    for (k, o) in stencil.iter().enumerate() {
        if stencil[..k].contains(o) {
            return Err(Error::Config(format!("duplicate offset {o:?}")));
        }
        let minus = [-o[0], -o[1]];
        match stencil.iter().position(|p| *p == minus) {
            Some(j) => neg.push(j),
            None => return Err(Error::Config(format!("stencil not symmetric: {o:?} lacks its negation"))),
        }
    }
    Ok(neg)
}

impl EdgeGraph {
    /// Graph with an explicit stencil and costs from the model.
    pub fn with_stencil(
        grid: TorusGrid,
        model: &LagrangianModel,
        tau: f64,
        stencil: Vec<Offset>,
    ) -> Result<Self> {
        check_tau(tau)?;
        let d = grid.dimension();
        let s = stencil.len();
        let h = grid.spacing();
        let velocities: Vec<Coords> = stencil
            .iter()
            .map(|o| {
                let mut v = [0.0; MAX_DIM];
                for axis in 0..d {
                    v[axis] = f64::from(o[axis]) * h / tau;
                }
                v
            })
            .collect();
        let mut costs = vec![0.0; grid.node_count() * s];
        costs.par_chunks_mut(s).enumerate().for_each(|(node, row)| {
            let x = grid.coords(node);
            for (c, v) in row.iter_mut().zip(&velocities) {
                *c = tau * model.value(&x[..d], &v[..d]);
            }
        });
        Self::from_costs(grid, tau, stencil, costs)
    }

    /// Graph with arbitrary costs, used for penalized problems and for
    /// randomized checks of the graph algorithms.
    pub fn from_costs(grid: TorusGrid, tau: f64, stencil: Vec<Offset>, costs: Vec<f64>) -> Result<Self> {
        check_tau(tau)?;
        let negation = validate_stencil(&grid, &stencil)?;
        let n = grid.node_count();
        if costs.len() != n * stencil.len() {
            return Err(Error::Config(format!(
                "cost table has {} entries, expected {}",
                costs.len(),
                n * stencil.len()
            )));
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Data(format!("non-finite cost at edge {i}")));
        }
        if n > u32::MAX as usize {
            return Err(Error::Config("too many nodes".into()));
        }
        let s = stencil.len();
        let mut heads = vec![0u32; n * s];
        heads.par_chunks_mut(s).enumerate().for_each(|(node, row)| {
            for (hd, o) in row.iter_mut().zip(&stencil) {
                *hd = grid.shift(node, o) as u32;
            }
        });
        Ok(Self {
            grid,
            tau,
            velocity_bound: None,
            stencil,
            negation,
            costs,
            heads,
            warnings: Vec::new(),
        })
    }

    /// Same structure, new costs.
    pub fn with_costs(&self, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != self.costs.len() {
            return Err(Error::Config("cost table size mismatch".into()));
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Data(format!("non-finite cost at edge {i}")));
        }
        Ok(Self {
            costs,
            ..self.clone()
        })
    }

    fn push_warning(&mut self, w: String) {
        warn!("{w}");
        self.warnings.push(w);
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn velocity_bound(&self) -> Option<f64> {
        self.velocity_bound
    }

    pub fn stencil(&self) -> &[Offset] {
        &self.stencil
    }

    pub fn stencil_len(&self) -> usize {
        self.stencil.len()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn heads(&self) -> &[u32] {
        &self.heads
    }

    #[inline]
    pub fn edge_id(&self, node: usize, k: usize) -> usize {
        node * self.stencil.len() + k
    }

    #[inline]
    pub fn tail(&self, edge: usize) -> usize {
        edge / self.stencil.len()
    }

    #[inline]
    pub fn offset_index(&self, edge: usize) -> usize {
        edge % self.stencil.len()
    }

    #[inline]
    pub fn head(&self, edge: usize) -> usize {
        self.heads[edge] as usize
    }

    #[inline]
    pub fn cost(&self, edge: usize) -> f64 {
        self.costs[edge]
    }

    /// Id of the in-edge of `node` that uses offset `k`.
    #[inline]
    pub fn in_edge(&self, node: usize, k: usize) -> usize {
        let tail = self.heads[self.edge_id(node, self.negation[k])] as usize;
        self.edge_id(tail, k)
    }

    pub fn zero_offset(&self) -> usize {
        self.stencil
            .iter()
            .position(|o| o.iter().all(|&c| c == 0))
            .expect("validated stencil contains zero")
    }

    pub fn offset_position(&self, o: &Offset) -> Option<usize> {
        self.stencil.iter().position(|p| p == o)
    }

    /// Lifted velocity `o·h/τ` of offset `k`.
    pub fn velocity(&self, k: usize) -> Coords {
        let h = self.grid.spacing();
        let mut v = [0.0; MAX_DIM];
        for axis in 0..self.grid.dimension() {
            v[axis] = f64::from(self.stencil[k][axis]) * h / self.tau;
        }
        v
    }

    /// CSV of the cost table: `node,x..,o..,head,cost`. Refused above 10⁴ nodes.
    pub fn write_costs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.node_count() > 10_000 {
            return Err(Error::Config("cost CSV export is limited to 10^4 nodes".into()));
        }
        let d = self.grid.dimension();
        let axes = ["x", "y"];
        let mut header = vec!["node".to_string()];
        header.extend(axes[..d].iter().map(|a| a.to_string()));
        header.extend(axes[..d].iter().map(|a| format!("o{a}")));
        header.push("head".into());
        header.push("cost".into());
        writeln!(w, "{}", header.join(","))?;
        for e in 0..self.edge_count() {
            let node = self.tail(e);
            let x = self.grid.coords(node);
            let o = self.stencil[self.offset_index(e)];
            let mut fields = vec![node.to_string()];
            fields.extend(x[..d].iter().map(|c| c.to_string()));
            fields.extend(o[..d].iter().map(|c| c.to_string()));
            fields.push(self.head(e).to_string());
            fields.push(self.costs[e].to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"WKGRAPH1";

    /// Little-endian binary dump used for the graph cache.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.grid.dimension() as u32).to_le_bytes())?;
        w.write_all(&(self.grid.nodes_per_axis() as u32).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&self.velocity_bound.unwrap_or(f64::NAN).to_le_bytes())?;
        w.write_all(&(self.stencil.len() as u32).to_le_bytes())?;
        for o in &self.stencil {
            w.write_all(&o[0].to_le_bytes())?;
            w.write_all(&o[1].to_le_bytes())?;
        }
        for c in &self.costs {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Data("not a graph cache file".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let n_axis = read_u32(&mut r)? as usize;
        let tau = read_f64(&mut r)?;
        let bound = read_f64(&mut r)?;
        let s = read_u32(&mut r)? as usize;
        let grid = build_grid(dim, n_axis)?;
        let mut stencil = Vec::with_capacity(s);
        for _ in 0..s {
            let a = read_i32(&mut r)?;
            let b = read_i32(&mut r)?;
            stencil.push([a, b]);
        }
        let m = grid.node_count() * s;
        let mut costs = Vec::with_capacity(m);
        for _ in 0..m {
            costs.push(read_f64(&mut r)?);
        }
        let mut g = Self::from_costs(grid, tau, stencil, costs)?;
        g.velocity_bound = if bound.is_nan() { None } else { Some(bound) };
        Ok(g)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::discrete_action;

    #[test]
    fn grid_examples() {
        let g = build_grid(1, 4).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| g.coords(i)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);
        let g = build_grid(2, 3).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.index(&[2, 1]), 7);
        assert_eq!(g.multi_index(7), [2, 1]);
        assert!(matches!(build_grid(1, 1), Err(Error::Config(_))));
        assert!(matches!(build_grid(3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn index_round_trip() {
        for (d, n) in [(1, 7), (2, 5)] {
            let g = build_grid(d, n).unwrap();
            for i in 0..g.node_count() {
                assert_eq!(g.index(&g.multi_index(i)[..d]), i);
                assert_eq!(g.nearest_node(&g.coords(i)[..d]), i);
                let x = g.coords(i);
                assert!(x[..d].iter().all(|c| (0.0..1.0).contains(c)));
            }
        }
    }

    #[test]
    fn stencil_enumeration() {
        let grid = build_grid(1, 10).unwrap();
        let (s, _) = stencil_for(&grid, 0.5, 0.45);
        // brute force: |o|·h ≤ τD over a wide range
        let oracle: Vec<Offset> = (-20..=20)
            .filter(|o: &i32| (*o as f64).abs() * 0.1 <= 0.5 * 0.45 + 1e-15)
            .map(|o| [o, 0])
            .collect();
        assert_eq!(s, oracle);
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn self_loop_only_stencil_warns() {
        let grid = build_grid(1, 10).unwrap();
        let model = LagrangianModel::pendulum();
        let g = build_edge_graph(grid, &model, 0.05, &VelocityBound::user(1.0).unwrap()).unwrap();
        assert_eq!(g.stencil(), &[[0, 0]]);
        assert_eq!(g.warnings().len(), 1);
    }

    #[test]
    fn free_self_loops_cost_nothing() {
        let grid = build_grid(1, 12).unwrap();
        let model = LagrangianModel::free(1).unwrap();
        let g = build_edge_graph(grid, &model, 0.1, &VelocityBound::user(2.0).unwrap()).unwrap();
        let z = g.zero_offset();
        for node in 0..g.node_count() {
            assert_eq!(g.cost(g.edge_id(node, z)), 0.0);
        }
    }

    #[test]
    fn costs_match_discrete_action() {
        let grid = build_grid(1, 20).unwrap();
        let model = LagrangianModel::pendulum();
        let g = build_edge_graph(grid, &model, 0.1, &VelocityBound::user(3.0).unwrap()).unwrap();
        for e in 0..g.edge_count() {
            let x = grid.coords(g.tail(e));
            let y = grid.coords(g.head(e));
            let c = discrete_action(&model, 0.1, &x[..1], &y[..1]).unwrap();
            assert!((c - g.cost(e)).abs() < 1e-14);
        }
    }

    #[test]
    fn regular_degree_and_in_edges() {
        let grid = build_grid(2, 6).unwrap();
        let model = LagrangianModel::free(2).unwrap();
        let g = build_edge_graph(grid, &model, 0.2, &VelocityBound::user(1.0).unwrap()).unwrap();
        let mut indeg = vec![0usize; g.node_count()];
        for e in 0..g.edge_count() {
            indeg[g.head(e)] += 1;
        }
        assert!(indeg.iter().all(|&d| d == g.stencil_len()));
        for y in 0..g.node_count() {
            for k in 0..g.stencil_len() {
                let e = g.in_edge(y, k);
                assert_eq!(g.head(e), y);
                assert_eq!(g.offset_index(e), k);
            }
        }
    }

    #[test]
    fn memory_cap_suggests_smaller_grid() {
        let grid = build_grid(1, 1000).unwrap();
        let model = LagrangianModel::free(1).unwrap();
        let err = build_edge_graph_with_cap(grid, &model, 0.1, &VelocityBound::user(2.0).unwrap(), 1000)
            .unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("nodes per axis")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_cache_round_trip() {
        let grid = build_grid(2, 5).unwrap();
        let model = LagrangianModel::free(2).unwrap();
        let g = build_edge_graph(grid, &model, 0.3, &VelocityBound::user(1.0).unwrap()).unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        let back = EdgeGraph::read_binary(&buf[..]).unwrap();
        assert_eq!(back.costs(), g.costs());
        assert_eq!(back.heads(), g.heads());
        assert_eq!(back.stencil(), g.stencil());
        assert_eq!(back.velocity_bound(), Some(1.0));
        assert!(EdgeGraph::read_binary(&b"nonsense"[..]).is_err());
    }

    #[test]
    fn velocity_bound_passthrough_and_errors() {
        let b = VelocityBound::user(2.0).unwrap();
        assert_eq!(b.d, 2.0);
        assert_eq!(b.provenance, Provenance::User);
        let model = LagrangianModel::free(1).unwrap();
        assert!(matches!(velocity_bound(&model, None, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn free_model_velocity_bound() {
        let model = LagrangianModel::free(1).unwrap();
        let b = velocity_bound(&model, None, 1.5).unwrap();
        assert_eq!(b.k_lip, Some(0.0));
        // closed form C(1) = min ½v² − |v| = −½
        assert!((b.d - 1.5 * 0.5).abs() < 1e-6);
        assert_eq!(b.provenance, Provenance::Derived);
    }
}
