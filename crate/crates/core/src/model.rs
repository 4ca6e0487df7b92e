//! Tonelli Lagrangians on the flat torus `T^d`, `d ∈ {1, 2}`.
//!
//! Two forms are supported. The separable form `L(x, v) = ½ vᵀMv − V(x)`
//! with `V` a finite trigonometric polynomial has exact derivatives. The
//! generic form evaluates user callbacks through [`LagrangianFns`]; the
//! crate ships one such model, [`MagneticLagrangian`], which adds a
//! velocity-coupled term `A(x)·v` and therefore a non-zero mixed derivative.
//!
//! Points and velocities are passed as slices of length `d`. Internally
//! everything is padded to `[f64; 2]` with zeros in unused components.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Fixed-size coordinate vector. Components beyond the model dimension are 0.
pub type Coords = [f64; MAX_DIM];

/// `∂²L/∂x_i∂v_j` stored as `m[i][j]`.
pub type Mixed = [[f64; MAX_DIM]; MAX_DIM];

pub(crate) fn pad(s: &[f64]) -> Coords {
    let mut out = [0.0; MAX_DIM];
    out[..s.len()].copy_from_slice(s);
    out
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Maps `y − x` to its representative in `[−½, ½)` componentwise. A tie at
/// `±½` always lands on `−½`.
pub fn minimal_displacement(x: &[f64], y: &[f64]) -> Coords {
    let mut out = [0.0; MAX_DIM];
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        out[i] = wrap_half(b - a);
    }
    out
}

#[inline]
pub(crate) fn wrap_half(d: f64) -> f64 {
    let r = d - (d + 0.5).floor();
    // differences of coordinates in [0,1) carry rounding noise; a tie
    // within a few ulps still resolves to -1/2
    if (r.abs() - 0.5).abs() <= TIE_SLACK {
        -0.5
    } else {
        r
    }
}

const TIE_SLACK: f64 = 1e-15;

/// Reduces a coordinate into `[0, 1)`.
#[inline]
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    // x = -1e-17 gives r == 1.0 after rounding
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Torus distance between two positions (Euclidean norm of the minimal
/// displacement).
pub fn torus_distance(x: &[f64], y: &[f64]) -> f64 {
    let d = minimal_displacement(x, y);
    norm(&d[..x.len()])
}

/// One term `amplitude · cos(2π k·x + phase)` of a trigonometric polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub frequency: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

impl TrigTerm {
    pub fn new(amplitude: f64, frequency: &[i32], phase: f64) -> Self {
        Self {
            amplitude,
            frequency: frequency.to_vec(),
            phase,
        }
    }

    #[inline]
    fn argument(&self, x: &[f64]) -> f64 {
        let mut dot = 0.0;
        for (k, xi) in self.frequency.iter().zip(x) {
            dot += f64::from(*k) * xi;
        }
        2.0 * PI * dot + self.phase
    }
}

/// Finite trigonometric polynomial on `T^d`. Integer frequencies make it
/// 1-periodic in every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    dim: usize,
    terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(dim: usize, terms: Vec<TrigTerm>) -> Result<Self> {
        check_dim(dim)?;
        for t in &terms {
            if t.frequency.len() != dim {
                return Err(Error::Config(format!(
                    "trigonometric term has {} frequency components, expected {dim}",
                    t.frequency.len()
                )));
            }
            if !t.amplitude.is_finite() || !t.phase.is_finite() {
                return Err(Error::Config("non-finite trigonometric coefficient".into()));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0)
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude * t.argument(x).cos())
            .sum()
    }

    #[inline]
    pub fn gradient(&self, x: &[f64]) -> Coords {
        let mut g = [0.0; MAX_DIM];
        for t in &self.terms {
            let s = -t.amplitude * 2.0 * PI * t.argument(x).sin();
            for (gi, k) in g.iter_mut().zip(&t.frequency) {
                *gi += s * f64::from(*k);
            }
        }
        g
    }
}

/// `L(x, v) = ½ vᵀMv − V(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableLagrangian {
    dim: usize,
    mass: [[f64; MAX_DIM]; MAX_DIM],
    mass_inv: [[f64; MAX_DIM]; MAX_DIM],
    potential: TrigPolynomial,
}

impl SeparableLagrangian {
    /// `mass` is the row-major `d×d` mass matrix.
    pub fn new(mass: &[f64], potential: TrigPolynomial) -> Result<Self> {
        let dim = potential.dimension();
        let (m, inv) = mass_matrix(dim, mass)?;
        Ok(Self {
            dim,
            mass: m,
            mass_inv: inv,
            potential,
        })
    }

    /// Unit mass, no potential.
    pub fn free(dim: usize) -> Result<Self> {
        let mass: Vec<f64> = identity(dim);
        Self::new(&mass, TrigPolynomial::zero(dim))
    }

    /// Unit mass with the given potential.
    pub fn mechanical(potential: TrigPolynomial) -> Result<Self> {
        let mass = identity(potential.dimension());
        Self::new(&mass, potential)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn potential(&self) -> &TrigPolynomial {
        &self.potential
    }

    pub fn mass(&self) -> &[[f64; MAX_DIM]; MAX_DIM] {
        &self.mass
    }

    #[inline]
    fn kinetic(&self, v: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                e += v[i] * self.mass[i][j] * v[j];
            }
        }
        0.5 * e
    }

    #[inline]
    fn mass_times(&self, v: &[f64]) -> Coords {
        mat_vec(&self.mass, v, self.dim)
    }

    /// `M⁻¹ b`.
    #[inline]
    pub fn solve_mass(&self, b: &[f64]) -> Coords {
        mat_vec(&self.mass_inv, b, self.dim)
    }
}

fn identity(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

#[inline]
fn mat_vec(m: &[[f64; MAX_DIM]; MAX_DIM], v: &[f64], dim: usize) -> Coords {
    let mut out = [0.0; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

type Matrix = [[f64; MAX_DIM]; MAX_DIM];

fn mass_matrix(dim: usize, mass: &[f64]) -> Result<(Matrix, Matrix)> {
    check_dim(dim)?;
    if mass.len() != dim * dim {
        return Err(Error::Config(format!(
            "mass matrix has {} entries, expected {}",
            mass.len(),
            dim * dim
        )));
    }
    if mass.iter().any(|m| !m.is_finite()) {
        return Err(Error::Config("mass matrix has non-finite entries".into()));
    }
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = mass[i * dim + j];
        }
    }
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    if dim == 1 {
        if m[0][0] <= 0.0 {
            return Err(Error::Config("mass matrix is not positive definite".into()));
        }
        inv[0][0] = 1.0 / m[0][0];
    } else {
        if m[0][1] != m[1][0] {
            return Err(Error::Config("mass matrix is not symmetric".into()));
        }
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        // Sylvester's criterion
        if m[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::Config("mass matrix is not positive definite".into()));
        }
        inv[0][0] = m[1][1] / det;
        inv[1][1] = m[0][0] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
    }
    Ok((m, inv))
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")))
    }
}

/// Callback interface for Lagrangians that are not of separable form.
pub trait LagrangianFns: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;
    fn value(&self, x: &[f64], v: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], v: &[f64]) -> Coords;
    fn grad_v(&self, x: &[f64], v: &[f64]) -> Coords;
    /// `m[i][j] = ∂²L/∂x_i∂v_j`.
    fn mixed(&self, x: &[f64], v: &[f64]) -> Mixed;
}

/// `L(x, v) = ½ vᵀMv + A(x)·v − V(x)`: a charged particle in a periodic
/// magnetic field. The mixed derivative `∂²L/∂x_i∂v_j = ∂_i A_j(x)` is
/// bounded, so these models are ferromagnetic.
#[derive(Clone, Debug, PartialEq)]
pub struct MagneticLagrangian {
    base: SeparableLagrangian,
    vector_potential: Vec<TrigPolynomial>,
}

impl MagneticLagrangian {
    pub fn new(base: SeparableLagrangian, vector_potential: Vec<TrigPolynomial>) -> Result<Self> {
        let dim = base.dimension();
        if vector_potential.len() != dim || vector_potential.iter().any(|a| a.dimension() != dim) {
            return Err(Error::Config(format!(
                "vector potential must have {dim} components on T^{dim}"
            )));
        }
        Ok(Self {
            base,
            vector_potential,
        })
    }

    fn a(&self, x: &[f64]) -> Coords {
        let mut out = [0.0; MAX_DIM];
        for (o, a) in out.iter_mut().zip(&self.vector_potential) {
            *o = a.value(x);
        }
        out
    }
}

impl LagrangianFns for MagneticLagrangian {
    fn dimension(&self) -> usize {
        self.base.dim
    }

    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        let a = self.a(x);
        let coupling: f64 = a.iter().zip(v).map(|(ai, vi)| ai * vi).sum();
        self.base.kinetic(v) + coupling - self.base.potential.value(x)
    }

    fn grad_x(&self, x: &[f64], v: &[f64]) -> Coords {
        let mut g = self.base.potential.gradient(x);
        for gi in g.iter_mut() {
            *gi = -*gi;
        }
        for (j, a) in self.vector_potential.iter().enumerate() {
            let da = a.gradient(x);
            for i in 0..self.base.dim {
                g[i] += da[i] * v[j];
            }
        }
        g
    }

    fn grad_v(&self, x: &[f64], v: &[f64]) -> Coords {
        let mut g = self.base.mass_times(v);
        let a = self.a(x);
        for i in 0..self.base.dim {
            g[i] += a[i];
        }
        g
    }

    fn mixed(&self, x: &[f64], _v: &[f64]) -> Mixed {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (j, a) in self.vector_potential.iter().enumerate() {
            let da = a.gradient(x);
            for i in 0..self.base.dim {
                m[i][j] = da[i];
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub enum LagrangianModel {
    Separable(SeparableLagrangian),
    Generic(Arc<dyn LagrangianFns>),
}

impl From<SeparableLagrangian> for LagrangianModel {
    fn from(l: SeparableLagrangian) -> Self {
        LagrangianModel::Separable(l)
    }
}

/// Partial derivatives `(∂_x L, ∂_v L)` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gradients {
    pub dx: Coords,
    pub dv: Coords,
}

impl LagrangianModel {
    /// Wraps callbacks after checking that `∂_v L` is strictly monotone on a
    /// test lattice.
    pub fn generic(fns: Arc<dyn LagrangianFns>) -> Result<Self> {
        check_dim(fns.dimension())?;
        let model = LagrangianModel::Generic(fns);
        check_convexity(&model, 4.0)?;
        Ok(model)
    }

    /// The classical pendulum `½v² − cos(2πx)` on `T^1`.
    pub fn pendulum() -> Self {
        let v = TrigPolynomial::new(1, vec![TrigTerm::new(1.0, &[1], 0.0)]).expect("valid term");
        SeparableLagrangian::mechanical(v).expect("unit mass").into()
    }

    /// `½|v|²` on `T^d`.
    pub fn free(dim: usize) -> Result<Self> {
        Ok(SeparableLagrangian::free(dim)?.into())
    }

    pub fn dimension(&self) -> usize {
        match self {
            LagrangianModel::Separable(s) => s.dim,
            LagrangianModel::Generic(g) => g.dimension(),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, LagrangianModel::Separable(_))
    }

    /// True when `L` provably does not depend on `x`.
    pub fn is_x_independent(&self) -> bool {
        match self {
            LagrangianModel::Separable(s) => s.potential.is_zero(),
            LagrangianModel::Generic(_) => false,
        }
    }

    /// Unchecked evaluation; slices must have length `d`.
    #[inline]
    pub fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        match self {
            LagrangianModel::Separable(s) => s.kinetic(v) - s.potential.value(x),
            LagrangianModel::Generic(g) => g.value(x, v),
        }
    }

    #[inline]
    pub fn gradients(&self, x: &[f64], v: &[f64]) -> Gradients {
        match self {
            LagrangianModel::Separable(s) => {
                let mut dx = s.potential.gradient(x);
                for c in dx.iter_mut() {
                    *c = -*c;
                }
                Gradients {
                    dx,
                    dv: s.mass_times(v),
                }
            }
            LagrangianModel::Generic(g) => Gradients {
                dx: g.grad_x(x, v),
                dv: g.grad_v(x, v),
            },
        }
    }

    pub fn mixed(&self, x: &[f64], v: &[f64]) -> Mixed {
        match self {
            LagrangianModel::Separable(_) => [[0.0; MAX_DIM]; MAX_DIM],
            LagrangianModel::Generic(g) => g.mixed(x, v),
        }
    }

    /// `∂²L/∂v²`; exact for the separable form, central differences of
    /// `∂_v L` otherwise.
    pub fn hessian_v(&self, x: &[f64], v: &[f64]) -> Mixed {
        let d = self.dimension();
        match self {
            LagrangianModel::Separable(s) => s.mass,
            LagrangianModel::Generic(g) => {
                let mut h = [[0.0; MAX_DIM]; MAX_DIM];
                let step = 1e-6;
                for j in 0..d {
                    let mut vp = pad(v);
                    let mut vm = pad(v);
                    vp[j] += step;
                    vm[j] -= step;
                    let gp = g.grad_v(x, &vp[..d]);
                    let gm = g.grad_v(x, &vm[..d]);
                    for i in 0..d {
                        h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
                    }
                }
                h
            }
        }
    }

    /// Energy `∂_vL·v − L`.
    pub fn energy(&self, x: &[f64], v: &[f64]) -> f64 {
        let g = self.gradients(x, v);
        let p: f64 = g.dv.iter().zip(v).map(|(a, b)| a * b).sum();
        p - self.value(x, v)
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite {what}")))
    }
}

fn check_len(model: &LagrangianModel, s: &[f64], what: &str) -> Result<()> {
    if s.len() == model.dimension() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} has {} components, model dimension is {}",
            s.len(),
            model.dimension()
        )))
    }
}

pub fn eval_lagrangian(model: &LagrangianModel, x: &[f64], v: &[f64]) -> Result<f64> {
    check_len(model, x, "position")?;
    check_len(model, v, "velocity")?;
    check_finite(x, "position")?;
    check_finite(v, "velocity")?;
    Ok(model.value(x, v))
}

pub fn eval_gradients(model: &LagrangianModel, x: &[f64], v: &[f64]) -> Result<Gradients> {
    check_len(model, x, "position")?;
    check_len(model, v, "velocity")?;
    check_finite(x, "position")?;
    check_finite(v, "velocity")?;
    Ok(model.gradients(x, v))
}

/// One-step action `τ L(x, Δ/τ)` with `Δ` the minimal torus displacement
/// from `x` to `y`.
pub fn discrete_action(model: &LagrangianModel, tau: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {tau}")));
    }
    check_len(model, x, "position")?;
    check_len(model, y, "position")?;
    check_finite(x, "position")?;
    check_finite(y, "position")?;
    let d = model.dimension();
    let delta = minimal_displacement(x, y);
    let mut v = [0.0; MAX_DIM];
    for i in 0..d {
        v[i] = delta[i] / tau;
    }
    Ok(tau * model.value(x, &v[..d]))
}

/// Certified lower bound `L(x, v) ≥ K|v| + C` on the sampled box `|v| ≤ R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperlinearityConstants {
    pub k: f64,
    pub c_of_k: f64,
    pub velocity_radius: f64,
    pub position_samples: usize,
    pub velocity_samples: usize,
}

pub(crate) fn position_lattice(dim: usize, per_axis: usize) -> Vec<Coords> {
    let mut pts = Vec::new();
    if dim == 1 {
        for i in 0..per_axis {
            pts.push([i as f64 / per_axis as f64, 0.0]);
        }
    } else {
        for i in 0..per_axis {
            for j in 0..per_axis {
                pts.push([i as f64 / per_axis as f64, j as f64 / per_axis as f64]);
            }
        }
    }
    pts
}

fn velocity_lattice(dim: usize, radius: f64, per_axis: usize, ball: bool) -> Vec<Coords> {
    let step = 2.0 * radius / (per_axis - 1) as f64;
    let axis: Vec<f64> = (0..per_axis).map(|i| -radius + i as f64 * step).collect();
    let mut pts = Vec::new();
    if dim == 1 {
        for &a in &axis {
            pts.push([a, 0.0]);
        }
    } else {
        for &a in &axis {
            for &b in &axis {
                if !ball || a * a + b * b <= radius * radius * (1.0 + 1e-12) {
                    pts.push([a, b]);
                }
            }
        }
    }
    pts
}

pub fn superlinearity_constants(
    model: &LagrangianModel,
    k: f64,
    velocity_radius: f64,
) -> Result<SuperlinearityConstants> {
    if !(k > 0.0) || !(velocity_radius > 0.0) || !k.is_finite() || !velocity_radius.is_finite() {
        return Err(Error::Domain("slope and velocity radius must be positive".into()));
    }
    let d = model.dimension();
    let (nx, nv) = if d == 1 { (64, 4001) } else { (16, 121) };
    let xs = position_lattice(d, nx);
    let vs = velocity_lattice(d, velocity_radius, nv, true);
    if xs.is_empty() || vs.is_empty() {
        return Err(Error::Domain("empty superlinearity sample".into()));
    }
    let mut c = f64::INFINITY;
    for x in &xs {
        for v in &vs {
            let val = model.value(&x[..d], &v[..d]) - k * norm(&v[..d]);
            c = c.min(val);
        }
    }
    Ok(SuperlinearityConstants {
        k,
        c_of_k: c,
        velocity_radius,
        position_samples: xs.len(),
        velocity_samples: vs.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FerromagneticReport {
    pub beta_estimate: f64,
    pub is_ferromagnetic: bool,
}

/// Samples the Frobenius norm of `∂²L/∂x∂v` over `T^d × [−R, R]^d`.
pub fn check_ferromagnetic(
    model: &LagrangianModel,
    velocity_radius: f64,
    beta_tol: f64,
) -> Result<FerromagneticReport> {
    if !velocity_radius.is_finite() || velocity_radius < 0.0 || !beta_tol.is_finite() {
        return Err(Error::Domain("velocity box and tolerance must be finite".into()));
    }
    let d = model.dimension();
    let beta = if model.is_separable() {
        0.0
    } else {
        let xs = position_lattice(d, if d == 1 { 64 } else { 16 });
        let vs = velocity_lattice(d, velocity_radius.max(f64::MIN_POSITIVE), 21, false);
        let mut beta: f64 = 0.0;
        for x in &xs {
            for v in &vs {
                let m = model.mixed(&x[..d], &v[..d]);
                let mut f = 0.0;
                for row in m.iter().take(d) {
                    for e in row.iter().take(d) {
                        f += e * e;
                    }
                }
                beta = beta.max(f.sqrt());
            }
        }
        beta
    };
    Ok(FerromagneticReport {
        beta_estimate: beta,
        is_ferromagnetic: beta <= beta_tol,
    })
}

/// Checks `(∂_vL(x,v₁) − ∂_vL(x,v₂))·(v₁ − v₂) > 0` on a lattice of
/// positions and velocity pairs in `[−R, R]^d`.
pub fn check_convexity(model: &LagrangianModel, velocity_radius: f64) -> Result<()> {
    let d = model.dimension();
    let xs = position_lattice(d, if d == 1 { 16 } else { 6 });
    let vs = velocity_lattice(d, velocity_radius, 7, false);
    for x in &xs {
        for (a, v1) in vs.iter().enumerate() {
            for v2 in &vs[a + 1..] {
                let g1 = model.gradients(&x[..d], &v1[..d]).dv;
                let g2 = model.gradients(&x[..d], &v2[..d]).dv;
                let mono: f64 = (0..d).map(|i| (g1[i] - g2[i]) * (v1[i] - v2[i])).sum();
                if !(mono > 0.0) {
                    return Err(Error::Config(format!(
                        "∂_vL is not strictly monotone at x = {:?}",
                        &x[..d]
                    )));
                }
            }
        }
    }
    Ok(())
}
