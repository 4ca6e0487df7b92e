//! Discrete Euler–Lagrange map `Φ_τ`, an RK4 reference for the continuous
//! Euler–Lagrange flow, pseudo-orbit defects and the calibrated-curve
//! residual.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mather::SampledOrbit;
use crate::model::{norm, wrap_unit, Coords, LagrangianModel, Mixed, MAX_DIM};
use crate::phase::{phase_distance, PhaseState};
use crate::weakkam::CalibratedConfiguration;

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
pub const REFINE_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 14;

fn check_state(model: &LagrangianModel, s: &PhaseState) -> Result<()> {
    let d = model.dimension();
    if s.x[..d].iter().chain(&s.v[..d]).all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("non-finite phase state".into()))
    }
}

fn advance_position(x: &Coords, v: &Coords, tau: f64, d: usize) -> Coords {
    let mut y = [0.0; MAX_DIM];
    for i in 0..d {
        y[i] = wrap_unit(x[i] + tau * v[i]);
    }
    y
}

/// `(x, v) ↦ (y, w)` with `y = x + τv` and
/// `∂_vL(x,v) + τ ∂_xL(y,w) − ∂_vL(y,w) = 0`.
///
/// Separable models use the closed form `w = v − τ M⁻¹ ∇V(y)`; others go
/// through [`discrete_el_step_newton`].
pub fn discrete_el_step(model: &LagrangianModel, tau: f64, state: &PhaseState) -> Result<PhaseState> {
    check_tau(tau)?;
    check_state(model, state)?;
    match model {
        LagrangianModel::Separable(s) => {
            let d = s.dimension();
            let y = advance_position(&state.x, &state.v, tau, d);
            let grad = s.potential().gradient(&y[..d]);
            let acc = s.solve_mass(&grad[..d]);
            let mut w = [0.0; MAX_DIM];
            for i in 0..d {
                w[i] = state.v[i] - tau * acc[i];
            }
            Ok(PhaseState { x: y, v: w })
        }
        LagrangianModel::Generic(_) => discrete_el_step_newton(model, tau, state),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time step must be positive, got {tau}")))
    }
}

fn solve2(a: &Mixed, b: &[f64], d: usize) -> Option<Coords> {
    let mut out = [0.0; MAX_DIM];
    if d == 1 {
        if a[0][0] == 0.0 {
            return None;
        }
        out[0] = b[0] / a[0][0];
    } else {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        out[0] = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
        out[1] = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
    }
    Some(out)
}

/// Damped Newton solve of the implicit step equation from `w₀ = v`.
pub fn discrete_el_step_newton(model: &LagrangianModel, tau: f64, state: &PhaseState) -> Result<PhaseState> {
    check_tau(tau)?;
    check_state(model, state)?;
    let d = model.dimension();
    let y = advance_position(&state.x, &state.v, tau, d);
    let p0 = model.gradients(&state.x[..d], &state.v[..d]).dv;
    let scale = 1.0 + norm(&p0[..d]);
    let residual = |w: &Coords| -> Coords {
        let g = model.gradients(&y[..d], &w[..d]);
        let mut f = [0.0; MAX_DIM];
        for i in 0..d {
            f[i] = p0[i] + tau * g.dx[i] - g.dv[i];
        }
        f
    };
    let mut w = state.v;
    let mut f = residual(&w);
    let mut fnorm = norm(&f[..d]);
    for _ in 0..NEWTON_MAX_ITER {
        if fnorm <= NEWTON_TOL * scale {
            return Ok(PhaseState { x: y, v: w });
        }
        let mixed = model.mixed(&y[..d], &w[..d]);
        let hess = model.hessian_v(&y[..d], &w[..d]);
        let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for j in 0..d {
                jac[i][j] = tau * mixed[i][j] - hess[i][j];
            }
        }
        let neg_f: Vec<f64> = f[..d].iter().map(|c| -c).collect();
        let delta = solve2(&jac, &neg_f, d)
            .ok_or_else(|| Error::Flow(format!("singular Newton system, residual {fnorm:e}")))?;
        let mut step = 1.0;
        loop {
            let mut trial = w;
            for i in 0..d {
                trial[i] += step * delta[i];
            }
            let ft = residual(&trial);
            let ftn = norm(&ft[..d]);
            if ftn < fnorm || step < 1e-9 {
                w = trial;
                f = ft;
                fnorm = ftn;
                break;
            }
            step *= 0.5;
        }
    }
    if fnorm <= NEWTON_TOL * scale {
        return Ok(PhaseState { x: y, v: w });
    }
    Err(Error::Flow(format!(
        "Newton did not converge in {NEWTON_MAX_ITER} iterations, residual {fnorm:e}"
    )))
}

/// Acceleration from the Euler–Lagrange equation
/// `∂²_vL v̇ = ∂_xL − (∂²L/∂x∂v)ᵀ v`.
fn acceleration(model: &LagrangianModel, x: &[f64], v: &[f64]) -> Result<Coords> {
    let d = model.dimension();
    match model {
        LagrangianModel::Separable(s) => {
            let g = s.potential().gradient(x);
            let a = s.solve_mass(&g[..d]);
            let mut out = [0.0; MAX_DIM];
            for i in 0..d {
                out[i] = -a[i];
            }
            Ok(out)
        }
        LagrangianModel::Generic(_) => {
            let g = model.gradients(x, v);
            let mixed = model.mixed(x, v);
            let hess = model.hessian_v(x, v);
            let mut rhs = [0.0; MAX_DIM];
            for i in 0..d {
                rhs[i] = g.dx[i];
                for j in 0..d {
                    rhs[i] -= mixed[j][i] * v[j];
                }
            }
            solve2(&hess, &rhs[..d], d).ok_or_else(|| Error::Flow("singular velocity Hessian".into()))
        }
    }
}

/// Unwrapped RK4 with `steps` equal substeps.
fn rk4(model: &LagrangianModel, x: Coords, v: Coords, t: f64, steps: usize) -> Result<(Coords, Coords)> {
    let d = model.dimension();
    let h = t / steps as f64;
    let (mut x, mut v) = (x, v);
    let add = |a: &Coords, b: &Coords, s: f64| {
        let mut o = *a;
        for i in 0..d {
            o[i] += s * b[i];
        }
        o
    };
    for _ in 0..steps {
        let k1x = v;
        let k1v = acceleration(model, &x[..d], &v[..d])?;
        let (x2, v2) = (add(&x, &k1x, h / 2.0), add(&v, &k1v, h / 2.0));
        let k2x = v2;
        let k2v = acceleration(model, &x2[..d], &v2[..d])?;
        let (x3, v3) = (add(&x, &k2x, h / 2.0), add(&v, &k2v, h / 2.0));
        let k3x = v3;
        let k3v = acceleration(model, &x3[..d], &v3[..d])?;
        let (x4, v4) = (add(&x, &k3x, h), add(&v, &k3v, h));
        let k4x = v4;
        let k4v = acceleration(model, &x4[..d], &v4[..d])?;
        for i in 0..d {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    Ok((x, v))
}

fn unwrapped(model: &LagrangianModel, state: &PhaseState, t: f64, dt: f64) -> Result<(Coords, Coords)> {
    let d = model.dimension();
    let mut steps = (t / dt).ceil().max(1.0) as usize;
    let mut prev = rk4(model, state.x, state.v, t, steps)?;
    for _ in 0..MAX_HALVINGS {
        steps *= 2;
        let next = rk4(model, state.x, state.v, t, steps)?;
        let mut diff = 0.0;
        for i in 0..d {
            diff += (next.0[i] - prev.0[i]).powi(2) + (next.1[i] - prev.1[i]).powi(2);
        }
        prev = next;
        if diff.sqrt() <= REFINE_TOL {
            return Ok(prev);
        }
    }
    Err(Error::Flow(format!(
        "RK4 refinement did not reach {REFINE_TOL:e} after {MAX_HALVINGS} halvings"
    )))
}

/// Time-`t` map of the continuous Euler–Lagrange flow, accepted once two
/// successive step halvings agree to `10⁻¹⁰`.
pub fn continuous_flow_reference(
    model: &LagrangianModel,
    state: &PhaseState,
    t: f64,
    dt: f64,
) -> Result<PhaseState> {
    check_state(model, state)?;
    if !(dt > 0.0) || !(dt <= t) || !t.is_finite() {
        return Err(Error::Domain(format!("need 0 < dt ≤ t, got dt = {dt}, t = {t}")));
    }
    let d = model.dimension();
    let (mut x, v) = unwrapped(model, state, t, dt)?;
    for c in x.iter_mut().take(d) {
        *c = wrap_unit(*c);
    }
    Ok(PhaseState { x, v })
}

/// Samples `count` states `φ^{k·dt}(start)`, each segment integrated with
/// substeps of `dt/4`.
pub fn sample_orbit(model: &LagrangianModel, start: &PhaseState, dt: f64, count: usize) -> Result<SampledOrbit> {
    let mut states = Vec::with_capacity(count);
    let mut cur = *start;
    for k in 0..count {
        if k > 0 {
            cur = continuous_flow_reference(model, &cur, dt, dt / 4.0)?;
        }
        states.push(cur);
    }
    Ok(SampledOrbit { dt, states })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PseudoOrbitReport {
    pub tau: f64,
    pub max_defect: f64,
    /// `defects[k] = d(Φ_τ(ζ_k), ζ_{k+1})`.
    pub defects: Vec<f64>,
    /// `ζ_0 … ζ_n`.
    pub orbit: Vec<PhaseState>,
}

impl PseudoOrbitReport {
    /// CSV rows `k,x..,v..,defect` (defect empty on the last sample).
    pub fn write_csv<W: Write>(&self, dim: usize, mut w: W) -> Result<()> {
        let header = if dim == 1 { "k,x,v,defect" } else { "k,x,y,vx,vy,defect" };
        writeln!(w, "{header}")?;
        for (k, z) in self.orbit.iter().enumerate() {
            let mut fields = vec![k.to_string()];
            fields.extend(z.x[..dim].iter().chain(&z.v[..dim]).map(|c| c.to_string()));
            fields.push(self.defects.get(k).map(|d| d.to_string()).unwrap_or_default());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Largest one-step gap between `Φ_τ` applied to the sampled continuous
/// orbit `ζ_k = φ^{kτ}(start)` and the next sample.
pub fn pseudo_orbit_defect(
    model: &LagrangianModel,
    tau: f64,
    start: &PhaseState,
    n: usize,
) -> Result<PseudoOrbitReport> {
    if n == 0 {
        return Err(Error::Config("need at least one step".into()));
    }
    check_tau(tau)?;
    let mut orbit = Vec::with_capacity(n + 1);
    let mut defects = Vec::with_capacity(n);
    let mut cur = *start;
    orbit.push(cur);
    for _ in 0..n {
        let next = continuous_flow_reference(model, &cur, tau, tau / 8.0)?;
        let step = discrete_el_step(model, tau, &cur)?;
        defects.push(phase_distance(&step, &next));
        orbit.push(next);
        cur = next;
    }
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    Ok(PseudoOrbitReport {
        tau,
        max_defect,
        defects,
        orbit,
    })
}

/// `|[u(x₀) − u(x₋ₙ)] − [Σ 𝓛_τ + nτα]|`: how far the calibration identity
/// is from holding with `L̄(τ)` replaced by `−α`.
pub fn calibrated_curve_residual(config: &CalibratedConfiguration, alpha_ref: f64, u: &[f64]) -> Result<f64> {
    if config.nodes.len() < 2 {
        return Err(Error::Config("configuration needs at least two points".into()));
    }
    let n = config.steps.len() as f64;
    let first = *config.nodes.first().expect("non-empty");
    let last = *config.nodes.last().expect("non-empty");
    let lhs = u[first] - u[last];
    let rhs = config.total_cost() + n * config.tau * alpha_ref;
    Ok((lhs - rhs).abs())
}
