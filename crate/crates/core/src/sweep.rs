//! τ-sweeps: one-sided Hausdorff excesses between discrete and reference
//! sets, and the Kuratowski trend table built from them.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aubry::{aubry_set, calibration_graph, default_epsilon, defect_field};
use crate::error::{Error, Result};
use crate::export::{self, Line};
use crate::flow::calibrated_curve_residual;
use crate::graph::{build_edge_graph_with_cap, build_grid, velocity_bound, VelocityBound, DEFAULT_MEMORY_CAP};
use crate::mather::mather_set;
use crate::model::{norm, LagrangianModel};
use crate::phase::{phase_distance, PhasePoint, PhaseSet};
use crate::weakkam::{backward_calibrated_configuration, solve_weak_kam_with, CycleMethod, SolveOptions};

/// `max_{a∈A} min_{b∈B} d(a, b)`.
pub fn hausdorff_excess(a: &PhaseSet, b: &PhaseSet) -> Result<f64> {
    excess_points(&a.points, &b.points)
}

fn excess_points(a: &[PhasePoint], b: &[PhasePoint]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("excess of or into an empty set".into()));
    }
    Ok(a.iter()
        .map(|p| b.iter().map(|q| phase_distance(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceShape {
    /// `T^d × {0}`.
    FullZeroSection,
    PointList { points: Vec<PhasePoint> },
    /// Points read from a user CSV; `source` is informational.
    UserCsv { source: String, points: Vec<PhasePoint> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub dim: usize,
    pub shape: ReferenceShape,
    /// Critical value `α(H)`; the sweep tracks `|L̄(τ) + α(H)|`.
    pub alpha_h: f64,
}

/// Samples per axis used to approximate the zero section from the
/// reference side.
const ZERO_SECTION_SAMPLES: [usize; 2] = [20_000, 200];

impl ReferenceSet {
    pub fn new(dim: usize, shape: ReferenceShape, alpha_h: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        match &shape {
            ReferenceShape::FullZeroSection => {}
            ReferenceShape::PointList { points } | ReferenceShape::UserCsv { points, .. } => {
                if points.is_empty() {
                    return Err(Error::Config("reference set is empty".into()));
                }
                for p in points {
                    let ok = p.x[..dim].iter().all(|c| (0.0..1.0).contains(c))
                        && p.v[..dim].iter().all(|c| c.is_finite());
                    if !ok {
                        return Err(Error::Config(format!("reference point {p:?} outside [0,1)^d × R^d")));
                    }
                }
            }
        }
        if !alpha_h.is_finite() {
            return Err(Error::Config("α(H) must be finite".into()));
        }
        Ok(Self { dim, shape, alpha_h })
    }

    /// Points `argmax V × {0}`.
    pub fn points(dim: usize, points: Vec<PhasePoint>, alpha_h: f64) -> Result<Self> {
        Self::new(dim, ReferenceShape::PointList { points }, alpha_h)
    }

    /// `e(S → ref)`; exact for the zero section (`dist = |v|`).
    pub fn excess_from(&self, set: &PhaseSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Domain("excess of an empty set".into()));
        }
        match &self.shape {
            ReferenceShape::FullZeroSection => {
                Ok(set.points.iter().map(|p| norm(&p.v[..self.dim])).fold(0.0, f64::max))
            }
            ReferenceShape::PointList { points } | ReferenceShape::UserCsv { points, .. } => {
                excess_points(&set.points, points)
            }
        }
    }

    /// `e(ref → S)`; the zero section is sampled on a regular lattice.
    pub fn excess_into(&self, set: &PhaseSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Domain("excess into an empty set".into()));
        }
        match &self.shape {
            ReferenceShape::FullZeroSection => {
                let m = ZERO_SECTION_SAMPLES[self.dim - 1];
                let mut samples = Vec::with_capacity(m.pow(self.dim as u32));
                for i in 0..m.pow(self.dim as u32) {
                    let x = [(i % m) as f64 / m as f64, (i / m) as f64 / m as f64];
                    let x = if self.dim == 1 { [x[0], 0.0] } else { x };
                    samples.push(PhasePoint { x, v: [0.0; 2] });
                }
                excess_points(&samples, &set.points)
            }
            ReferenceShape::PointList { points } | ReferenceShape::UserCsv { points, .. } => {
                excess_points(points, &set.points)
            }
        }
    }
}

/// Spatial resolution as a function of `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum HCoupling {
    /// `h = min(c_h·τ², τD/4)`, `N = ⌈1/h⌉`.
    Quadratic { c_h: f64 },
    Fixed { n: usize },
}

impl Default for HCoupling {
    fn default() -> Self {
        HCoupling::Quadratic { c_h: 1.0 }
    }
}

impl HCoupling {
    pub fn nodes(&self, tau: f64, d: f64) -> Result<usize> {
        match *self {
            HCoupling::Fixed { n } => Ok(n),
            HCoupling::Quadratic { c_h } => {
                if !(c_h > 0.0) {
                    return Err(Error::Config(format!("c_h must be positive, got {c_h}")));
                }
                let h = (c_h * tau * tau).min(tau * d / 4.0);
                Ok((1.0 / h - 1e-9).ceil() as usize)
            }
        }
    }
}

/// Calibration tolerance used for set extraction at each `τ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum EpsilonRule {
    /// `10·residual + 10⁻⁹`.
    #[default]
    Residual,
    /// `10·residual + h`.
    ResidualPlusH,
    Fixed { value: f64 },
}

impl EpsilonRule {
    pub fn epsilon(&self, residual: f64, h: f64) -> f64 {
        match *self {
            EpsilonRule::Residual => default_epsilon(residual),
            EpsilonRule::ResidualPlusH => 10.0 * residual + h,
            EpsilonRule::Fixed { value } => value,
        }
    }
}

#[derive(Clone)]
pub struct SweepPlan {
    pub model: LagrangianModel,
    pub taus: Vec<f64>,
    pub coupling: HCoupling,
    pub epsilon: EpsilonRule,
    pub reference: ReferenceSet,
    /// Derived from the model when `None`.
    pub velocity_bound: Option<VelocityBound>,
    pub memory_cap: usize,
    pub method: CycleMethod,
}

impl SweepPlan {
    pub fn new(model: LagrangianModel, taus: Vec<f64>, reference: ReferenceSet) -> Self {
        Self {
            model,
            taus,
            coupling: HCoupling::default(),
            epsilon: EpsilonRule::default(),
            reference,
            velocity_bound: None,
            memory_cap: DEFAULT_MEMORY_CAP,
            method: CycleMethod::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::Config("empty τ list".into()));
        }
        if self.taus.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Config("τ values must be positive".into()));
        }
        if self.taus.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("τ list must be strictly decreasing".into()));
        }
        if self.reference.dim != self.model.dimension() {
            return Err(Error::Config("reference and model dimensions differ".into()));
        }
        if let EpsilonRule::Fixed { value } = self.epsilon {
            if !(value >= 0.0) {
                return Err(Error::Config(format!("ε must be nonnegative, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub n: usize,
    pub h: f64,
    pub epsilon: f64,
    pub bar_l: f64,
    pub bar_l_error: f64,
    pub residual: f64,
    /// `e(A_τ → A_ref)`.
    pub aubry_out: f64,
    /// `e(A_ref → A_τ)`.
    pub aubry_in: f64,
    pub mather_out: f64,
    pub mather_in: f64,
    pub aubry_size: usize,
    pub mather_size: usize,
    /// Calibration identity defect with `L̄(τ)` replaced by `−α`, along a
    /// backward calibrated configuration of duration 1 ending at node 0.
    pub calibrated_residual: f64,
    #[serde(skip)]
    pub runtime_secs: f64,
    #[serde(skip)]
    pub aubry: Option<PhaseSet>,
    #[serde(skip)]
    pub mather: Option<PhaseSet>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowOutcome {
    pub tau: f64,
    pub row: Option<SweepRow>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub velocity_bound: f64,
    pub rows: Vec<RowOutcome>,
}

impl SweepReport {
    pub fn completed(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter_map(|r| r.row.as_ref())
    }

    /// One line per τ; runtimes are left out so identical plans give
    /// identical files.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "tau,n,h,epsilon,bar_l,bar_l_error,residual,aubry_out,aubry_in,mather_out,mather_in,aubry_size,mather_size,calibrated_residual,error"
        )?;
        for r in &self.rows {
            match (&r.row, &r.error) {
                (Some(s), _) => writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
                    s.tau,
                    s.n,
                    s.h,
                    s.epsilon,
                    s.bar_l,
                    s.bar_l_error,
                    s.residual,
                    s.aubry_out,
                    s.aubry_in,
                    s.mather_out,
                    s.mather_in,
                    s.aubry_size,
                    s.mather_size,
                    s.calibrated_residual
                )?,
                (None, e) => writeln!(
                    w,
                    "{},,,,,,,,,,,,,,\"{}\"",
                    r.tau,
                    e.as_deref().unwrap_or("").replace('"', "'")
                )?,
            }
        }
        Ok(())
    }

    /// Log–log trends of the four excesses and `|L̄ + α|` against `τ`.
    pub fn write_svg<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<&SweepRow> = self.completed().collect();
        let series = |label: &str, f: fn(&SweepRow) -> f64| Line {
            label: label.into(),
            points: rows.iter().map(|r| (r.tau, f(r))).collect(),
        };
        export::line_svg(
            w,
            "sweep trends",
            "tau",
            "excess",
            &[
                series("A_tau -> A_ref", |r| r.aubry_out),
                series("A_ref -> A_tau", |r| r.aubry_in),
                series("M_tau -> M_ref", |r| r.mather_out),
                series("M_ref -> M_tau", |r| r.mather_in),
                series("|barL + alpha|", |r| r.bar_l_error),
            ],
            true,
        )
    }
}

/// Runs the plan row by row; a failing row is recorded and the sweep
/// continues.
pub fn tau_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    let bound = match &plan.velocity_bound {
        Some(b) => b.clone(),
        None => velocity_bound(&plan.model, None, crate::graph::DEFAULT_SAFETY)?,
    };
    let mut rows = Vec::with_capacity(plan.taus.len());
    for &tau in &plan.taus {
        match sweep_row(plan, &bound, tau) {
            Ok(row) => rows.push(RowOutcome {
                tau,
                row: Some(row),
                error: None,
            }),
            Err(e) => {
                log::warn!("sweep row τ = {tau} failed: {e}");
                rows.push(RowOutcome {
                    tau,
                    row: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(SweepReport {
        velocity_bound: bound.d,
        rows,
    })
}

fn sweep_row(plan: &SweepPlan, bound: &VelocityBound, tau: f64) -> Result<SweepRow> {
    let start = Instant::now();
    let n = plan.coupling.nodes(tau, bound.d)?;
    let grid = build_grid(plan.model.dimension(), n)?;
    let h = grid.spacing();
    let graph = build_edge_graph_with_cap(grid, &plan.model, tau, bound, plan.memory_cap)?;
    let solution = solve_weak_kam_with(
        &graph,
        SolveOptions {
            method: plan.method,
            tight_tolerance: None,
        },
    )?;
    let epsilon = plan.epsilon.epsilon(solution.residual, h);
    let defects = defect_field(&graph, &solution)?;
    let aubry = aubry_set(&calibration_graph(&defects, epsilon)?);
    let mather = mather_set(&graph, &solution, epsilon)?;
    let steps = (1.0 / tau - 1e-9).ceil().max(1.0) as usize;
    let calibrated = backward_calibrated_configuration(&solution, &graph, 0, steps)?;
    let r = &plan.reference;
    let row = SweepRow {
        tau,
        n,
        h,
        epsilon,
        bar_l: solution.bar_l,
        bar_l_error: (solution.bar_l + r.alpha_h).abs(),
        residual: solution.residual,
        aubry_out: r.excess_from(&aubry)?,
        aubry_in: r.excess_into(&aubry)?,
        mather_out: r.excess_from(&mather)?,
        mather_in: r.excess_into(&mather)?,
        aubry_size: aubry.len(),
        mather_size: mather.len(),
        calibrated_residual: calibrated_curve_residual(&calibrated, r.alpha_h, &solution.u)?,
        runtime_secs: start.elapsed().as_secs_f64(),
        aubry: Some(aubry),
        mather: Some(mather),
    };
    log::info!(
        "τ = {tau}: N = {n}, L̄ = {}, e(A→ref) = {}, e(ref→A) = {}",
        row.bar_l,
        row.aubry_out,
        row.aubry_in
    );
    Ok(row)
}

/// Relative slack allowed before a rise in excess breaks monotonicity.
pub const NOISE_BAND: f64 = 0.2;
/// Excess values at or below this count as zero.
pub const ZERO_EXCESS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    /// `"aubry"` or `"mather"`.
    pub set: String,
    /// `"limsup"` for discrete → reference, `"liminf"` for the converse.
    pub direction: String,
    pub monotone: bool,
    pub first: f64,
    pub last: f64,
    /// Least-squares slope of `log e` against `log τ`, when at least two
    /// values are positive.
    pub slope: Option<f64>,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KuratowskiReport {
    pub entries: Vec<TrendEntry>,
}

impl KuratowskiReport {
    pub fn entry(&self, set: &str, direction: &str) -> Option<&TrendEntry> {
        self.entries.iter().find(|e| e.set == set && e.direction == direction)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "set,direction,monotone,first,last,slope,consistent")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.set,
                e.direction,
                e.monotone,
                e.first,
                e.last,
                e.slope.map(|s| s.to_string()).unwrap_or_default(),
                e.consistent
            )?;
        }
        Ok(())
    }
}

/// Non-increasing up to the noise band: `e_{k+1} ≤ (1 + band)·e_k`, with
/// values at or below [`ZERO_EXCESS`] treated as zero.
pub fn monotone_within_band(values: &[f64], band: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= ZERO_EXCESS || w[1] <= (1.0 + band) * w[0])
}

fn log_log_slope(taus: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = taus
        .iter()
        .zip(values)
        .filter(|(_, e)| **e > 0.0)
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Trend verdict per set and direction. A column counts as trending to
/// zero when it is monotone within the band and its last value is zero or
/// at most three quarters of its first.
pub fn kuratowski_report(report: &SweepReport) -> Result<KuratowskiReport> {
    let rows: Vec<&SweepRow> = report.completed().collect();
    if rows.len() < 3 {
        return Err(Error::Config(format!(
            "Kuratowski trends need at least 3 completed rows, got {}",
            rows.len()
        )));
    }
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    type Column = (&'static str, &'static str, fn(&SweepRow) -> f64);
    let columns: [Column; 4] = [
        ("aubry", "limsup", |r| r.aubry_out),
        ("aubry", "liminf", |r| r.aubry_in),
        ("mather", "limsup", |r| r.mather_out),
        ("mather", "liminf", |r| r.mather_in),
    ];
    let entries = columns
        .iter()
        .map(|(set, direction, f)| {
            let values: Vec<f64> = rows.iter().map(|r| f(r)).collect();
            let monotone = monotone_within_band(&values, NOISE_BAND);
            let first = values[0];
            let last = *values.last().expect("at least three rows");
            let consistent = monotone && (last <= ZERO_EXCESS || last <= 0.75 * first);
            TrendEntry {
                set: set.to_string(),
                direction: direction.to_string(),
                monotone,
                first,
                last,
                slope: log_log_slope(&taus, &values),
                consistent,
            }
        })
        .collect();
    Ok(KuratowskiReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::SetKind;

    fn set(pts: &[(f64, f64)]) -> PhaseSet {
        PhaseSet::new(
            1,
            SetKind::Reference,
            pts.iter().map(|&(x, v)| PhasePoint::new(&[x], &[v])).collect(),
        )
    }

    #[test]
    fn excess_examples() {
        let a = set(&[(0.0, 0.0)]);
        let b = set(&[(0.0, 0.0), (0.4, 0.0)]);
        assert_eq!(hausdorff_excess(&a, &b).unwrap(), 0.0);
        assert!((hausdorff_excess(&b, &a).unwrap() - 0.4).abs() < 1e-15);
        let c = set(&[(0.9, 0.0)]);
        let d = set(&[(0.1, 0.0)]);
        assert!((hausdorff_excess(&c, &d).unwrap() - 0.2).abs() < 1e-15);
        assert!(hausdorff_excess(&a, &set(&[])).is_err());
        assert_eq!(hausdorff_excess(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn zero_section_excess() {
        let r = ReferenceSet::new(1, ReferenceShape::FullZeroSection, 0.0).unwrap();
        let s = set(&[(0.0, 0.25), (0.5, -0.5)]);
        assert_eq!(r.excess_from(&s).unwrap(), 0.5);
        // farthest zero-section point from {0, 0.5}×{·} is at x = 0.25
        let into = r.excess_into(&set(&[(0.0, 0.0), (0.5, 0.0)])).unwrap();
        assert!((into - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coupling_rule() {
        let q = HCoupling::default();
        assert_eq!(q.nodes(0.1, 10.0).unwrap(), 100);
        assert_eq!(q.nodes(0.025, 10.0).unwrap(), 1600);
        // τD/4 binds for small D
        assert_eq!(q.nodes(0.1, 0.08).unwrap(), 500);
    }

    #[test]
    fn trend_flags() {
        assert!(monotone_within_band(&[1.0, 1.1, 0.5, 0.0], 0.2));
        assert!(!monotone_within_band(&[1.0, 1.3], 0.2));
        let s = log_log_slope(&[0.4, 0.2, 0.1], &[0.16, 0.04, 0.01]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_report_is_config_error() {
        let report = SweepReport {
            velocity_bound: 1.0,
            rows: vec![RowOutcome {
                tau: 0.1,
                row: None,
                error: Some("x".into()),
            }],
        };
        assert!(kuratowski_report(&report).unwrap_err().is_config());
    }
}
