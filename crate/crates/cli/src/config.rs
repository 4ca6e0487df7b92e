//! Run configuration. TOML is canonical, JSON is accepted; the file format
//! is picked from the extension (`.json` means JSON, anything else TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use weakkam::graph::{DEFAULT_MEMORY_CAP, DEFAULT_SAFETY};
use weakkam::mather::Penalty;
use weakkam::model::{MagneticLagrangian, SeparableLagrangian, TrigPolynomial, TrigTerm};
use weakkam::sweep::{EpsilonRule, HCoupling};
use weakkam::weakkam::CycleMethod;
use weakkam::{Error, LagrangianModel, PhasePoint, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// `½ vᵀMv − V(x)`.
    Separable,
    /// `½ vᵀMv + A(x)·v − V(x)`.
    Magnetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub form: Form,
    pub dim: usize,
    /// Row-major mass matrix; identity when omitted.
    #[serde(default)]
    pub mass: Option<Vec<f64>>,
    #[serde(default)]
    pub potential: Vec<TrigTerm>,
    /// One list of terms per component of `A`.
    #[serde(default)]
    pub vector_potential: Option<Vec<Vec<TrigTerm>>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<LagrangianModel> {
        let potential = TrigPolynomial::new(self.dim, self.potential.clone())?;
        let base = match &self.mass {
            Some(m) => SeparableLagrangian::new(m, potential)?,
            None => SeparableLagrangian::mechanical(potential)?,
        };
        match self.form {
            Form::Separable => {
                if self.vector_potential.is_some() {
                    return Err(Error::Config("vector_potential requires form = \"magnetic\"".into()));
                }
                Ok(base.into())
            }
            Form::Magnetic => {
                let comps = self
                    .vector_potential
                    .as_ref()
                    .ok_or_else(|| Error::Config("magnetic form needs vector_potential".into()))?;
                let a = comps
                    .iter()
                    .map(|terms| TrigPolynomial::new(self.dim, terms.clone()))
                    .collect::<Result<Vec<_>>>()?;
                LagrangianModel::generic(Arc::new(MagneticLagrangian::new(base, a)?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpec {
    /// User-supplied bound `D`; derived from a coarse solve when omitted.
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}

impl Default for VelocitySpec {
    fn default() -> Self {
        Self {
            d: None,
            safety: DEFAULT_SAFETY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_method")]
    pub method: CycleMethod,
    #[serde(default = "default_cap")]
    pub memory_cap: usize,
}

fn default_method() -> CycleMethod {
    CycleMethod::Auto
}

fn default_cap() -> usize {
    DEFAULT_MEMORY_CAP
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: CycleMethod::Auto,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    /// Random start nodes for backward calibrated configurations.
    #[serde(default = "default_samples")]
    pub calibration_samples: usize,
    #[serde(default = "default_steps")]
    pub calibration_steps: usize,
}

fn default_samples() -> usize {
    10
}

fn default_steps() -> usize {
    100
}

impl Default for SolveSpec {
    fn default() -> Self {
        Self {
            calibration_samples: default_samples(),
            calibration_steps: default_steps(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    /// Calibration tolerance; `10·residual + 10⁻⁹` when omitted.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

/// Phase point written with `d` components, e.g. `{ x = [0.25], v = [0.0] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PointSpec {
    pub fn to_point(&self, dim: usize) -> Result<PhasePoint> {
        if self.x.len() != dim || self.v.len() != dim {
            return Err(Error::Config(format!("point {self:?} must have {dim} position and velocity components")));
        }
        if self.x.iter().chain(&self.v).any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("point {self:?} has non-finite components")));
        }
        let x: Vec<f64> = self.x.iter().map(|c| c.rem_euclid(1.0)).collect();
        Ok(PhasePoint::new(&x, &self.v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub start: PointSpec,
    pub steps: usize,
    /// Time steps for the pseudo-orbit defect; the run's `tau` when omitted.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSpec {
    pub penalty: Penalty,
    pub epsilon_pen: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    FullZeroSection,
    PointList { points: Vec<PointSpec> },
    /// CSV with columns `x[,y],v[,w]`, relative paths resolved against the
    /// config file.
    UserCsv { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub taus: Vec<f64>,
    #[serde(default)]
    pub coupling: HCoupling,
    #[serde(default)]
    pub epsilon: EpsilonRule,
    pub reference: ReferenceSpec,
    pub alpha_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Nodes per axis for single-τ subcommands.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub sets: SetSpec,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
    #[serde(default)]
    pub select: Option<SelectSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Root under which run directories are created.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(ReferenceSpec::UserCsv { path: p }) = cfg.sweep.as_mut().map(|s| &mut s.reference) {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self, needs_grid: bool) -> Result<LagrangianModel> {
        let model = self.model.build()?;
        if let Some(d) = self.velocity.d {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Config(format!("velocity bound must be positive, got {d}")));
            }
        }
        if !(self.velocity.safety > 0.0) {
            return Err(Error::Config("safety factor must be positive".into()));
        }
        if needs_grid {
            self.grid_n()?;
            self.tau()?;
        }
        Ok(model)
    }

    pub fn grid_n(&self) -> Result<usize> {
        self.n.ok_or_else(|| Error::Config("missing `n` (nodes per axis)".into()))
    }

    pub fn tau(&self) -> Result<f64> {
        match self.tau {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(Error::Config(format!("tau must be positive, got {t}"))),
            None => Err(Error::Config("missing `tau`".into())),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output root so the
    /// same run lands in the same directory name wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// Reads `x[,y],v[,w]` rows; a header line is skipped when it does not
/// parse as numbers.
pub fn read_points_csv(path: &Path, dim: usize) -> Result<Vec<PhasePoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() == 2 * dim => out.push(PhasePoint::new(&v[..dim], &v[dim..])),
            Ok(v) => {
                return Err(Error::Data(format!(
                    "{} line {}: expected {} columns, got {}",
                    path.display(),
                    i + 1,
                    2 * dim,
                    v.len()
                )))
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Data(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}
