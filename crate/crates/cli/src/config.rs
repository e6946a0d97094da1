//! Experiment configuration (TOML). Unknown keys are rejected.
//!
//! ```toml
//! [field]                 # which coefficient field
//! kind = "example3d"      # example3d | unit_diffusion | constant_drift | tabulated
//! alpha = 1.0
//! beta = 0.2
//! gamma = 0.1
//! xi = 0.5                # constant ξ, or `xi_table = [[t, v], ...]`
//! eta = "sincos"          # zero | e1 | sincos
//!
//! [exponents]             # optional; drives `exponents` and the order in `check`
//! p_b = 3.0
//! p_dsigma = 3.0
//! frp_b = 4.5
//! frq_b = 4.5
//!
//! [grid]                  # PDE grid; dt defaults to half the simplex spacing
//! l = 4.0
//! h = 0.1
//!
//! [chaos]
//! t0 = 1.0
//! m_max = 3
//! n_t = 16
//! test_function = "x1_squared"   # x1 | x1_squared | constant | bump
//!
//! [simulation]
//! n_paths = 1000
//! seed = 7
//! dt = 0.001
//!
//! [thresholds]
//! eps_sigma = 0.5
//! eps_b = 0.5
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use morrey_sde::coeffs::{
    example_field_3d, ConstantTime, FieldRef, FnField, PiecewiseLinearTime, SpaceTimeVecFn,
    Tabulated, TimeFn,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub field: FieldConfig,
    pub exponents: Option<ExponentConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub chaos: ChaosConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Example3d,
    UnitDiffusion,
    ConstantDrift,
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaKind {
    Zero,
    /// `η ≡ e₁`.
    E1,
    /// `η = (sin x₂, cos x₁, ½)`.
    Sincos,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKind,
    /// Spatial dimension (unit_diffusion, constant_drift, tabulated).
    pub d: Option<usize>,
    /// Noise dimension (unit_diffusion, constant_drift, tabulated).
    pub d1: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub xi_table: Option<Vec<[f64; 2]>>,
    pub eta: EtaKind,
    /// Constant drift vector (constant_drift).
    pub drift: Option<Vec<f64>>,
    /// Source file (tabulated).
    pub path: Option<PathBuf>,
    pub fd_step: f64,
    pub delta: Option<f64>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            kind: FieldKind::Example3d,
            d: None,
            d1: None,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            xi: 0.0,
            xi_table: None,
            eta: EtaKind::Zero,
            drift: None,
            path: None,
            fd_step: 1e-3,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    /// Dimension (defaults to `field.d`, then 3).
    pub d: Option<u32>,
    pub p_b: f64,
    pub p_dsigma: f64,
    pub frp_b: f64,
    pub frq_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub l: f64,
    pub h: f64,
    /// PDE step; must divide half the simplex spacing. Defaults to it.
    pub dt: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            l: 4.0,
            h: 0.1,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    X1,
    X1Squared,
    Constant,
    /// `exp(−|x − 0.2·e₁|²)`.
    Bump,
}

impl TestFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::X1 => x[0],
            TestFunction::X1Squared => x[0] * x[0],
            TestFunction::Constant => 1.0,
            TestFunction::Bump => {
                let r2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == 0 { (v - 0.2).powi(2) } else { v * v })
                    .sum();
                (-r2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaosConfig {
    pub t0: f64,
    pub m_max: usize,
    pub n_t: usize,
    /// Minimum gap between simplex node times; only `Δ/2` is supported.
    pub epsilon_clip: Option<f64>,
    pub test_function: TestFunction,
    pub cost_cap: u64,
    /// Tolerance attached to the Parseval diagnostic records.
    pub tolerance: f64,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self {
            t0: 1.0,
            m_max: 3,
            n_t: 16,
            epsilon_clip: None,
            test_function: TestFunction::X1Squared,
            cost_cap: morrey_sde::chaos::DEFAULT_COST_CAP,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Simulated horizon (defaults to `chaos.t0`).
    pub horizon: Option<f64>,
    pub cap_b: f64,
    /// Girsanov truncation level `n`.
    pub girsanov_level: f64,
    pub p0: f64,
    pub q0: f64,
    /// Occupation-time power.
    pub krylov_m: u32,
    /// Also compute the strongness gap (needs a PDE-capable grid).
    pub strongness: bool,
    /// Chaos order of the reconstruction in the strongness gap.
    pub strongness_order: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            seed: 1,
            dt: 1e-3,
            horizon: None,
            cap_b: 0.5,
            girsanov_level: 0.0,
            p0: 3.0,
            q0: 3.0,
            krylov_m: 1,
            strongness: false,
            strongness_order: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub eps_sigma: f64,
    pub eps_b: f64,
    /// Morrey exponent for `Dσ_M`.
    pub p_sigma: f64,
    /// Morrey exponent for `b_M`.
    pub p_drift: f64,
    /// Largest ball / cylinder radius.
    pub rho: f64,
    /// Multiplies the acceptance tolerances in `verify`.
    pub tolerance_scale: f64,
    /// Count wall time against the per-criterion budget in `verify`.
    pub enforce_runtime: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            eps_sigma: 0.5,
            eps_b: 0.5,
            p_sigma: 2.0,
            p_drift: 2.0,
            rho: 1.0,
            tolerance_scale: 1.0,
            enforce_runtime: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads and validates a config file; relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(p), Some(dir)) = (cfg.field.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Range checks and file existence.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let f = &self.field;
        match f.kind {
            FieldKind::Tabulated => match &f.path {
                None => return bad("field.path is required for a tabulated field".into()),
                Some(p) if !p.exists() => {
                    return bad(format!(
                        "field.path: tabulated file {} does not exist",
                        p.display()
                    ))
                }
                _ => {}
            },
            FieldKind::ConstantDrift if f.drift.is_none() => {
                return bad("field.drift is required for a constant_drift field".into());
            }
            _ => {}
        }
        if let (Some(d), Some(d1)) = (f.d, f.d1) {
            if d1 < d || d == 0 {
                return bad(format!("field: need 1 <= d <= d1, got d = {d}, d1 = {d1}"));
            }
        }
        if !(self.grid.l > 0.0 && self.grid.h > 0.0 && self.grid.h < self.grid.l) {
            return bad("grid: need 0 < h < l".into());
        }
        let c = &self.chaos;
        if !(c.t0 > 0.0) || c.n_t == 0 || c.m_max == 0 {
            return bad("chaos: need t0 > 0, n_t >= 1, m_max >= 1".into());
        }
        if let Some(e) = c.epsilon_clip {
            let half = 0.5 * c.t0 / c.n_t as f64;
            if (e - half).abs() > 1e-12 * half {
                return bad(format!(
                    "chaos.epsilon_clip: only half the simplex spacing ({half}) is supported, got {e}"
                ));
            }
        }
        let s = &self.simulation;
        if s.n_paths == 0 || !(s.dt > 0.0) || !(s.cap_b > 0.0) {
            return bad("simulation: need n_paths >= 1, dt > 0, cap_b > 0".into());
        }
        if !(s.p0 >= 1.0 && s.q0 >= 1.0) || s.krylov_m == 0 {
            return bad("simulation: need p0, q0 >= 1 and krylov_m >= 1".into());
        }
        if s.strongness {
            let half = 0.5 * c.t0 / c.n_t as f64;
            let ratio = half / s.dt;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
                return bad(format!(
                    "simulation.dt = {} must divide half the simplex spacing ({half}) when strongness is on",
                    s.dt
                ));
            }
        }
        let t = &self.thresholds;
        if !(t.rho > 0.0 && t.p_sigma >= 1.0 && t.p_drift >= 1.0 && t.tolerance_scale > 0.0) {
            return bad(
                "thresholds: need rho > 0, p_sigma, p_drift >= 1, tolerance_scale > 0".into(),
            );
        }
        Ok(())
    }

    /// Builds the configured field.
    pub fn build_field(&self) -> Result<FieldRef, CliError> {
        let f = &self.field;
        let field: FieldRef = match f.kind {
            FieldKind::Example3d => {
                let xi: Arc<dyn TimeFn> = match &f.xi_table {
                    Some(rows) => Arc::new(PiecewiseLinearTime::new(
                        rows.iter().map(|r| r[0]).collect(),
                        rows.iter().map(|r| r[1]).collect(),
                    )?),
                    None => Arc::new(ConstantTime(f.xi)),
                };
                let (eta, sup): (SpaceTimeVecFn, f64) = match f.eta {
                    EtaKind::Zero => (Arc::new(|_, _| [0.0; 3]), 0.0),
                    EtaKind::E1 => (Arc::new(|_, _| [1.0, 0.0, 0.0]), 1.0),
                    EtaKind::Sincos => {
                        (Arc::new(|_, x: &[f64]| [x[1].sin(), x[0].cos(), 0.5]), 1.5)
                    }
                };
                let homogeneous = f.xi_table.is_none();
                Arc::new(
                    example_field_3d(f.alpha, f.beta, f.gamma, xi, eta, sup)
                        .time_homogeneous(homogeneous),
                )
            }
            FieldKind::UnitDiffusion => {
                let d = f.d.unwrap_or(1);
                Arc::new(FnField::unit_diffusion(d, f.d1.unwrap_or(d)))
            }
            FieldKind::ConstantDrift => {
                let c = f.drift.clone().unwrap_or_default();
                let d = f.d.unwrap_or(c.len());
                if c.len() != d {
                    return Err(CliError::Config(format!(
                        "field.drift has {} components, field.d is {d}",
                        c.len()
                    )));
                }
                Arc::new(FnField::constant_drift(d, f.d1.unwrap_or(d), c))
            }
            FieldKind::Tabulated => {
                let path = f.path.as_ref().expect("validated");
                let d = f.d.ok_or_else(|| {
                    CliError::Config("field.d is required for a tabulated field".into())
                })?;
                Arc::new(
                    Tabulated::load(path, d, f.d1.unwrap_or(d), f.fd_step, f.delta).map_err(
                        |e| CliError::Config(format!("field.path {}: {e}", path.display())),
                    )?,
                )
            }
        };
        Ok(field)
    }
}
