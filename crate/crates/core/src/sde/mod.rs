//! Euler–Maruyama simulation of `dx = σ(t, x) dw + b(t, x) dt`, occupation-time
//! (Krylov) estimates, Girsanov weights for the bounded drift part, and the
//! strongness gap between simulated `f(x_{t0})` and its chaos reconstruction.
//!
//! All Monte-Carlo estimators return a [`McEstimate`] with a standard error;
//! path `i` of a batch is driven by RNG stream `(seed, i)`.

mod path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{iterated_ito, ChaosKernelSet, Reconstructor, SimplexGrid};
use crate::coeffs::{
    mixed_norm, sqrt_spd, CoefficientField, Cylinder, CylinderPlan, MixedNormSpec, MixedOrder,
};
use crate::error::{invalid, Error, Result};

pub use path::{sample_batch, WienerPath};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// `|mean − target|` in standard errors (infinite if the error is zero
    /// and the mean differs).
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// JSON-lines record for a batch estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRecord {
    pub estimator: String,
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl BatchRecord {
    pub fn new(estimator: &str, est: &McEstimate, dt: f64, seed: u64) -> Self {
        Self {
            estimator: estimator.into(),
            value: est.mean,
            std_error: est.std_error,
            n_paths: est.n,
            dt,
            seed,
        }
    }
}

/// Simulated states `x_{s_k}`, `s_k = k·dt`, started at `(start_t, start_x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionPath {
    pub start_t: f64,
    pub start_x: Vec<f64>,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
}

impl SolutionPath {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("non-empty path")
    }
}

fn check_dims(field: &dyn CoefficientField, path: &WienerPath, x0: &[f64]) -> Result<()> {
    if path.d1 != field.noise_dim() {
        return Err(invalid(format!(
            "path dimension {} differs from the noise dimension {}",
            path.d1,
            field.noise_dim()
        )));
    }
    if x0.len() != field.dim() {
        return Err(invalid("start point has the wrong dimension"));
    }
    Ok(())
}

/// `x_{k+1} = x_k + σ(t + s_k, x_k)Δw_k + b(t + s_k, x_k)dt` with the drift
/// displacement capped at `|b|dt ≤ cap_b`.
pub fn euler_maruyama(
    field: &dyn CoefficientField,
    path: &WienerPath,
    start_t: f64,
    x0: &[f64],
    cap_b: f64,
) -> Result<SolutionPath> {
    check_dims(field, path, x0)?;
    if !(cap_b > 0.0) {
        return Err(invalid("drift cap must be positive"));
    }
    let mut x = DVector::from_column_slice(x0);
    let mut states = Vec::with_capacity(path.n_steps() + 1);
    states.push(x0.to_vec());
    for k in 0..path.n_steps() {
        let t = start_t + k as f64 * path.dt;
        let s = field.sigma(t, x.as_slice());
        let dw = DVector::from_column_slice(path.increment(k));
        let mut disp = field.drift(t, x.as_slice()) * path.dt;
        let nd = disp.norm();
        if nd > cap_b {
            disp *= cap_b / nd;
        }
        x += s * dw + disp;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: k + 1,
                state: x.iter().copied().collect(),
            });
        }
        states.push(x.iter().copied().collect());
    }
    Ok(SolutionPath {
        start_t,
        start_x: x0.to_vec(),
        dt: path.dt,
        states,
    })
}

/// Euler–Maruyama for the reduced equation `dx = √a dŵ + b dt` driven by a
/// `d`-dimensional path; same law as the full `d1`-dimensional equation.
pub fn euler_maruyama_sqrt_a(
    field: &dyn CoefficientField,
    path: &WienerPath,
    start_t: f64,
    x0: &[f64],
    cap_b: f64,
) -> Result<SolutionPath> {
    let d = field.dim();
    if path.d1 != d || x0.len() != d {
        return Err(invalid("reduced simulation needs a d-dimensional path"));
    }
    let mut x = DVector::from_column_slice(x0);
    let mut states = vec![x0.to_vec()];
    for k in 0..path.n_steps() {
        let t = start_t + k as f64 * path.dt;
        let s = field.sigma(t, x.as_slice());
        let root = sqrt_spd(&(&s * s.transpose()))?;
        let mut disp = field.drift(t, x.as_slice()) * path.dt;
        let nd = disp.norm();
        if nd > cap_b {
            disp *= cap_b / nd;
        }
        x += root * DVector::from_column_slice(path.increment(k)) + disp;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: k + 1,
                state: x.iter().copied().collect(),
            });
        }
        states.push(x.iter().copied().collect());
    }
    Ok(SolutionPath {
        start_t,
        start_x: x0.to_vec(),
        dt: path.dt,
        states,
    })
}

/// `|x^{dt}_{t0} − x^{2dt}_{t0}|²` for the same path at steps `dt` and `2dt`.
pub fn refinement_gap(
    field: &dyn CoefficientField,
    path: &WienerPath,
    start_t: f64,
    x0: &[f64],
    cap_b: f64,
) -> Result<f64> {
    let fine = euler_maruyama(field, path, start_t, x0, cap_b)?;
    let coarse = euler_maruyama(field, &path.coarsen(2)?, start_t, x0, cap_b)?;
    Ok(fine
        .terminal()
        .iter()
        .zip(coarse.terminal())
        .map(|(a, b)| (a - b).powi(2))
        .sum())
}

/// Girsanov objects for the truncation level `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GirsanovWeights {
    pub n: f64,
    /// `γ_n(s_k, x_{s_k})` per step.
    pub gamma: Vec<Vec<f64>>,
    pub phi: f64,
    pub weight: f64,
    /// `max_k |γ_n| / (b̄(s_k) ‖σ*a^{-1}‖)` (0 when `γ_n ≡ 0`).
    pub envelope_ratio: f64,
}

impl GirsanovWeights {
    pub fn envelope_holds(&self) -> bool {
        self.envelope_ratio <= 1.0 + 1e-12
    }
}

/// `γ_n = σ*a^{-1} b_B 1_{|b_B| > n}` along `solution`, and
/// `φ_n = −∫γ_n dw − ½∫|γ_n|² ds` (left point for `dw`, trapezoid for `ds`).
pub fn girsanov_weights(
    field: &dyn CoefficientField,
    solution: &SolutionPath,
    path: &WienerPath,
    n: f64,
) -> Result<GirsanovWeights> {
    if solution.states.len() != path.n_steps() + 1 {
        return Err(invalid("solution and path lengths differ"));
    }
    let mut gamma = Vec::with_capacity(solution.states.len());
    let mut ratio = 0.0_f64;
    for (k, x) in solution.states.iter().enumerate() {
        let t = solution.start_t + k as f64 * solution.dt;
        let bb = field.drift_bounded(t, x);
        let s = field.sigma(t, x);
        if bb.norm() > n {
            let a: DMatrix<f64> = &s * s.transpose();
            let ainv = a
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Numerical(format!("singular a at t = {t}")))?;
            let m = s.transpose() * ainv;
            let g = &m * &bb;
            let bound = field.drift_envelope(t) * op_norm(&m);
            if g.norm() > 0.0 {
                ratio = ratio.max(if bound > 0.0 {
                    g.norm() / bound
                } else {
                    f64::INFINITY
                });
            }
            gamma.push(g.iter().copied().collect());
        } else {
            gamma.push(vec![0.0; field.noise_dim()]);
        }
    }
    let mut stoch = 0.0;
    let mut leb = 0.0;
    for k in 0..path.n_steps() {
        stoch += gamma[k]
            .iter()
            .zip(path.increment(k))
            .map(|(g, w)| g * w)
            .sum::<f64>();
        let g0: f64 = gamma[k].iter().map(|g| g * g).sum();
        let g1: f64 = gamma[k + 1].iter().map(|g| g * g).sum();
        leb += 0.5 * (g0 + g1) * path.dt;
    }
    let phi = -stoch - 0.5 * leb;
    Ok(GirsanovWeights {
        n,
        gamma,
        phi,
        weight: phi.exp(),
        envelope_ratio: ratio,
    })
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Monte-Carlo occupation-time ratio `E(∫_0^T f(s, x_s) ds)^m / ‖f‖^m_{L_{p0,q0}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KrylovEstimate {
    pub ratio: McEstimate,
    pub numerator: McEstimate,
    pub norm: f64,
}

/// Inputs of [`krylov_ratio`].
#[derive(Debug, Clone)]
pub struct KrylovSetup {
    pub start: (f64, Vec<f64>),
    pub horizon: f64,
    pub p0: f64,
    pub q0: f64,
    pub m: u32,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub cap_b: f64,
    /// Cylinder containing the support of `f` (for the norm).
    pub support: Cylinder,
    pub norm_plan: CylinderPlan,
}

pub fn krylov_ratio(
    field: &dyn CoefficientField,
    f: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    setup: &KrylovSetup,
) -> Result<KrylovEstimate> {
    let norm = mixed_norm(
        f,
        &MixedNormSpec {
            p: setup.p0,
            q: setup.q0,
            order: MixedOrder::SpaceFirst,
            domain: setup.support.clone(),
        },
        &setup.norm_plan,
    )?
    .value;
    let samples: Vec<f64> = (0..setup.n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let path =
                WienerPath::sample(field.noise_dim(), setup.horizon, setup.dt, setup.seed, i)?;
            let sol = euler_maruyama(field, &path, setup.start.0, &setup.start.1, setup.cap_b)?;
            let mut occ = 0.0;
            for k in 0..path.n_steps() {
                let s = setup.start.0 + k as f64 * setup.dt;
                let a = f(s, &sol.states[k]);
                let b = f(s + setup.dt, &sol.states[k + 1]);
                occ += 0.5 * (a + b) * setup.dt;
            }
            Ok(occ.powi(setup.m as i32))
        })
        .collect::<Result<_>>()?;
    let numerator = McEstimate::from_samples(&samples);
    if !(norm > 0.0) {
        if numerator.mean != 0.0 {
            return Err(Error::Degenerate(
                "test function has zero norm but a nonzero occupation functional".into(),
            ));
        }
        return Err(Error::Degenerate("test function has zero norm".into()));
    }
    let scale = norm.powi(setup.m as i32);
    let ratio = McEstimate {
        mean: numerator.mean / scale,
        std_error: numerator.std_error / scale,
        n: numerator.n,
    };
    Ok(KrylovEstimate {
        ratio,
        numerator,
        norm,
    })
}

/// Monte-Carlo `E|f(x_{t0}) − Π^m f(x_{t0})|²` next to the chaos tail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrongnessGap {
    pub mc_gap: McEstimate,
    pub tail: Option<f64>,
    pub m: usize,
}

/// Simulates `x` from `(0, 0)` and the order-`m` chaos reconstruction on the
/// same Wiener paths (streams `0..n_paths` of `seed`, step `dt`).
pub fn strongness_gap(
    field: &dyn CoefficientField,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    set: &ChaosKernelSet,
    m: usize,
    n_paths: usize,
    dt: f64,
    seed: u64,
    cap_b: f64,
) -> Result<StrongnessGap> {
    let rec = Reconstructor::new(set, m)?;
    let t0 = set.simplex.t0;
    let x0 = vec![0.0; field.dim()];
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let path = WienerPath::sample(field.noise_dim(), t0, dt, seed, i)?;
            let sol = euler_maruyama(field, &path, 0.0, &x0, cap_b)?;
            let r = rec.eval(&path)?;
            Ok((f(sol.terminal()) - r).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(StrongnessGap {
        mc_gap: McEstimate::from_samples(&samples),
        tail: set.tail_norm(m).ok(),
        m,
    })
}

/// `E(I(g))^{2n} / ‖g‖^{2n}_{L_2(Γ^m)}` for a simplex kernel `g`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentRatio {
    pub ratio: McEstimate,
    /// `‖g‖²_{L_2(Γ^m)}` by the simplex midpoint rule.
    pub norm_sq: f64,
}

pub fn moment_bound_check(
    grid: &SimplexGrid,
    values: &[f64],
    mi: &[usize],
    paths: &[WienerPath],
    n: u32,
) -> Result<MomentRatio> {
    let w = grid.cell_weight(mi.len());
    let norm_sq: f64 = values.iter().map(|g| g * g * w).sum();
    if !(norm_sq > 0.0) {
        return Err(Error::Degenerate("kernel has zero L2 norm".into()));
    }
    let scale = norm_sq.powi(n as i32);
    let samples: Vec<f64> = paths
        .par_iter()
        .map(|p| iterated_ito(grid, values, mi, p).map(|v| v.powi(2 * n as i32) / scale))
        .collect::<Result<_>>()?;
    Ok(MomentRatio {
        ratio: McEstimate::from_samples(&samples),
        norm_sq,
    })
}
