//! Morrey-type and mixed-norm diagnostics.
//!
//! Suprema over all balls or cylinders are replaced by suprema over a lattice
//! of centres (plus declared singular points) and dyadic radii. Lattices are
//! origin-aligned with steps `ρ/2 · 2^j`, so refining the lattice only ever
//! adds centres and the estimates are monotone under refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    da_morrey, tensor_norm, CoefficientField, Cylinder, MixedNormSpec, MixedOrder, TimeFn,
};
use crate::error::{invalid, Result};
use crate::quadrature::{gauss_legendre, graded_midpoint, BallResolution, BallRule};

/// Scalar space–time function evaluated by the norm routines (typically the
/// Euclidean norm of a vector or tensor field).
pub type ScalarFn<'a> = &'a (dyn Fn(f64, &[f64]) -> f64 + Sync);

/// Sampling plan for Morrey suprema over balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPlan {
    pub resolution: BallResolution,
    /// Ball centres are sampled in `[-center_box, center_box]^d`.
    pub center_box: f64,
    /// The lattice step never drops below `2·center_box / n_cap`.
    pub n_cap: usize,
    /// Radii `ρ_f · 2^{-k}` for `k < levels`.
    pub levels: usize,
    /// Sampled times.
    pub times: Vec<f64>,
    /// Recompute the worst ball with doubled resolution and flag changes
    /// above 5%.
    pub refine_check: bool,
}

impl Default for BallPlan {
    fn default() -> Self {
        Self {
            resolution: BallResolution::default(),
            center_box: 2.0,
            n_cap: 8,
            levels: 6,
            times: vec![0.0],
            refine_check: true,
        }
    }
}

/// Quadrature plan for one cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderPlan {
    pub ball: BallResolution,
    pub n_time: usize,
    /// Time nodes are graded towards the start of the cylinder.
    pub time_grading: f64,
}

impl Default for CylinderPlan {
    fn default() -> Self {
        Self {
            ball: BallResolution::default(),
            n_time: 24,
            time_grading: 2.0,
        }
    }
}

/// Ball (or cylinder base) at which a supremum was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstBall {
    pub t: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Result of [`morrey_hat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorreyHat {
    pub value: f64,
    pub worst: WorstBall,
    /// Value at the worst ball with doubled quadrature resolution.
    pub refined_value: f64,
    pub precision_warning: bool,
    pub balls: usize,
}

/// Aggregated admissibility diagnostics of one field part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorreyReport {
    pub hat_f_m: f64,
    pub worst_ball: WorstBall,
    pub beta_f: Vec<(f64, f64)>,
    pub hat_b: Option<f64>,
    pub hat_b_order: Option<MixedOrder>,
    pub threshold: f64,
    pub pass: bool,
    pub precision_warning: bool,
}

impl MorreyReport {
    /// Combines a Morrey supremum, a β-profile and an optional cylinder
    /// supremum; passes when both suprema are within `threshold`.
    pub fn assemble(
        hat: MorreyHat,
        beta_f: Vec<(f64, f64)>,
        hat_b: Option<(f64, MixedOrder)>,
        threshold: f64,
    ) -> Self {
        let pass = hat.value <= threshold && hat_b.is_none_or(|(v, _)| v <= threshold);
        Self {
            hat_f_m: hat.value,
            worst_ball: hat.worst,
            beta_f,
            hat_b: hat_b.map(|h| h.0),
            hat_b_order: hat_b.map(|h| h.1),
            threshold,
            pass,
            precision_warning: hat.precision_warning,
        }
    }
}

/// Origin-aligned lattice in `[-half, half]^d` with spacing `step`.
pub(crate) fn lattice(d: usize, half: f64, step: f64) -> Vec<Vec<f64>> {
    let n = (half / step + 1e-9).floor() as i64;
    let per_axis: Vec<f64> = (-n..=n).map(|j| j as f64 * step).collect();
    let mut out = Vec::with_capacity(per_axis.len().pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        out.push(idx.iter().map(|&i| per_axis[i]).collect());
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < per_axis.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    out
}

/// Lattice step for radius `rho`: `ρ/2 · 2^j` with the least `j ≥ 0`
/// reaching the cap `2·half/n_cap`.
pub(crate) fn lattice_step(rho: f64, half: f64, n_cap: usize) -> f64 {
    let floor = 2.0 * half / n_cap.max(1) as f64;
    let mut s = 0.5 * rho;
    while s < floor * (1.0 - 1e-12) {
        s *= 2.0;
    }
    s
}

fn centers_for(d: usize, rho: f64, half: f64, n_cap: usize, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut c = lattice(d, half, lattice_step(rho, half, n_cap));
    for e in extra {
        if !c.iter().any(|v| v == e) {
            c.push(e.clone());
        }
    }
    c
}

fn ball_average(rule: &BallRule, f: ScalarFn, t: f64, center: &[f64], rho: f64, p: f64) -> f64 {
    let (s, vol) = rule.integrate(center, rho, |x| f(t, x).abs().powf(p));
    s / vol
}

/// `sup ρ (⨍_{B_ρ(x)} |f(t,·)|^p)^{1/p}` over sampled `t`, centres and dyadic
/// radii `ρ ≤ rho_f`, with the maximising ball.
pub fn morrey_hat(
    f: ScalarFn,
    d: usize,
    p: f64,
    rho_f: f64,
    plan: &BallPlan,
    singular_points: &[Vec<f64>],
) -> Result<MorreyHat> {
    if !(p >= 1.0) {
        return Err(invalid(format!(
            "Morrey exponent must be at least 1, got {p}"
        )));
    }
    if !(rho_f > 0.0 && rho_f.is_finite()) {
        return Err(invalid(format!(
            "radius bound must be positive, got {rho_f}"
        )));
    }
    if plan.times.is_empty() || plan.levels == 0 {
        return Err(invalid(
            "ball plan needs at least one time and one radius level",
        ));
    }
    let rule = BallRule::new(d, plan.resolution);
    let mut jobs: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    for k in 0..plan.levels {
        let rho = rho_f * 0.5f64.powi(k as i32);
        for c in centers_for(d, rho, plan.center_box, plan.n_cap, singular_points) {
            for &t in &plan.times {
                jobs.push((t, c.clone(), rho));
            }
        }
    }
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|(t, c, rho)| rho * ball_average(&rule, f, *t, c, *rho, p).powf(1.0 / p))
        .collect();
    let (best, value) =
        values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                // NaN (divergent) values dominate so they are never hidden.
                if v > bv || (v.is_nan() && !bv.is_nan()) {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
    let (t, center, radius) = jobs[best].clone();
    let (refined_value, precision_warning) = if plan.refine_check {
        let fine = BallRule::new(d, plan.resolution.refined());
        let r = radius * ball_average(&fine, f, t, &center, radius, p).powf(1.0 / p);
        let warn = (r - value).abs() > 0.05 * value.abs().max(f64::MIN_POSITIVE);
        (r, warn)
    } else {
        (value, false)
    };
    Ok(MorreyHat {
        value,
        worst: WorstBall { t, center, radius },
        refined_value,
        precision_warning,
        balls: jobs.len(),
    })
}

/// Value of a mixed norm on a cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedNorm {
    pub value: f64,
    /// `value / ‖1‖` on the same domain, computed with the same rule.
    pub normalized: f64,
    /// The quadrature produced a non-finite value.
    pub divergent: bool,
}

/// Mixed `L_{p,q}` norm of `f` over the cylinder of `spec`, in the declared
/// order, by nested product quadrature.
pub fn mixed_norm(f: ScalarFn, spec: &MixedNormSpec, plan: &CylinderPlan) -> Result<MixedNorm> {
    let (p, q) = (spec.p, spec.q);
    if !(p >= 1.0 && q >= 1.0) {
        return Err(invalid(format!(
            "mixed-norm exponents must be at least 1, got ({p}, {q})"
        )));
    }
    let dom = &spec.domain;
    if !(dom.radius > 0.0 && dom.duration > 0.0) {
        return Err(invalid("cylinder must have positive radius and duration"));
    }
    let d = dom.center.len();
    let rule = BallRule::new(d, plan.ball);
    let times = graded_midpoint(dom.duration, plan.n_time, plan.time_grading);
    let scale = dom.radius.powi(d as i32);
    let mut x = vec![0.0; d];
    let space_points: Vec<(Vec<f64>, f64)> = (0..rule.len())
        .map(|i| {
            let z = rule.offset(i);
            for j in 0..d {
                x[j] = dom.center[j] + dom.radius * z[j];
            }
            (x.clone(), rule.weights[i] * scale)
        })
        .collect();
    let vol: f64 = space_points.iter().map(|(_, w)| w).sum();
    let tau: f64 = times.iter().map(|(_, w)| w).sum();

    let value = match spec.order {
        MixedOrder::SpaceFirst => {
            let outer: f64 = times
                .par_iter()
                .map(|&(s, wt)| {
                    let t = dom.t + s;
                    let inner: f64 = space_points
                        .iter()
                        .map(|(x, wx)| wx * f(t, x).abs().powf(p))
                        .sum();
                    wt * inner.powf(q / p)
                })
                .sum();
            outer.powf(1.0 / q)
        }
        MixedOrder::TimeFirst => {
            let outer: f64 = space_points
                .par_iter()
                .map(|(x, wx)| {
                    let inner: f64 = times
                        .iter()
                        .map(|&(s, wt)| wt * f(dom.t + s, x).abs().powf(q))
                        .sum();
                    wx * inner.powf(p / q)
                })
                .sum();
            outer.powf(1.0 / p)
        }
    };
    let unit = vol.powf(1.0 / p) * tau.powf(1.0 / q);
    Ok(MixedNorm {
        value,
        normalized: value / unit,
        divergent: !value.is_finite(),
    })
}

/// Sampling plan for cylinder suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderLattice {
    pub cylinder: CylinderPlan,
    pub center_box: f64,
    pub n_cap: usize,
    pub levels: usize,
    /// Cylinder start times are sampled in `[t_start, t_end]`.
    pub t_start: f64,
    pub t_end: f64,
    pub n_t_cap: usize,
}

impl Default for CylinderLattice {
    fn default() -> Self {
        Self {
            cylinder: CylinderPlan {
                ball: BallResolution {
                    n_radial: 16,
                    n_angular: 6,
                    radial_grading: 3.0,
                },
                n_time: 12,
                time_grading: 2.0,
            },
            center_box: 1.5,
            n_cap: 4,
            levels: 4,
            t_start: 0.0,
            t_end: 0.0,
            n_t_cap: 4,
        }
    }
}

/// Result of [`hat_b`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatB {
    pub value: f64,
    pub order: MixedOrder,
    pub worst: WorstBall,
    pub divergent: bool,
}

/// `sup_{r ≤ r_b, C ∈ ℂ_r} r · ⫿b⫿_{L_{frp,frq}(C)}` over a lattice of
/// parabolic cylinders plus cylinders based at the singular points.
pub fn hat_b(
    b: ScalarFn,
    d: usize,
    frp: f64,
    frq: f64,
    r_b: f64,
    order: MixedOrder,
    plan: &CylinderLattice,
    singular_points: &[Vec<f64>],
) -> Result<HatB> {
    if d as f64 / frp + 2.0 / frq < 1.0 {
        return Err(invalid(format!(
            "exponents ({frp}, {frq}) violate d/frp + 2/frq >= 1"
        )));
    }
    let mut jobs = Vec::new();
    for k in 0..plan.levels {
        let r = r_b * 0.5f64.powi(k as i32);
        let t_step = {
            let floor = (plan.t_end - plan.t_start) / plan.n_t_cap.max(1) as f64;
            let mut s = 0.5 * r * r;
            while s < floor * (1.0 - 1e-12) {
                s *= 2.0;
            }
            s
        };
        let n_t = ((plan.t_end - plan.t_start) / t_step + 1e-9)
            .floor()
            .max(0.0) as usize;
        for c in centers_for(d, r, plan.center_box, plan.n_cap, singular_points) {
            for j in 0..=n_t {
                jobs.push(Cylinder::parabolic(
                    plan.t_start + j as f64 * t_step,
                    c.clone(),
                    r,
                ));
            }
        }
    }
    let vals: Vec<Result<MixedNorm>> = jobs
        .par_iter()
        .map(|cyl| {
            mixed_norm(
                b,
                &MixedNormSpec {
                    p: frp,
                    q: frq,
                    order,
                    domain: cyl.clone(),
                },
                &plan.cylinder,
            )
        })
        .collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut divergent = false;
    for (i, v) in vals.into_iter().enumerate() {
        let v = v?;
        divergent |= v.divergent;
        let score = jobs[i].radius * v.normalized;
        if score > best.1 || (score.is_nan() && !best.1.is_nan()) {
            best = (i, score);
        }
    }
    let w = &jobs[best.0];
    Ok(HatB {
        value: best.1,
        order,
        worst: WorstBall {
            t: w.t,
            center: w.center.clone(),
            radius: w.radius,
        },
        divergent,
    })
}

/// `∫_a^b g` split at the given breakpoints, with `n`-point Gauss–Legendre
/// on `pieces` subintervals of each smooth piece.
fn integrate_piecewise(
    g: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    n: usize,
    pieces: usize,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (xs, ws) = gauss_legendre(n);
    let lo = breaks.partition_point(|&v| v <= a);
    let hi = breaks.partition_point(|&v| v < b);
    let mut knots = Vec::with_capacity(hi.saturating_sub(lo) + 2);
    knots.push(a);
    knots.extend_from_slice(&breaks[lo..hi.max(lo)]);
    knots.push(b);
    let mut total = 0.0;
    for w in knots.windows(2) {
        let h = (w[1] - w[0]) / pieces as f64;
        if h <= 0.0 {
            continue;
        }
        for k in 0..pieces {
            let mid = w[0] + (k as f64 + 0.5) * h;
            let mut s = 0.0;
            for (x, wt) in xs.iter().zip(&ws) {
                s += wt * g(mid + 0.5 * h * x);
            }
            total += 0.5 * h * s;
        }
    }
    total
}

/// `β(t) = sup_s ∫_s^{s+t} f̄²` over window starts on a lattice of step
/// `step` inside the horizon `[a, b]` (`f̄` vanishes outside it).
pub fn beta_modulus(f_bar: &dyn TimeFn, t: f64, horizon: (f64, f64), step: f64) -> Result<f64> {
    let (a, b) = horizon;
    if !(b > a && b.is_finite() && a.is_finite()) {
        return Err(invalid("β-modulus needs a finite horizon"));
    }
    if !(step > 0.0) {
        return Err(invalid("window step must be positive"));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let mut breaks = f_bar.breakpoints();
    breaks.retain(|v| v.is_finite());
    breaks.sort_by(|x, y| x.total_cmp(y));
    let g = |s: f64| {
        let v = f_bar.eval(s);
        v * v
    };
    // Windows starting before a or ending after b are dominated by those
    // starting at a or ending at b.
    let last = (b - t).max(a);
    let n = ((last - a) / step).ceil() as usize;
    let mut starts: Vec<f64> = (0..=n).map(|k| (a + k as f64 * step).min(last)).collect();
    starts.dedup();
    let best = starts
        .par_iter()
        .map(|&s| integrate_piecewise(&g, s, (s + t).min(b), &breaks, 8, 4))
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// `β` at several window lengths, made nondecreasing by a running maximum
/// (valid because the exact modulus is nondecreasing).
pub fn beta_profile(
    f_bar: &dyn TimeFn,
    ts: &[f64],
    horizon: (f64, f64),
    step: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut sorted = ts.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::with_capacity(sorted.len());
    let mut running: f64 = 0.0;
    for t in sorted {
        running = running.max(beta_modulus(f_bar, t, horizon, step)?);
        out.push((t, running));
    }
    Ok(out)
}

/// Pointwise data for the bound `|Da_M| ≤ 2‖σ‖·|Dσ_M|`: returns the constant
/// `N = 2·max‖σ‖_op` over the sample points.
pub fn da_morrey_bound(field: &dyn CoefficientField, samples: &[(f64, Vec<f64>)]) -> f64 {
    samples
        .iter()
        .map(|(t, x)| 2.0 * op_norm(&field.sigma(*t, x)))
        .fold(0.0, f64::max)
}

fn op_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// `|Da_M(t, x)|` (Frobenius over all indices).
pub fn da_morrey_norm(field: &dyn CoefficientField, t: f64, x: &[f64]) -> f64 {
    tensor_norm(&da_morrey(field, t, x))
}
