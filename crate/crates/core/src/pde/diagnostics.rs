//! Decay and tail diagnostics for backward solves.

use serde::{Deserialize, Serialize};

use super::EvolutionSolve;
use crate::error::{Error, Result};

/// Least-squares fit of `log ‖Du(t)‖_{L_p0}` against `log(t0 − t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(t0 − t, ‖Du(t)‖_{L_p0})` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
    /// `1/p0 − 1 − 0.1`.
    pub threshold: f64,
    pub compliant: bool,
}

/// Fits the blow-up exponent of the gradient norm as `t ↑ t0` on the dyadic
/// set `t0 − t ∈ {t0/2^j}` (rounded to grid times).
pub fn fit_gradient_decay(solve: &EvolutionSolve, p0: f64) -> Result<DecayFit> {
    if !(p0 >= 1.0) {
        return Err(crate::error::invalid("p0 must be at least 1"));
    }
    let grid = &solve.grid;
    let kk = solve.terminal_index;
    let mut ks: Vec<usize> = Vec::new();
    let mut j = 0;
    loop {
        let lag = (kk as f64 / 2f64.powi(j)).round() as usize;
        if lag == 0 {
            break;
        }
        let k = kk - lag;
        if !ks.contains(&k) {
            ks.push(k);
        }
        j += 1;
    }
    let vol = grid.cell_volume();
    let mut points = Vec::new();
    for k in ks {
        let Some(du) = solve.gradient(k) else {
            continue;
        };
        let s: f64 = (0..grid.n_nodes())
            .map(|n| {
                let g2: f64 = du.iter().map(|c| c[n] * c[n]).sum();
                g2.sqrt().powf(p0)
            })
            .sum();
        let norm = (s * vol).powf(1.0 / p0);
        if norm.is_finite() && norm > 0.0 {
            points.push(((kk - k) as f64 * grid.dt, norm));
        }
    }
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "gradient-decay fit needs at least 4 usable times, got {}",
            points.len()
        )));
    }
    let (slope, intercept) = least_squares(
        &points
            .iter()
            .map(|(t, n)| (t.ln(), n.ln()))
            .collect::<Vec<_>>(),
    );
    let threshold = 1.0 / p0 - 1.0 - 0.1;
    Ok(DecayFit {
        slope,
        intercept,
        points,
        threshold,
        compliant: slope >= threshold,
    })
}

pub(crate) fn least_squares(xy: &[(f64, f64)]) -> (f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fitted constants of the envelope `|u(t, x)| ≤ C (1_{|x−z|<R+r} + e^{−(|x−z|−R)/(N (t0−t))})`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailFit {
    /// Smallest admissible `N` (infinite if some outer value reaches `C`).
    pub n: f64,
    /// `C = sup |u|` over all stored times.
    pub c: f64,
    /// Number of grid points that constrained the fit.
    pub points: usize,
}

/// Fits the exponential tail of a solve whose terminal data is supported in
/// `B_R(center)`: `C` is the sup of `|u|` and `N` the smallest constant with
/// `|u(t,x)| ≤ C e^{−dist/(N (t0−t))}` for all stored `t < t0` and all nodes
/// with `dist = |x − center| − R ≥ inflation`.
pub fn check_gaussian_tail(
    solve: &EvolutionSolve,
    center: &[f64],
    radius: f64,
    inflation: f64,
) -> TailFit {
    let grid = &solve.grid;
    let c = solve
        .u
        .iter()
        .flat_map(|u| u.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut n_fit = 0.0_f64;
    let mut points = 0;
    let dists: Vec<f64> = (0..grid.n_nodes())
        .map(|i| {
            let x = grid.coords(i);
            x.iter()
                .zip(center)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                - radius
        })
        .collect();
    for (idx, &k) in solve.indices.iter().enumerate() {
        if k >= solve.terminal_index {
            continue;
        }
        let tau = (solve.terminal_index - k) as f64 * grid.dt;
        for (i, &dist) in dists.iter().enumerate() {
            if dist < inflation {
                continue;
            }
            let v = solve.u[idx][i].abs();
            if v == 0.0 {
                continue;
            }
            points += 1;
            if v >= c {
                n_fit = f64::INFINITY;
                continue;
            }
            n_fit = n_fit.max(dist / (tau * (c / v).ln()));
        }
    }
    TailFit {
        n: n_fit,
        c,
        points,
    }
}
