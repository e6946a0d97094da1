//! Splitting an `L_p` drift with `p > d` into a Morrey part and a bounded
//! part by thresholding at a time-dependent level.

use nalgebra::DVector;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::quadrature::{BallResolution, BallRule};

type DriftFn = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;

/// The split `b = b_M + b_B` with `b_M = b·1_{|b| ≥ λ(t)}` and
/// `λ(t) = N̂ (∫|b(t,x)|^p dx)^{1/(p−d)}`; `b̄ = λ` bounds `b_B`.
#[derive(Clone)]
pub struct ThresholdSplit {
    b: DriftFn,
    p: f64,
    d: usize,
    n_hat: f64,
    support_center: Vec<f64>,
    support_radius: f64,
    rule: Arc<BallRule>,
}

/// Builds the threshold split. `∫|b|^p` is computed on the ball
/// `B_{support_radius}(support_center)`, which must contain the support of
/// `b(t, ·)`; the radial rule is graded towards its centre.
pub fn split_by_threshold(
    b: impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static,
    p: f64,
    d: usize,
    n_hat: f64,
    support_center: Vec<f64>,
    support_radius: f64,
    resolution: BallResolution,
) -> Result<ThresholdSplit> {
    if !(p > d as f64) {
        return Err(invalid(format!(
            "threshold split needs p > d, got p = {p}, d = {d}"
        )));
    }
    if !(n_hat > 0.0) {
        return Err(invalid("N̂ must be positive"));
    }
    if support_center.len() != d {
        return Err(invalid("support centre has the wrong dimension"));
    }
    Ok(ThresholdSplit {
        b: Arc::new(b),
        p,
        d,
        n_hat,
        support_center,
        support_radius,
        rule: Arc::new(BallRule::new(d, resolution)),
    })
}

impl ThresholdSplit {
    /// `∫ |b(t, x)|^p dx`.
    pub fn lp_power(&self, t: f64) -> f64 {
        self.rule
            .integrate(&self.support_center, self.support_radius, |x| {
                (self.b)(t, x).norm().powf(self.p)
            })
            .0
    }

    /// Threshold `λ(t)`, which is also the envelope `b̄(t)`.
    pub fn lambda(&self, t: f64) -> f64 {
        self.n_hat * self.lp_power(t).powf(1.0 / (self.p - self.d as f64))
    }

    /// Splits `b(t, x)` given a precomputed `λ(t)`.
    pub fn parts_with(&self, lambda: f64, t: f64, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let v = (self.b)(t, x);
        if v.norm() >= lambda && v.norm() > 0.0 {
            (v, DVector::zeros(self.d))
        } else {
            (DVector::zeros(self.d), v)
        }
    }

    /// `(b_M, b_B)` at `(t, x)`.
    pub fn parts(&self, t: f64, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        self.parts_with(self.lambda(t), t, x)
    }

    /// `N(d) N̂^{d−p} ρ^{-d}` with `N(d) = 1/|B_1|`, the bound on
    /// `⨍_{B_ρ} |b_M|^d` that follows from `|b_M|^d ≤ λ^{d−p}|b|^p`.
    pub fn average_bound(&self, rho: f64) -> f64 {
        let n_d = 1.0 / crate::quadrature::unit_ball_volume(self.d);
        n_d * self.n_hat.powf(self.d as f64 - self.p) * rho.powf(-(self.d as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn res() -> BallResolution {
        BallResolution {
            n_radial: 48,
            n_angular: 12,
            radial_grading: 3.0,
        }
    }

    #[test]
    fn zero_drift_splits_to_zero() {
        let s = split_by_threshold(
            |_, _| DVector::zeros(3),
            4.0,
            3,
            1.0,
            vec![0.0; 3],
            1.0,
            res(),
        )
        .unwrap();
        let (m, b) = s.parts(0.0, &[0.1, 0.2, 0.3]);
        assert_eq!(m.norm(), 0.0);
        assert_eq!(b.norm(), 0.0);
    }

    #[test]
    fn bounded_drift_below_threshold_is_all_bounded() {
        let s = split_by_threshold(
            |_, x: &[f64]| DVector::from_element(3, if norm(x) < 1.0 { 0.5 } else { 0.0 }),
            4.0,
            3,
            10.0,
            vec![0.0; 3],
            1.0,
            res(),
        )
        .unwrap();
        assert!(s.lambda(0.0) > 0.5 * 3.0_f64.sqrt());
        let (m, b) = s.parts(0.0, &[0.1, 0.0, 0.0]);
        assert_eq!(m.norm(), 0.0);
        assert!((b.norm() - 0.5 * 3.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_subcritical_exponent() {
        assert!(split_by_threshold(
            |_, _| DVector::zeros(3),
            3.0,
            3,
            1.0,
            vec![0.0; 3],
            1.0,
            res()
        )
        .is_err());
    }

    #[test]
    fn singular_drift_split_obeys_average_bound() {
        // b = |x|^{-1/2} 1_{|x| ≤ 1} e₁ in d = 3, p = 4: ∫|b|^4 = 4π.
        let b = |_t: f64, x: &[f64]| {
            let r = norm(x);
            let mut v = DVector::zeros(3);
            if r > 0.0 && r <= 1.0 {
                v[0] = r.powf(-0.5);
            }
            v
        };
        for n_hat in [0.05, 0.2] {
            let s = split_by_threshold(b, 4.0, 3, n_hat, vec![0.0; 3], 1.0, res()).unwrap();
            let lp = s.lp_power(0.0);
            assert!((lp - 4.0 * std::f64::consts::PI).abs() < 1e-2 * lp);
            let lam = s.lambda(0.0);
            let rule = BallRule::new(3, res());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for k in 0..100 {
                let rho = rng.random_range(0.01..1.0);
                let c: Vec<f64> = if k == 0 {
                    vec![0.0; 3]
                } else {
                    (0..3).map(|_| rng.random_range(-0.5..0.5)).collect()
                };
                let (int, vol) =
                    rule.integrate(&c, rho, |x| s.parts_with(lam, 0.0, x).0.norm().powi(3));
                let avg = int / vol;
                assert!(
                    avg <= s.average_bound(rho) * (1.0 + 1e-2),
                    "ρ = {rho}: {avg} > {}",
                    s.average_bound(rho)
                );
            }
        }
    }

    #[test]
    fn envelope_square_integral_identity() {
        // With q = 2p/(p − d): ∫λ² dt = N̂² ∫ (∫|b|^p)^{q/p} dt.
        let b = |t: f64, x: &[f64]| {
            let r = norm(x);
            let mut v = DVector::zeros(3);
            if r <= 1.0 {
                v[1] = (1.0 + t) * (1.0 - r);
            }
            v
        };
        let (p, d, n_hat) = (5.0, 3usize, 0.7);
        let q = 2.0 * p / (p - d as f64);
        let s = split_by_threshold(b, p, d, n_hat, vec![0.0; 3], 1.0, res()).unwrap();
        let lhs = crate::quadrature::integrate_gl(|t| s.lambda(t).powi(2), 0.0, 1.0, 8, 2);
        let rhs = n_hat
            * n_hat
            * crate::quadrature::integrate_gl(|t| s.lp_power(t).powf(q / p), 0.0, 1.0, 8, 2);
        assert!((lhs - rhs).abs() < 1e-12 * rhs);
    }
}
