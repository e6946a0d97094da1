//! Mollification of coefficient fields and truncation of `σ` on the time set
//! where the bounded gradient envelope is large.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoefficientField, FieldRef, Tensor3};
use crate::error::{invalid, Result};
use crate::quadrature::gauss_legendre;

/// Resolution of the discrete mollifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierPlan {
    /// Gauss–Legendre nodes per axis of `[-1, 1]^d` (and of `[-1, 1]` in time).
    pub nodes_per_axis: usize,
}

impl Default for MollifierPlan {
    fn default() -> Self {
        Self { nodes_per_axis: 5 }
    }
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Nodes and normalised weights of the bump kernel on the unit ball of
/// `R^dim`.
pub(crate) fn bump_rule(dim: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    let (x, w) = gauss_legendre(n);
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let z: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let r2: f64 = z.iter().map(|v| v * v).sum();
        let wt: f64 = idx.iter().map(|&i| w[i]).product::<f64>() * bump(r2);
        if wt > 0.0 {
            out.push((z, wt));
        }
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            break;
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

/// `σ ∗ η_n` (space only), `b ∗ ζ_n` (space–time), with each part of the
/// decompositions mollified separately.
pub struct Mollified {
    inner: FieldRef,
    n: f64,
    space: Vec<(Vec<f64>, f64)>,
    time: Vec<(f64, f64)>,
}

/// Mollifies a field at scale `1/n`.
pub fn mollify(field: FieldRef, n: usize, plan: MollifierPlan) -> Result<Mollified> {
    if n == 0 {
        return Err(invalid("mollification index must be at least 1"));
    }
    if plan.nodes_per_axis == 0 {
        return Err(invalid("mollifier needs at least one node per axis"));
    }
    let d = field.dim();
    let space = bump_rule(d, plan.nodes_per_axis);
    let time = bump_rule(1, plan.nodes_per_axis)
        .into_iter()
        .map(|(z, w)| (z[0], w))
        .collect();
    Ok(Mollified {
        inner: field,
        n: n as f64,
        space,
        time,
    })
}

impl Mollified {
    fn shifted<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = (Vec<f64>, f64)> + 'a {
        self.space.iter().map(move |(z, w)| {
            let y: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| xi - zi / self.n).collect();
            (y, *w)
        })
    }

    fn space_time_avg(
        &self,
        t: f64,
        x: &[f64],
        g: impl Fn(f64, &[f64]) -> DVector<f64>,
    ) -> DVector<f64> {
        let mut acc = DVector::zeros(self.inner.dim());
        for &(s, ws) in &self.time {
            let ts = t - s / self.n;
            for (y, wz) in self.shifted(x) {
                acc += g(ts, &y) * (ws * wz);
            }
        }
        acc
    }

    fn space_avg_tensor(&self, t: f64, x: &[f64], g: impl Fn(f64, &[f64]) -> Tensor3) -> Tensor3 {
        let mut acc = Tensor3::zeros(self.inner.dim(), self.inner.noise_dim());
        for (y, w) in self.shifted(x) {
            acc.add_scaled(&g(t, &y), w);
        }
        acc
    }
}

impl CoefficientField for Mollified {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.noise_dim());
        for (y, w) in self.shifted(x) {
            acc += self.inner.sigma(t, &y) * w;
        }
        acc
    }
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.space_time_avg(t, x, |s, y| self.inner.drift_morrey(s, y))
    }
    fn drift_bounded(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.space_time_avg(t, x, |s, y| self.inner.drift_bounded(s, y))
    }
    fn drift_envelope(&self, t: f64) -> f64 {
        // |b_B ∗ ζ_n| ≤ b̄ ∗ ξ_n with the same positive quadrature weights.
        self.time
            .iter()
            .map(|&(s, w)| w * self.inner.drift_envelope(t - s / self.n))
            .sum()
    }
    fn dsigma_morrey(&self, t: f64, x: &[f64]) -> Tensor3 {
        self.space_avg_tensor(t, x, |s, y| self.inner.dsigma_morrey(s, y))
    }
    fn dsigma_bounded(&self, t: f64, x: &[f64]) -> Tensor3 {
        self.space_avg_tensor(t, x, |s, y| self.inner.dsigma_bounded(s, y))
    }
    fn dsigma_envelope(&self, t: f64) -> f64 {
        self.inner.dsigma_envelope(t)
    }
    fn delta(&self) -> f64 {
        self.inner.delta()
    }
    fn singular_points(&self) -> Vec<Vec<f64>> {
        self.inner.singular_points()
    }
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }
    fn is_time_homogeneous(&self) -> bool {
        self.inner.is_time_homogeneous()
    }
}

/// `σ_m = σ` on `Θ_m = {t : Dσ̄(t) ≤ m}` and `κ` elsewhere; drift untouched.
/// The ellipticity band of the result is `[δ/4, 4/δ]`.
pub struct Truncated {
    inner: FieldRef,
    m: f64,
    kappa: DMatrix<f64>,
}

/// Truncates `σ^{(n)}` (or `σ` itself when `n` is `None`) with level `m`
/// (`f64::INFINITY` keeps every time).
pub fn truncate_sigma(
    field: FieldRef,
    n: Option<usize>,
    m: f64,
    kappa: DMatrix<f64>,
    plan: MollifierPlan,
) -> Result<Truncated> {
    let (d, d1) = (field.dim(), field.noise_dim());
    if kappa.shape() != (d, d1) {
        return Err(invalid(format!(
            "κ must be {d}×{d1}, got {}×{}",
            kappa.nrows(),
            kappa.ncols()
        )));
    }
    let kk = &kappa * kappa.transpose();
    if (kk - DMatrix::<f64>::identity(d, d)).amax() > 1e-12 {
        return Err(invalid("κκ* must equal the identity"));
    }
    let inner: FieldRef = match n {
        Some(n) => std::sync::Arc::new(mollify(field, n, plan)?),
        None => field,
    };
    Ok(Truncated { inner, m, kappa })
}

impl Truncated {
    /// Whether `t ∈ Θ_m`.
    pub fn keeps(&self, t: f64) -> bool {
        self.inner.dsigma_envelope(t) <= self.m
    }

    /// Checks that `a = σ_m σ_m*` has its spectrum in `[δ/4, 4/δ]` at every
    /// sample; returns the offending samples.
    pub fn band_violations(&self, samples: &[(f64, Vec<f64>)]) -> Vec<(f64, Vec<f64>, f64)> {
        let delta = self.inner.delta();
        let (lo, hi) = (delta / 4.0, 4.0 / delta);
        samples
            .iter()
            .filter_map(|(t, x)| {
                let s = self.sigma(*t, x);
                let a = &s * s.transpose();
                match super::check_band(&a, lo, hi, *t, x) {
                    Ok(_) => None,
                    Err(crate::Error::EigenvalueBand { eigenvalue, .. }) => {
                        Some((*t, x.clone(), eigenvalue))
                    }
                    Err(_) => Some((*t, x.clone(), f64::NAN)),
                }
            })
            .collect()
    }
}

impl CoefficientField for Truncated {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        if self.keeps(t) {
            self.inner.sigma(t, x)
        } else {
            self.kappa.clone()
        }
    }
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.inner.drift_morrey(t, x)
    }
    fn drift_bounded(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.inner.drift_bounded(t, x)
    }
    fn drift_envelope(&self, t: f64) -> f64 {
        self.inner.drift_envelope(t)
    }
    fn dsigma_morrey(&self, t: f64, x: &[f64]) -> Tensor3 {
        if self.keeps(t) {
            self.inner.dsigma_morrey(t, x)
        } else {
            Tensor3::zeros(self.dim(), self.noise_dim())
        }
    }
    fn dsigma_bounded(&self, t: f64, x: &[f64]) -> Tensor3 {
        if self.keeps(t) {
            self.inner.dsigma_bounded(t, x)
        } else {
            Tensor3::zeros(self.dim(), self.noise_dim())
        }
    }
    fn dsigma_envelope(&self, t: f64) -> f64 {
        if self.keeps(t) {
            self.inner.dsigma_envelope(t)
        } else {
            0.0
        }
    }
    fn delta(&self) -> f64 {
        self.inner.delta() / 4.0
    }
    fn singular_points(&self) -> Vec<Vec<f64>> {
        self.inner.singular_points()
    }
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }
    fn is_time_homogeneous(&self) -> bool {
        self.inner.is_time_homogeneous()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{ConstantTime, Example3d, FnField, FnTime};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn bump_rule_is_normalised_and_symmetric() {
        for d in 1..4 {
            let r = bump_rule(d, 5);
            let total: f64 = r.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-14);
            for j in 0..d {
                let m: f64 = r.iter().map(|(z, w)| w * z[j]).sum();
                assert!(m.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        let s = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3]);
        let f: FieldRef = Arc::new(
            FnField::constant_sigma(s.clone(), 0.5)
                .with_drift_bounded(|_, _| DVector::from_vec(vec![0.4, -1.0]), ConstantTime(1.1)),
        );
        let m = mollify(f, 4, MollifierPlan::default()).unwrap();
        let x = [0.3, -0.7];
        assert!((m.sigma(0.5, &x) - s).amax() < 1e-14);
        assert!((m.drift(0.5, &x) - DVector::from_vec(vec![0.4, -1.0])).amax() < 1e-14);
        assert!((m.drift_envelope(0.5) - 1.1).abs() < 1e-14);
    }

    #[test]
    fn time_jump_is_smoothed_and_converges() {
        // b_B(t, x) = 1_{t ≥ 0.5}: the mollified drift is continuous across
        // the jump and converges to b away from it.
        let f: FieldRef = Arc::new(FnField::unit_diffusion(1, 1).with_drift_bounded(
            |t, _| DVector::from_element(1, if t >= 0.5 { 1.0 } else { 0.0 }),
            FnTime::new(|t| if t >= 0.5 { 1.0 } else { 0.0 }, vec![0.5]),
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut prev_err = f64::INFINITY;
        for n in [4usize, 16, 64] {
            let m = mollify(f.clone(), n, MollifierPlan { nodes_per_axis: 8 }).unwrap();
            let err: f64 = samples
                .iter()
                .map(|&t| {
                    let exact = if t >= 0.5 { 1.0 } else { 0.0 };
                    (m.drift(t, &[0.0])[0] - exact).abs()
                })
                .sum::<f64>()
                / samples.len() as f64;
            assert!(err < prev_err, "n = {n}: {err} !< {prev_err}");
            prev_err = err;
            // Continuity across the jump: nearby evaluations stay close.
            let jump = (m.drift(0.5 + 1e-6, &[0.0])[0] - m.drift(0.5 - 1e-6, &[0.0])[0]).abs();
            assert!(jump < 0.1);
        }
        assert!(prev_err < 0.02);
    }

    #[test]
    fn truncation_identity_and_full() {
        let ex: FieldRef = Arc::new(Example3d::without_bounded_drift(1.0, 0.2, 0.0));
        let mut kappa = DMatrix::zeros(3, 12);
        for i in 0..3 {
            kappa[(i, i)] = 1.0;
        }
        let t = truncate_sigma(
            ex.clone(),
            None,
            f64::INFINITY,
            kappa.clone(),
            MollifierPlan::default(),
        )
        .unwrap();
        let x = [0.2, 0.5, -0.1];
        assert!((t.sigma(0.0, &x) - ex.sigma(0.0, &x)).amax() == 0.0);

        // Positive envelope everywhere and m = 0: σ ≡ κ, a = I.
        let g: FieldRef = Arc::new(
            FnField::unit_diffusion(3, 12)
                .with_dsigma_bounded(|_, _| Tensor3::zeros(3, 12), ConstantTime(0.5)),
        );
        let t = truncate_sigma(g, None, 0.0, kappa.clone(), MollifierPlan::default()).unwrap();
        let s = t.sigma(0.3, &x);
        assert!((&s * s.transpose() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);

        let bad = DMatrix::from_element(3, 12, 1.0);
        assert!(truncate_sigma(ex, None, 1.0, bad, MollifierPlan::default()).is_err());
    }

    #[test]
    fn mollified_example_stays_in_band() {
        let ex: FieldRef = Arc::new(Example3d::without_bounded_drift(1.0, 0.3, 0.0));
        let mut kappa = DMatrix::zeros(3, 12);
        for i in 0..3 {
            kappa[(i, i)] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut samples: Vec<(f64, Vec<f64>)> = (0..200)
            .map(|_| (0.0, (0..3).map(|_| rng.random_range(-0.3..0.3)).collect()))
            .collect();
        samples.push((0.0, vec![0.0; 3]));
        for (n, m) in [(4usize, 4.0), (16, 16.0), (64, 64.0)] {
            let t = truncate_sigma(
                ex.clone(),
                Some(n),
                m,
                kappa.clone(),
                MollifierPlan::default(),
            )
            .unwrap();
            assert!(t.band_violations(&samples).is_empty());
        }
    }
}
