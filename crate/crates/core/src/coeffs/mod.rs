//! Coefficient fields and the diagnostics attached to them.
//!
//! A [`CoefficientField`] carries the diffusion matrix `σ` (size `d × d1`),
//! the drift split `b = b_M + b_B` into a Morrey part and a bounded part with
//! time envelope `b̄(t)`, the matching split of the spatial gradient `Dσ`, and
//! the ellipticity constant `δ` of `a = σσ*`.

mod fields;
mod norms;
mod smoothing;
mod split;

pub use fields::{
    example_field_3d, ConstantTime, Example3d, FnField, FnTime, IndicatorTime, KappaEnvelope,
    PiecewiseLinearTime, SpaceTimeVecFn, Tabulated,
};
pub use norms::{
    beta_modulus, beta_profile, da_morrey_bound, da_morrey_norm, hat_b, mixed_norm, morrey_hat,
    BallPlan, CylinderLattice, CylinderPlan, HatB, MixedNorm, MorreyHat, MorreyReport, WorstBall,
};
pub use smoothing::{mollify, truncate_sigma, Mollified, MollifierPlan, Truncated};
pub use split::{split_by_threshold, ThresholdSplit};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Order of integration in a mixed `L_{p,q}` norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixedOrder {
    /// `(∫ (∫ |f|^p dx)^{q/p} dt)^{1/q}`.
    SpaceFirst,
    /// `(∫ (∫ |f|^q dt)^{p/q} dx)^{1/p}`.
    TimeFirst,
}

/// Space–time domain `[t, t + τ) × B_ρ(x)`. A parabolic cylinder of radius
/// `r` has `τ = r²` and `ρ = r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub t: f64,
    pub duration: f64,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Cylinder {
    /// The parabolic cylinder `C_r(t, x) = [t, t + r²) × B_r(x)`.
    pub fn parabolic(t: f64, center: Vec<f64>, r: f64) -> Self {
        Self {
            t,
            duration: r * r,
            center,
            radius: r,
        }
    }
}

/// Exponents, order and domain of a mixed norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub p: f64,
    pub q: f64,
    pub order: MixedOrder,
    pub domain: Cylinder,
}

/// Dense `d × d × d1` tensor; entry `(i, j, k)` stores `D_i σ^{jk}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub d: usize,
    pub d1: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize, d1: usize) -> Self {
        Self {
            d,
            d1,
            data: vec![0.0; d * d * d1],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.d + j) * self.d1 + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.idx(i, j, k);
        self.data[n] = v;
    }

    /// The `d × d1` matrix `D_i σ`.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d1, |j, k| self.get(i, j, k))
    }

    /// Euclidean (Frobenius) norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Tensor3, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }
}

/// A real function of time with known discontinuities.
pub trait TimeFn: Send + Sync {
    fn eval(&self, t: f64) -> f64;

    /// Points where the function may jump or fail to be smooth; quadrature
    /// splits its intervals there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> TimeFn for F {
    fn eval(&self, t: f64) -> f64 {
        self(t)
    }
}

/// Coefficients of `dx = σ(t,x) dw + b(t,x) dt`, with the Morrey / bounded
/// decompositions of `b` and `Dσ`.
pub trait CoefficientField: Send + Sync {
    /// Spatial dimension `d`.
    fn dim(&self) -> usize;
    /// Noise dimension `d1 ≥ d`.
    fn noise_dim(&self) -> usize;
    fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64>;
    /// Morrey part `b_M`.
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64>;
    /// Bounded part `b_B`.
    fn drift_bounded(&self, t: f64, x: &[f64]) -> DVector<f64>;
    /// Envelope `b̄(t) ≥ sup_x |b_B(t, x)|`.
    fn drift_envelope(&self, t: f64) -> f64;
    /// Morrey part of `Dσ`.
    fn dsigma_morrey(&self, t: f64, x: &[f64]) -> Tensor3;
    /// Bounded part of `Dσ`.
    fn dsigma_bounded(&self, t: f64, x: &[f64]) -> Tensor3;
    /// Envelope `Dσ̄(t) ≥ sup_x |Dσ_B(t, x)|`.
    fn dsigma_envelope(&self, t: f64) -> f64;
    /// Ellipticity constant: the eigenvalues of `a` lie in `[δ, 1/δ]`.
    fn delta(&self) -> f64;

    /// Full drift `b = b_M + b_B`.
    fn drift(&self, t: f64, x: &[f64]) -> DVector<f64> {
        self.drift_morrey(t, x) + self.drift_bounded(t, x)
    }

    /// Full gradient `Dσ = Dσ_M + Dσ_B`.
    fn dsigma(&self, t: f64, x: &[f64]) -> Tensor3 {
        let mut m = self.dsigma_morrey(t, x);
        m.add_scaled(&self.dsigma_bounded(t, x), 1.0);
        m
    }

    /// Points where the coefficients may be singular; sup-type diagnostics
    /// always sample balls centred there.
    fn singular_points(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }

    /// End of the time window `[0, T_max]` on which the field is declared.
    fn horizon(&self) -> f64 {
        f64::INFINITY
    }

    /// Whether the coefficients do not depend on time (lets solvers reuse
    /// assembled operators).
    fn is_time_homogeneous(&self) -> bool {
        false
    }
}

/// Shared handle to a coefficient field.
pub type FieldRef = Arc<dyn CoefficientField>;

/// `a = σσ*` at one point together with its spectrum.
#[derive(Debug, Clone)]
pub struct DiffusionSample {
    pub a: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Assembles `a = σσ*` at `(t, x)` and checks that its eigenvalues lie in
/// `[δ, 1/δ]`.
pub fn assemble_a(field: &dyn CoefficientField, t: f64, x: &[f64]) -> Result<DiffusionSample> {
    let s = field.sigma(t, x);
    let a = &s * s.transpose();
    let delta = field.delta();
    check_band(&a, delta, 1.0 / delta, t, x)
}

/// Eigenvalue-band check `lower ≤ λ ≤ upper` for a symmetric matrix.
pub fn check_band(
    a: &DMatrix<f64>,
    lower: f64,
    upper: f64,
    t: f64,
    x: &[f64],
) -> Result<DiffusionSample> {
    let eig = SymmetricEigen::new(a.clone());
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    // A relative slack of a few ulps keeps exact-boundary cases inside.
    let slack = 1e-12 * upper.abs().max(1.0);
    for &l in &ev {
        if !(l >= lower - slack && l <= upper + slack) {
            return Err(Error::EigenvalueBand {
                t,
                x: x.to_vec(),
                eigenvalue: l,
                lower,
                upper,
            });
        }
    }
    Ok(DiffusionSample {
        a: a.clone(),
        eigenvalues: ev,
    })
}

/// Symmetric square root of a symmetric positive definite matrix via its
/// spectral decomposition.
pub fn sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(invalid("matrix must be square"));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("matrix is not positive definite"));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let s = &eig.eigenvectors * root * eig.eigenvectors.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// `D_i a = (D_i σ)σ* + σ(D_i σ)*` for the Morrey part of `Dσ`, returned as
/// `d` matrices.
pub fn da_morrey(field: &dyn CoefficientField, t: f64, x: &[f64]) -> Vec<DMatrix<f64>> {
    let s = field.sigma(t, x);
    let ds = field.dsigma_morrey(t, x);
    (0..field.dim())
        .map(|i| {
            let di = ds.slice(i);
            &di * s.transpose() + &s * di.transpose()
        })
        .collect()
}

/// Frobenius norm of the collection `(D_i a)_i`.
pub fn tensor_norm(mats: &[DMatrix<f64>]) -> f64 {
    mats.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((sqrt_spd(&i).unwrap() - &i).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0]));
        let s = sqrt_spd(&d).unwrap();
        let e = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0]));
        assert!((s - e).amax() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(sqrt_spd(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(sqrt_spd(&m).is_err());
    }

    #[test]
    fn band_check_flags_degenerate() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(
            check_band(&z, 0.5, 2.0, 0.0, &[0.0; 3]),
            Err(Error::EigenvalueBand { .. })
        ));
    }

    proptest! {
        #[test]
        fn sqrt_multiplies_back(
            d in 1usize..6,
            seed in proptest::collection::vec(-1.0f64..1.0, 36),
            ev in proptest::collection::vec(0.5f64..2.0, 6),
        ) {
            // Random orthogonal matrix from the QR factorisation of a random
            // matrix, then a = Q diag(ev) Qᵀ with spectrum in [0.5, 2].
            let g = DMatrix::from_fn(d, d, |i, j| seed[i * 6 + j] + if i == j { 2.0 } else { 0.0 });
            let q = g.qr().q();
            let lam = DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| ev[i]));
            let a = &q * lam * q.transpose();
            let a = (&a + a.transpose()) * 0.5;
            let s = sqrt_spd(&a).unwrap();
            prop_assert!((&s * &s - &a).norm() <= 1e-10 * a.norm());
            prop_assert!((&s - s.transpose()).amax() < 1e-14);
        }

        #[test]
        fn tensor_norm_is_homogeneous(v in proptest::collection::vec(-3.0f64..3.0, 18), c in 0.0f64..10.0) {
            let mut t = Tensor3 { d: 2, d1: 3, data: v.clone() };
            let n0 = t.norm();
            t.scale(c);
            prop_assert!((t.norm() - c * n0).abs() <= 1e-12 * (c * n0).max(1e-300));
        }
    }
}
