//! Small quadrature toolkit: Gauss–Legendre rules, graded midpoint rules and a
//! radial–angular product rule on balls that tolerates power singularities at
//! the centre.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess followed by Newton iterations.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Integrates `f` over `[a, b]` with an `n`-point Gauss–Legendre rule on each
/// of `pieces` equal subintervals.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, pieces: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (x, w) = gauss_legendre(n);
    let h = (b - a) / pieces as f64;
    let mut s = 0.0;
    for p in 0..pieces {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(mid + 0.5 * h * xi);
        }
    }
    s * 0.5 * h
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Midpoint rule on `[0, len]` graded towards 0: nodes `len·u^γ` at the
/// midpoints `u` of a uniform partition of `[0, 1]`, with weights
/// `len·γ·u^{γ-1}/n` (the Jacobian of the substitution).
pub fn graded_midpoint(len: f64, n: usize, gamma: f64) -> Vec<(f64, f64)> {
    let du = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) * du;
            (len * u.powf(gamma), len * gamma * u.powf(gamma - 1.0) * du)
        })
        .collect()
}

/// Resolution of a [`BallRule`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BallResolution {
    /// Radial midpoint nodes.
    pub n_radial: usize,
    /// Midpoint nodes per polar angle (the azimuth gets twice as many).
    pub n_angular: usize,
    /// Radial grading exponent; values above 1 cluster nodes at the centre.
    pub radial_grading: f64,
}

impl Default for BallResolution {
    fn default() -> Self {
        Self {
            n_radial: 24,
            n_angular: 10,
            radial_grading: 3.0,
        }
    }
}

impl BallResolution {
    /// The same rule with every node count doubled.
    pub fn refined(self) -> Self {
        Self {
            n_radial: 2 * self.n_radial,
            n_angular: 2 * self.n_angular,
            radial_grading: self.radial_grading,
        }
    }
}

/// Product rule on the unit ball of `R^d` in hyperspherical coordinates:
/// offsets `z` with `|z| < 1` and weights summing to (approximately) the
/// volume of the unit ball.
#[derive(Debug, Clone)]
pub struct BallRule {
    pub d: usize,
    /// Row-major `n × d` unit-ball offsets.
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BallRule {
    pub fn new(d: usize, res: BallResolution) -> Self {
        let radial = graded_midpoint(1.0, res.n_radial, res.radial_grading);
        let dirs = sphere_rule(d, res.n_angular);
        let mut offsets = Vec::with_capacity(radial.len() * dirs.len() * d);
        let mut weights = Vec::with_capacity(radial.len() * dirs.len());
        for &(r, wr) in &radial {
            let jac = r.powi(d as i32 - 1) * wr;
            for (dir, wd) in &dirs {
                offsets.extend(dir.iter().map(|c| c * r));
                weights.push(jac * wd);
            }
        }
        Self {
            d,
            offsets,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offsets[i * self.d..(i + 1) * self.d]
    }

    /// `(∫_{B_ρ(c)} g, |B_ρ(c)|_discrete)`; the discrete volume is the same
    /// rule applied to the constant 1, so ratios of the two are exact for
    /// constants.
    pub fn integrate(
        &self,
        center: &[f64],
        rho: f64,
        mut g: impl FnMut(&[f64]) -> f64,
    ) -> (f64, f64) {
        let scale = rho.powi(self.d as i32);
        let mut x = vec![0.0; self.d];
        let mut s = 0.0;
        let mut vol = 0.0;
        for i in 0..self.len() {
            let z = self.offset(i);
            for j in 0..self.d {
                x[j] = center[j] + rho * z[j];
            }
            s += self.weights[i] * g(&x);
            vol += self.weights[i];
        }
        (s * scale, vol * scale)
    }
}

/// Midpoint rule on the unit sphere `S^{d-1}` in hyperspherical coordinates.
/// Returns unit directions with surface weights.
pub fn sphere_rule(d: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        0 => vec![],
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        _ => {
            // Angles φ_1..φ_{d-2} in [0, π] with n nodes, φ_{d-1} in [0, 2π)
            // with 2n nodes.
            let polar: Vec<(f64, f64)> = (0..n)
                .map(|i| ((i as f64 + 0.5) * PI / n as f64, PI / n as f64))
                .collect();
            let az: Vec<(f64, f64)> = (0..2 * n)
                .map(|i| ((i as f64 + 0.5) * PI / n as f64, PI / n as f64))
                .collect();
            let mut out = Vec::new();
            let n_polar = d - 2;
            let mut idx = vec![0usize; n_polar];
            loop {
                let mut w_polar = 1.0;
                let mut sin_prod = 1.0;
                let mut dir = vec![0.0; d];
                for (j, &ij) in idx.iter().enumerate() {
                    let (phi, w) = polar[ij];
                    dir[j] = sin_prod * phi.cos();
                    // Surface element factor sin^{d-2-j}(φ_j).
                    w_polar *= w * phi.sin().powi((d - 2 - j) as i32);
                    sin_prod *= phi.sin();
                }
                for &(th, w) in &az {
                    let mut v = dir.clone();
                    v[d - 2] = sin_prod * th.cos();
                    v[d - 1] = sin_prod * th.sin();
                    out.push((v, w_polar * w));
                }
                // Odometer increment over the polar indices.
                let mut k = 0;
                while k < n_polar {
                    idx[k] += 1;
                    if idx[k] < n {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n_polar {
                    break;
                }
            }
            out
        }
    }
}

/// Surface area of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((s - exact).abs() < 1e-13, "n={n} deg={deg}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_rule_area() {
        for d in 1..6 {
            let s: f64 = sphere_rule(d, 16).iter().map(|(_, w)| w).sum();
            let exact = if d == 1 { 2.0 } else { unit_sphere_area(d) };
            assert!((s - exact).abs() < 2e-3 * exact, "d={d}: {s} vs {exact}");
            for (v, _) in sphere_rule(d, 4) {
                let n: f64 = v.iter().map(|c| c * c).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ball_rule_handles_inverse_square_singularity() {
        // ∫_{B_ρ} |x|^{-2} dx = 4πρ in three dimensions.
        let rule = BallRule::new(3, BallResolution::default());
        let (s, vol) = rule.integrate(&[0.0; 3], 0.5, |x| {
            1.0 / (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
        });
        assert!((s - 4.0 * PI * 0.5).abs() < 1e-2 * s);
        assert!((vol - unit_ball_volume(3) * 0.125).abs() < 1e-2 * vol);
    }
}
