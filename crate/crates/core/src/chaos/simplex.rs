use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `C(n, k)` (zero when `k > n`), saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Midpoint product grid on the ordered simplex
/// `Γ^m_{t0} = {t0 > t_1 > … > t_m > 0}`.
///
/// Axis nodes are the cell midpoints `(j + ½)Δ`, `Δ = t0/n_t`. Only strictly
/// decreasing index tuples `j_1 > … > j_m` are used, so every gap — including
/// `t0 − t_1` and `t_m − 0` — is at least `ε = Δ/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub t0: f64,
    pub n_t: usize,
    pub order: usize,
    pub epsilon_clip: f64,
}

impl SimplexGrid {
    pub fn new(t0: f64, n_t: usize, order: usize) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(invalid("t0 must be positive"));
        }
        if n_t == 0 {
            return Err(invalid("n_t must be positive"));
        }
        if order > n_t {
            return Err(invalid(format!(
                "order {order} needs at least {order} axis nodes, got {n_t}"
            )));
        }
        Ok(Self {
            t0,
            n_t,
            order,
            epsilon_clip: 0.5 * t0 / n_t as f64,
        })
    }

    /// Axis spacing `Δ`.
    pub fn delta(&self) -> f64 {
        self.t0 / self.n_t as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.delta()
    }

    /// Number of ordered tuples of length `order`.
    pub fn count(&self, order: usize) -> usize {
        binomial(self.n_t, order) as usize
    }

    /// Colex rank of a strictly decreasing tuple `j_1 > … > j_m`.
    pub fn rank(tuple: &[usize]) -> usize {
        let m = tuple.len();
        tuple
            .iter()
            .enumerate()
            .map(|(l, &j)| binomial(j, m - l) as usize)
            .sum()
    }

    /// Inverse of [`SimplexGrid::rank`].
    pub fn unrank(order: usize, mut r: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(order);
        for l in 0..order {
            let k = order - l;
            let mut j = k - 1;
            while binomial(j + 1, k) as usize <= r {
                j += 1;
            }
            r -= binomial(j, k) as usize;
            out.push(j);
        }
        out
    }

    /// All strictly decreasing tuples in rank order.
    pub fn tuples(&self, order: usize) -> Vec<Vec<usize>> {
        (0..self.count(order))
            .map(|r| Self::unrank(order, r))
            .collect()
    }

    /// Smallest gap among `t0 − t_1, t_1 − t_2, …, t_m − 0`.
    pub fn min_gap(&self, tuple: &[usize]) -> f64 {
        let mut prev = self.t0;
        let mut gap = f64::INFINITY;
        for &j in tuple {
            let t = self.node(j);
            gap = gap.min(prev - t);
            prev = t;
        }
        gap.min(prev)
    }

    /// Nearest ordered tuple (greedy from the outermost slot), used to extend
    /// kernels off the ordered region.
    pub fn project(&self, tuple: &[usize]) -> Vec<usize> {
        let m = tuple.len();
        let mut out = Vec::with_capacity(m);
        let mut hi = self.n_t - 1;
        for (l, &j) in tuple.iter().enumerate() {
            let lo = m - 1 - l;
            let v = j.clamp(lo, hi);
            out.push(v);
            hi = v.saturating_sub(1);
        }
        out
    }

    /// Midpoint-rule weight of one ordered cell of dimension `order`.
    pub fn cell_weight(&self, order: usize) -> f64 {
        self.delta().powi(order as i32)
    }

    /// Linear interpolation stencil at time `s` along one axis: two node
    /// indices and weights (constant extrapolation beyond the end nodes).
    pub fn interp(&self, s: f64) -> (usize, usize, f64, f64) {
        let u = s / self.delta() - 0.5;
        if u <= 0.0 {
            return (0, 0, 1.0, 0.0);
        }
        let last = self.n_t - 1;
        if u >= last as f64 {
            return (last, last, 1.0, 0.0);
        }
        let j = u.floor() as usize;
        let w = u - j as f64;
        (j, j + 1, 1.0 - w, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(40, 4), 91_390);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(7, 0), 1);
    }

    #[test]
    fn ranks_enumerate_all_ordered_tuples() {
        let g = SimplexGrid::new(1.0, 7, 3).unwrap();
        let tuples = g.tuples(3);
        assert_eq!(tuples.len(), 35);
        for (r, t) in tuples.iter().enumerate() {
            assert!(t.windows(2).all(|w| w[0] > w[1]));
            assert_eq!(SimplexGrid::rank(t), r);
            assert!(g.min_gap(t) >= g.epsilon_clip - 1e-15);
        }
    }

    #[test]
    fn ordered_volume_misses_only_the_diagonal() {
        // Δ² C(n, 2) = t0²/2 (1 − 1/n).
        let g = SimplexGrid::new(2.0, 10, 2).unwrap();
        let vol = g.count(2) as f64 * g.cell_weight(2);
        assert!((vol - 2.0 * (1.0 - 0.1)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_is_ordered_and_idempotent(a in 0usize..9, b in 0usize..9, c in 0usize..9) {
            let g = SimplexGrid::new(1.0, 9, 3).unwrap();
            let p = g.project(&[a, b, c]);
            prop_assert!(p.windows(2).all(|w| w[0] > w[1]));
            prop_assert_eq!(g.project(&p), p.clone());
            if a > b && b > c {
                prop_assert_eq!(p, vec![a, b, c]);
            }
        }

        #[test]
        fn interpolation_weights_sum_to_one(s in 0.0f64..1.0) {
            let g = SimplexGrid::new(1.0, 8, 1).unwrap();
            let (j0, j1, w0, w1) = g.interp(s);
            prop_assert!((w0 + w1 - 1.0).abs() < 1e-12);
            prop_assert!(j0 <= j1 && j1 < 8);
        }
    }
}
