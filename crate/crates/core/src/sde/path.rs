use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Discretised `d1`-dimensional Wiener path on `[0, t0]` with step `dt`.
///
/// Path `stream` of a batch is drawn from the ChaCha8 stream `(seed, stream)`,
/// so batches are reproducible and independent of evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    pub d1: usize,
    pub dt: f64,
    pub t0: f64,
    pub seed: u64,
    pub stream: u64,
    /// Row-major `n_steps × d1` increments.
    pub increments: Vec<f64>,
}

pub(crate) fn step_count(t0: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t0 > 0.0 && dt.is_finite() && t0.is_finite()) {
        return Err(invalid("t0 and dt must be positive"));
    }
    let n = t0 / dt;
    if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
        return Err(invalid(format!("dt = {dt} does not divide t0 = {t0}")));
    }
    Ok(n.round() as usize)
}

impl WienerPath {
    pub fn sample(d1: usize, t0: f64, dt: f64, seed: u64, stream: u64) -> Result<Self> {
        if d1 == 0 {
            return Err(invalid("noise dimension must be positive"));
        }
        let n = step_count(t0, dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let sd = dt.sqrt();
        let increments = (0..n * d1)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            })
            .collect();
        Ok(Self {
            d1,
            dt,
            t0,
            seed,
            stream,
            increments,
        })
    }

    /// Builds a path from explicit increments (e.g. for deterministic tests).
    pub fn from_increments(d1: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if d1 == 0 || increments.is_empty() || !increments.len().is_multiple_of(d1) {
            return Err(invalid(
                "increment array does not match the noise dimension",
            ));
        }
        let n = increments.len() / d1;
        Ok(Self {
            d1,
            dt,
            t0: n as f64 * dt,
            seed: 0,
            stream: 0,
            increments,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.d1
    }

    /// `Δw` over step `n`.
    pub fn increment(&self, n: usize) -> &[f64] {
        &self.increments[n * self.d1..(n + 1) * self.d1]
    }

    /// `w` at grid time `n·dt`.
    pub fn value_at(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.d1];
        for s in 0..n {
            for (a, b) in w.iter_mut().zip(self.increment(s)) {
                *a += b;
            }
        }
        w
    }

    /// `w_{t0}`.
    pub fn terminal(&self) -> Vec<f64> {
        self.value_at(self.n_steps())
    }

    /// The same path on the coarser grid `factor·dt` (increments summed).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(invalid(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps()
            )));
        }
        let n = self.n_steps() / factor;
        let mut inc = vec![0.0; n * self.d1];
        for s in 0..self.n_steps() {
            let c = s / factor;
            for k in 0..self.d1 {
                inc[c * self.d1 + k] += self.increments[s * self.d1 + k];
            }
        }
        Ok(Self {
            d1: self.d1,
            dt: self.dt * factor as f64,
            t0: self.t0,
            seed: self.seed,
            stream: self.stream,
            increments: inc,
        })
    }
}

/// Draws `n_paths` paths on streams `0..n_paths`.
pub fn sample_batch(
    d1: usize,
    t0: f64,
    dt: f64,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<WienerPath>> {
    use rayon::prelude::*;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| WienerPath::sample(d1, t0, dt, seed, i))
        .collect()
}
