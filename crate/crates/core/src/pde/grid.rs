use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform space–time grid on `[-L, L]^d × [0, t0]`. The spatial grid has
/// nodes `-L + j h`, `j = 0..=2L/h`; boundary nodes carry zero Dirichlet data,
/// so the unknowns live on the `(2L/h − 1)^d` interior nodes. The origin is
/// always a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub d: usize,
    pub l: f64,
    pub h: f64,
    pub dt: f64,
    pub t0: f64,
}

impl SpaceTimeGrid {
    pub fn new(d: usize, l: f64, h: f64, dt: f64, t0: f64) -> Result<Self> {
        let g = Self { d, l, h, dt, t0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("grid dimension must be positive"));
        }
        if !(self.l > 0.0 && self.h > 0.0 && self.dt > 0.0 && self.t0 > 0.0) {
            return Err(invalid("grid parameters must be positive"));
        }
        let half = self.l / self.h;
        if (half - half.round()).abs() > 1e-9 * half.max(1.0) || half.round() < 1.0 {
            return Err(invalid(format!(
                "L/h = {half} must be a positive integer so that the origin is a node"
            )));
        }
        let steps = self.t0 / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(format!("t0/dt = {steps} must be an integer")));
        }
        Ok(())
    }

    /// Interior nodes per axis.
    pub fn m(&self) -> usize {
        2 * (self.l / self.h).round() as usize - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.m().pow(self.d as u32)
    }

    /// Number of time steps `K = t0/dt`.
    pub fn n_steps(&self) -> usize {
        (self.t0 / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Coordinate of interior index `j` along one axis.
    pub fn axis_coord(&self, j: usize) -> f64 {
        -self.l + (j + 1) as f64 * self.h
    }

    /// Per-axis indices of a flat node index (row-major, last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let m = self.m();
        let mut out = vec![0; self.d];
        for a in (0..self.d).rev() {
            out[a] = idx % m;
            idx /= m;
        }
        out
    }

    pub fn flat_index(&self, mi: &[usize]) -> usize {
        let m = self.m();
        mi.iter().fold(0, |acc, &j| acc * m + j)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .into_iter()
            .map(|j| self.axis_coord(j))
            .collect()
    }

    /// Flat index of the origin.
    pub fn origin(&self) -> usize {
        let c = (self.m() - 1) / 2;
        self.flat_index(&vec![c; self.d])
    }

    /// Stride of axis `a` in the flat index.
    pub fn stride(&self, a: usize) -> usize {
        self.m().pow((self.d - 1 - a) as u32)
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// Grid function sampled from `f` at the interior nodes.
    pub fn sample(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| f(&self.coords(i))).collect()
    }

    /// `e^{-L/(N t0)}`, the size of the exponential tail envelope at the
    /// boundary for a given envelope constant `N`.
    pub fn boundary_tail(&self, n_const: f64) -> f64 {
        (-self.l / (n_const * self.t0)).exp()
    }
}
