//! Backward finite-difference solves of `∂_t u + ½ a^{ij} D_{ij} u + b^i D_i u = 0`
//! on a truncated box, giving the evolution family `T_{s,t}` and the gradient
//! operators `Q^k_{s,t} f = σ^{ik} D_i T_{s,t} f`.
//!
//! The scheme is implicit Euler in time with central second differences, a
//! cross stencil for mixed derivatives, first-order upwinding of the drift and
//! zero Dirichlet data on the boundary of `[−L, L]^d`. A [`Propagator`] owns the
//! (lazily assembled, cached) step matrices, so that one backward sweep yields
//! `u(t, ·)` at every grid time and adjoint sweeps give the point-evaluation
//! densities used by the chaos module.

mod diagnostics;
mod grid;
mod io;
mod operator;

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::coeffs::FieldRef;
use crate::error::{invalid, Result};

pub use diagnostics::{check_gaussian_tail, fit_gradient_decay, DecayFit, TailFit};
pub use grid::SpaceTimeGrid;
pub use io::{read_binary, write_binary, write_text, GridDump};
use operator::Operator;
pub use operator::SolverControl;

/// Soft cap on cached step-matrix and σ storage, in `f64`-equivalents.
const CACHE_BUDGET: usize = 60_000_000;

/// Owns the step matrices `A_k = I − dt·ℒ(t_k)` for one field on one grid.
pub struct Propagator {
    field: FieldRef,
    grid: SpaceTimeGrid,
    singular: Vec<Vec<f64>>,
    homogeneous: bool,
    ops: Vec<OnceLock<Arc<Operator>>>,
    ops_t: Vec<OnceLock<Arc<Operator>>>,
    sigma: Vec<OnceLock<Arc<Vec<f64>>>>,
    cache_ops: bool,
    cache_sigma: bool,
    control: SolverControl,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("grid", &self.grid)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl Propagator {
    pub fn new(field: FieldRef, grid: SpaceTimeGrid) -> Result<Self> {
        Self::with_control(field, grid, SolverControl::default())
    }

    pub fn with_control(
        field: FieldRef,
        grid: SpaceTimeGrid,
        control: SolverControl,
    ) -> Result<Self> {
        grid.validate()?;
        if field.dim() != grid.d {
            return Err(invalid(format!(
                "field dimension {} does not match grid dimension {}",
                field.dim(),
                grid.d
            )));
        }
        if grid.t0 > field.horizon() * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "terminal time {} exceeds the field horizon {}",
                grid.t0,
                field.horizon()
            )));
        }
        let homogeneous = field.is_time_homogeneous();
        let slots = if homogeneous { 1 } else { grid.n_steps() + 1 };
        let n = grid.n_nodes();
        let d = grid.d;
        let nnz_est = n * (1 + 2 * d * d);
        let cache_ops = nnz_est * 2 * slots <= CACHE_BUDGET;
        let cache_sigma = n * d * field.noise_dim() * slots <= CACHE_BUDGET;
        let singular = field.singular_points();
        Ok(Self {
            field,
            grid,
            singular,
            homogeneous,
            ops: (0..slots).map(|_| OnceLock::new()).collect(),
            ops_t: (0..slots).map(|_| OnceLock::new()).collect(),
            sigma: (0..slots).map(|_| OnceLock::new()).collect(),
            cache_ops,
            cache_sigma,
            control,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    fn slot(&self, k: usize) -> usize {
        if self.homogeneous {
            0
        } else {
            k
        }
    }

    fn operator(&self, k: usize) -> Result<Arc<Operator>> {
        let build = || {
            Operator::assemble(
                self.field.as_ref(),
                &self.grid,
                self.grid.time(k),
                &self.singular,
            )
        };
        if !(self.cache_ops || self.homogeneous) {
            return Ok(Arc::new(build()?));
        }
        let cell = &self.ops[self.slot(k)];
        if let Some(op) = cell.get() {
            return Ok(op.clone());
        }
        let op = Arc::new(build()?);
        Ok(cell.get_or_init(|| op).clone())
    }

    fn operator_t(&self, k: usize) -> Result<Arc<Operator>> {
        if !(self.cache_ops || self.homogeneous) {
            return Ok(Arc::new(self.operator(k)?.transpose()));
        }
        let cell = &self.ops_t[self.slot(k)];
        if let Some(op) = cell.get() {
            return Ok(op.clone());
        }
        let op = Arc::new(self.operator(k)?.transpose());
        Ok(cell.get_or_init(|| op).clone())
    }

    /// Number of stored nonzeros of the step matrix at index `k`.
    pub fn nnz(&self, k: usize) -> Result<usize> {
        Ok(self.operator(k)?.nnz())
    }

    /// One implicit backward step: returns `u^k` from `u^{k+1}`.
    pub fn step_back(&self, k: usize, next: &[f64]) -> Result<Vec<f64>> {
        self.operator(k)?.solve(next, self.control)
    }

    /// One adjoint step: `A_k^{-T} v`.
    pub fn step_adjoint(&self, k: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.operator_t(k)?.solve(v, self.control)
    }

    /// Sweeps backward from grid index `from` (terminal data `terminal`) down
    /// to index `to`, calling `visit(k, u^k)` for `k = from, from−1, …, to`.
    pub fn sweep(
        &self,
        from: usize,
        to: usize,
        terminal: Vec<f64>,
        mut visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        if to > from || from > self.grid.n_steps() {
            return Err(invalid(format!("invalid sweep range {from} → {to}")));
        }
        if terminal.len() != self.grid.n_nodes() {
            return Err(invalid("terminal data has the wrong length"));
        }
        visit(from, &terminal)?;
        let mut u = terminal;
        for k in (to..from).rev() {
            u = self.step_back(k, &u)?;
            visit(k, &u)?;
        }
        Ok(())
    }

    /// Point-evaluation densities: `ψ_j` with `T_{0,t_j} h(0) = ψ_j · h` for
    /// every grid function `h`, for `j = 0..=j_max`.
    pub fn origin_densities(&self, j_max: usize) -> Result<Vec<Vec<f64>>> {
        let mut psi = vec![0.0; self.grid.n_nodes()];
        psi[self.grid.origin()] = 1.0;
        let mut out = Vec::with_capacity(j_max + 1);
        out.push(psi.clone());
        for j in 1..=j_max {
            psi = self.step_adjoint(j - 1, &psi)?;
            out.push(psi.clone());
        }
        Ok(out)
    }

    /// Point-evaluation densities `ψ_k` for the requested grid indices only
    /// (returned in the order of `ks`).
    pub fn origin_densities_at(&self, ks: &[usize]) -> Result<Vec<Vec<f64>>> {
        let k_max = ks.iter().copied().max().unwrap_or(0);
        if k_max > self.grid.n_steps() {
            return Err(invalid(format!(
                "grid index {k_max} beyond the terminal index"
            )));
        }
        let mut psi = vec![0.0; self.grid.n_nodes()];
        psi[self.grid.origin()] = 1.0;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; ks.len()];
        for j in 0..=k_max {
            if j > 0 {
                psi = self.step_adjoint(j - 1, &psi)?;
            }
            for (slot, &k) in out.iter_mut().zip(ks) {
                if k == j {
                    *slot = Some(psi.clone());
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every index visited"))
            .collect())
    }

    /// `σ` at every node at grid time `k`, flattened as `node × d × d1`.
    pub fn sigma_nodes(&self, k: usize) -> Arc<Vec<f64>> {
        let build = || {
            let t = self.grid.time(k);
            let (d, d1) = (self.grid.d, self.field.noise_dim());
            let per: Vec<Vec<f64>> = (0..self.grid.n_nodes())
                .into_par_iter()
                .map(|i| {
                    let s = self.field.sigma(t, &self.grid.coords(i));
                    let mut v = Vec::with_capacity(d * d1);
                    for r in 0..d {
                        for c in 0..d1 {
                            v.push(s[(r, c)]);
                        }
                    }
                    v
                })
                .collect();
            per.concat()
        };
        if !(self.cache_sigma || self.homogeneous) {
            return Arc::new(build());
        }
        self.sigma[self.slot(k)]
            .get_or_init(|| Arc::new(build()))
            .clone()
    }

    /// Central-difference gradient `D_p u` for every axis `p`.
    pub fn gradient(&self, u: &[f64]) -> Vec<Vec<f64>> {
        gradient(&self.grid, u)
    }

    /// `Q^k u = σ^{ik} D_i u` at grid time index `kt` (column `k` is 0-based).
    pub fn q_apply(&self, kt: usize, du: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
        let d1 = self.field.noise_dim();
        if k >= d1 {
            return Err(invalid(format!("column index {k} out of range 0..{d1}")));
        }
        let d = self.grid.d;
        let s = self.sigma_nodes(kt);
        Ok((0..self.grid.n_nodes())
            .map(|n| (0..d).map(|i| s[n * d * d1 + i * d1 + k] * du[i][n]).sum())
            .collect())
    }

    /// `Du · a · Du` at every node at grid time index `kt`, i.e. `Σ_k (Q^k u)²`.
    pub fn quad_form(&self, kt: usize, du: &[Vec<f64>]) -> Vec<f64> {
        let d1 = self.field.noise_dim();
        let d = self.grid.d;
        let s = self.sigma_nodes(kt);
        (0..self.grid.n_nodes())
            .map(|n| {
                (0..d1)
                    .map(|k| {
                        let q: f64 = (0..d).map(|i| s[n * d * d1 + i * d1 + k] * du[i][n]).sum();
                        q * q
                    })
                    .sum()
            })
            .collect()
    }
}

/// Central-difference gradient with zero boundary values.
pub fn gradient(grid: &SpaceTimeGrid, u: &[f64]) -> Vec<Vec<f64>> {
    let m = grid.m();
    let inv = 0.5 / grid.h;
    (0..grid.d)
        .map(|p| {
            let stride = grid.stride(p);
            (0..u.len())
                .map(|i| {
                    let j = (i / stride) % m;
                    let up = if j + 1 < m { u[i + stride] } else { 0.0 };
                    let dn = if j > 0 { u[i - stride] } else { 0.0 };
                    (up - dn) * inv
                })
                .collect()
        })
        .collect()
}

/// Which grid times a backward solve keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum StorePolicy {
    All,
    /// Every `n`-th index counted from the terminal index (terminal included).
    Every(usize),
    Indices(Vec<usize>),
    FinalOnly,
}

impl StorePolicy {
    fn keeps(&self, k: usize, from: usize, to: usize) -> bool {
        match self {
            StorePolicy::All => true,
            StorePolicy::Every(n) => (from - k).is_multiple_of((*n).max(1)) || k == to,
            StorePolicy::Indices(v) => v.contains(&k),
            StorePolicy::FinalOnly => k == to,
        }
    }
}

/// Result of a backward solve: `u(t_k, ·)` at the stored grid indices.
/// Immutable once produced.
#[derive(Debug, Clone)]
pub struct EvolutionSolve {
    pub grid: SpaceTimeGrid,
    /// Stored grid indices in increasing order.
    pub indices: Vec<usize>,
    pub u: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    /// Grid index of the terminal time.
    pub terminal_index: usize,
    pub warnings: Vec<String>,
}

impl EvolutionSolve {
    pub fn times(&self) -> Vec<f64> {
        self.indices.iter().map(|&k| self.grid.time(k)).collect()
    }

    /// `u(t_k, ·)` if stored.
    pub fn at(&self, k: usize) -> Option<&[f64]> {
        self.indices
            .binary_search(&k)
            .ok()
            .map(|i| self.u[i].as_slice())
    }

    /// `Du(t_k, ·)` by central differences, if `u(t_k)` is stored.
    pub fn gradient(&self, k: usize) -> Option<Vec<Vec<f64>>> {
        self.at(k).map(|u| gradient(&self.grid, u))
    }

    /// `u(t_k, 0)`.
    pub fn origin_value(&self, k: usize) -> Option<f64> {
        self.at(k).map(|u| u[self.grid.origin()])
    }
}

/// Backward solve of `ℒu = 0` from `t0` with terminal data `f`, storing every
/// grid time.
pub fn solve_backward(
    field: FieldRef,
    f: &dyn Fn(&[f64]) -> f64,
    grid: &SpaceTimeGrid,
) -> Result<EvolutionSolve> {
    let prop = Propagator::new(field, grid.clone())?;
    let terminal = grid.sample(f);
    solve_with(&prop, terminal, grid.n_steps(), 0, StorePolicy::All)
}

/// Backward solve from grid index `from` down to `to` with the given storage
/// policy. Emits a warning when the discrete maximum principle is violated.
pub fn solve_with(
    prop: &Propagator,
    terminal: Vec<f64>,
    from: usize,
    to: usize,
    store: StorePolicy,
) -> Result<EvolutionSolve> {
    let fmax = terminal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fmin = terminal.iter().cloned().fold(f64::INFINITY, f64::min);
    let fsup = fmax.abs().max(fmin.abs());
    let slack = 1e-6 * fsup;
    let upper = fmax.max(0.0) + slack;
    let lower = fmin.min(0.0) - slack;
    let mut indices = Vec::new();
    let mut u = Vec::new();
    let mut warnings = Vec::new();
    prop.sweep(from, to, terminal.clone(), |k, uk| {
        let hi = uk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = uk.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi > upper || lo < lower {
            warnings.push(format!(
                "maximum principle violated at t = {}: range [{lo}, {hi}] outside [{lower}, {upper}]",
                prop.grid.time(k)
            ));
        }
        if store.keeps(k, from, to) {
            indices.push(k);
            u.push(uk.to_vec());
        }
        Ok(())
    })?;
    indices.reverse();
    u.reverse();
    Ok(EvolutionSolve {
        grid: prop.grid.clone(),
        indices,
        u,
        terminal,
        terminal_index: from,
        warnings,
    })
}

/// `Q^k_{t,t0} f = σ^{ik}(t, ·) D_i u(t, ·)` at stored grid index `kt < t0`;
/// the column `k` is 0-based.
pub fn apply_q(field: &FieldRef, solve: &EvolutionSolve, k: usize, kt: usize) -> Result<Vec<f64>> {
    if k >= field.noise_dim() {
        return Err(invalid(format!(
            "column index {k} out of range 0..{}",
            field.noise_dim()
        )));
    }
    if kt >= solve.terminal_index {
        return Err(invalid("Q is evaluated strictly before the terminal time"));
    }
    let du = solve
        .gradient(kt)
        .ok_or_else(|| invalid(format!("grid index {kt} was not stored")))?;
    let t = solve.grid.time(kt);
    let d = solve.grid.d;
    Ok((0..solve.grid.n_nodes())
        .map(|n| {
            let s = field.sigma(t, &solve.grid.coords(n));
            (0..d).map(|i| s[(i, k)] * du[i][n]).sum()
        })
        .collect())
}

#[cfg(test)]
mod tests;
