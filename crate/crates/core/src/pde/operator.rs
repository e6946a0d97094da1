//! Implicit-Euler step matrices `A_k = I − dt·ℒ(t_k)` and their solvers.

use nalgebra::DVector;
use rayon::prelude::*;

use super::grid::SpaceTimeGrid;
use crate::coeffs::CoefficientField;
use crate::error::{Error, Result};

/// Diagonal entry and off-diagonal `(column, value)` pairs of one row.
type MatrixRow = (f64, Vec<(u32, f64)>);

/// Sparse step matrix in CSR form with the diagonal stored separately.
#[derive(Debug, Clone)]
pub(crate) struct Operator {
    n: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    tridiagonal: bool,
}

/// Linear-solver controls: relative residual tolerance and sweep cap.
#[derive(Debug, Clone, Copy)]
pub struct SolverControl {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverControl {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

fn cell_average_drift(field: &dyn CoefficientField, t: f64, x: &[f64], h: f64) -> DVector<f64> {
    // 4 midpoints per axis inside the cell [x − h/2, x + h/2]^d.
    let d = x.len();
    let offs = [-3.0 * h / 8.0, -h / 8.0, h / 8.0, 3.0 * h / 8.0];
    let total = 4usize.pow(d as u32);
    let mut acc = DVector::zeros(d);
    let mut y = x.to_vec();
    for idx in 0..total {
        let mut r = idx;
        for a in 0..d {
            y[a] = x[a] + offs[r % 4];
            r /= 4;
        }
        acc += field.drift(t, &y);
    }
    acc / total as f64
}

fn near_singular(x: &[f64], singular: &[Vec<f64>], h: f64) -> bool {
    singular
        .iter()
        .any(|s| s.len() == x.len() && x.iter().zip(s).all(|(a, b)| (a - b).abs() < 1e-9 * h))
}

/// Drift used at a grid node: the pointwise value, or the average over the
/// surrounding cell when the node sits on a singular point.
pub(crate) fn node_drift(
    field: &dyn CoefficientField,
    t: f64,
    x: &[f64],
    h: f64,
    singular: &[Vec<f64>],
) -> DVector<f64> {
    if near_singular(x, singular, h) {
        cell_average_drift(field, t, x, h)
    } else {
        field.drift(t, x)
    }
}

impl Operator {
    /// Assembles `I − dt·ℒ(t)` with central second differences, a cross
    /// stencil for mixed derivatives and first-order upwinding of the drift.
    pub(crate) fn assemble(
        field: &dyn CoefficientField,
        grid: &SpaceTimeGrid,
        t: f64,
        singular: &[Vec<f64>],
    ) -> Result<Self> {
        let d = grid.d;
        let n = grid.n_nodes();
        let m = grid.m() as isize;
        let h = grid.h;
        let dt = grid.dt;
        let h2 = h * h;
        let rows: Vec<Result<MatrixRow>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mi = grid.multi_index(i);
                let x: Vec<f64> = mi.iter().map(|&j| grid.axis_coord(j)).collect();
                let s = field.sigma(t, &x);
                let a = &s * s.transpose();
                let b = node_drift(field, t, &x, h, singular);
                if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite coefficients at t = {t}, x = {x:?}"
                    )));
                }
                let scale = a.amax();
                let mut center = 0.0;
                let mut entries: Vec<(u32, f64)> = Vec::with_capacity(1 + 2 * d * d);
                let neighbour = |offs: &[(usize, isize)]| -> Option<u32> {
                    let mut idx = i as isize;
                    for &(p, o) in offs {
                        let j = mi[p] as isize + o;
                        if j < 0 || j >= m {
                            return None;
                        }
                        idx += o * grid.stride(p) as isize;
                    }
                    Some(idx as u32)
                };
                for p in 0..d {
                    let app = a[(p, p)];
                    let bp = b[p];
                    center -= app / h2 + bp.abs() / h;
                    let plus = 0.5 * app / h2 + bp.max(0.0) / h;
                    let minus = 0.5 * app / h2 + (-bp).max(0.0) / h;
                    if let Some(j) = neighbour(&[(p, 1)]) {
                        entries.push((j, -dt * plus));
                    }
                    if let Some(j) = neighbour(&[(p, -1)]) {
                        entries.push((j, -dt * minus));
                    }
                    for q in (p + 1)..d {
                        let apq = 0.5 * (a[(p, q)] + a[(q, p)]);
                        if apq.abs() <= 1e-14 * scale {
                            continue;
                        }
                        let c = apq / (4.0 * h2);
                        for (op, oq, sgn) in
                            [(1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)]
                        {
                            if let Some(j) = neighbour(&[(p, op), (q, oq)]) {
                                entries.push((j, -dt * sgn * c));
                            }
                        }
                    }
                }
                entries.sort_unstable_by_key(|e| e.0);
                Ok((1.0 - dt * center, entries))
            })
            .collect();
        let mut diag = Vec::with_capacity(n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in rows {
            let (dg, e) = r?;
            diag.push(dg);
            for (c, v) in e {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
            tridiagonal: d == 1,
        })
    }

    pub(crate) fn nnz(&self) -> usize {
        self.vals.len() + self.n
    }

    pub(crate) fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut cols = vec![0u32; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.cols[e] as usize;
                cols[fill[c]] = i as u32;
                vals[fill[c]] = self.vals[e];
                fill[c] += 1;
            }
        }
        Self {
            n: self.n,
            diag: self.diag.clone(),
            row_ptr,
            cols,
            vals,
            tridiagonal: self.tridiagonal,
        }
    }

    /// `A x`.
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[e] * x[self.cols[e] as usize];
                }
                s
            })
            .collect()
    }

    /// Solves `A x = rhs`.
    pub(crate) fn solve(&self, rhs: &[f64], ctl: SolverControl) -> Result<Vec<f64>> {
        let scale = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Ok(vec![0.0; self.n]);
        }
        if self.tridiagonal {
            return self.thomas(rhs, ctl, scale);
        }
        self.gauss_seidel(rhs, ctl, scale)
    }

    fn thomas(&self, rhs: &[f64], ctl: SolverControl, scale: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.cols[e] as usize;
                if c + 1 == i {
                    lower[i] = self.vals[e];
                } else if c == i + 1 {
                    upper[i] = self.vals[e];
                }
            }
        }
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut denom = self.diag[0];
        cp[0] = upper[0] / denom;
        dp[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - lower[i] * cp[i - 1];
            cp[i] = upper[i] / denom;
            dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom;
        }
        let mut x = dp;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        let res = self.residual(&x, rhs) / scale;
        if !res.is_finite() || res > ctl.tol.max(1e-12) * 1e2 {
            return Err(Error::SolverDiverged {
                residual: res,
                iterations: 1,
            });
        }
        Ok(x)
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(rhs)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    fn sweep(&self, x: &mut [f64], rhs: &[f64], i: usize) -> f64 {
        let mut s = rhs[i];
        for e in self.row_ptr[i]..self.row_ptr[i + 1] {
            s -= self.vals[e] * x[self.cols[e] as usize];
        }
        let r = s - self.diag[i] * x[i];
        x[i] = s / self.diag[i];
        r.abs()
    }

    /// Symmetric Gauss–Seidel until the sup-norm residual (measured before
    /// each row update) drops below `tol·‖rhs‖_∞`.
    fn gauss_seidel(&self, rhs: &[f64], ctl: SolverControl, scale: f64) -> Result<Vec<f64>> {
        let mut x = rhs
            .iter()
            .zip(&self.diag)
            .map(|(r, d)| r / d)
            .collect::<Vec<_>>();
        let target = ctl.tol * scale;
        let mut last = f64::INFINITY;
        for it in 0..ctl.max_iter {
            let mut res = 0.0_f64;
            for i in 0..self.n {
                res = res.max(self.sweep(&mut x, rhs, i));
            }
            for i in (0..self.n).rev() {
                self.sweep(&mut x, rhs, i);
            }
            last = res;
            if !res.is_finite() {
                break;
            }
            if res <= target {
                return Ok(x);
            }
            let _ = it;
        }
        Err(Error::SolverDiverged {
            residual: last / scale,
            iterations: ctl.max_iter,
        })
    }
}
