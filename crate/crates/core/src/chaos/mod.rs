//! Wiener-chaos kernels of `f(x_{t0})`, the Parseval defect, strongness tails
//! and pathwise reconstruction by iterated Itô integrals.
//!
//! The order-`i` kernel with column multi-index `(k_1, …, k_i)` is
//! `g(t_1, …, t_i) = T_{0,t_i}[Q^{k_i}_{t_i,t_{i−1}} ⋯ Q^{k_1}_{t_1,t0} f](0)`
//! on the ordered simplex `t0 > t_1 > … > t_i > 0`. Kernels are built by
//! nested backward sweeps: one sweep from `t0` yields every first layer
//! `Q^{k_1}_{t_1,t0} f`; each first layer is the terminal datum of a sweep
//! giving the second layer, and so on. The outer evaluation `T_{0,t}h(0)` is
//! the inner product with an adjoint density `ψ_t`, computed once.
//!
//! Column indices are 0-based throughout.

mod io;
mod ito;
mod simplex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pde::{Propagator, SpaceTimeGrid};

pub use io::{read_kernels, write_kernels, KernelDump};
pub use ito::{iterated_ito, reconstruct, Reconstructor};
pub use simplex::{binomial, SimplexGrid};

/// Default refusal threshold for the number of PDE sweeps.
pub const DEFAULT_COST_CAP: u64 = 50_000;

/// Controls for [`compute_kernels`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosPlan {
    /// Simplex axis nodes.
    pub n_t: usize,
    /// Highest kernel order; tails are available for orders `0..m_max`.
    pub m_max: usize,
    pub cost_cap: u64,
}

impl Default for ChaosPlan {
    fn default() -> Self {
        Self {
            n_t: 16,
            m_max: 3,
            cost_cap: DEFAULT_COST_CAP,
        }
    }
}

/// Number of backward sweeps needed for kernels through order `m_max`:
/// `Σ_{i<m_max} d1^i C(n_t, i)`.
pub fn estimated_sweeps(m_max: usize, n_t: usize, d1: usize) -> u128 {
    (0..m_max).fold(0u128, |acc, i| {
        let p = (d1 as u128).checked_pow(i as u32).unwrap_or(u128::MAX);
        acc.saturating_add(p.saturating_mul(binomial(n_t, i)))
    })
}

/// Rank of a column multi-index `(k_1, …, k_i)` in lexicographic order.
pub fn multi_index_rank(mi: &[usize], d1: usize) -> usize {
    mi.iter().fold(0, |acc, &k| acc * d1 + k)
}

/// Inverse of [`multi_index_rank`].
pub fn multi_index_unrank(order: usize, d1: usize, mut r: usize) -> Vec<usize> {
    let mut out = vec![0; order];
    for l in (0..order).rev() {
        out[l] = r % d1;
        r /= d1;
    }
    out
}

/// Kernels, Parseval data and tails for one `(field, f, t0)`.
/// Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosKernelSet {
    pub simplex: SimplexGrid,
    pub pde_grid: SpaceTimeGrid,
    pub d1: usize,
    /// Order-0 value `c = T_{0,t0} f(0)`.
    pub c: f64,
    /// `T_{0,t0} f²(0)`.
    pub tf2: f64,
    /// `kernels[i − 1][multi-index rank][simplex tuple rank]`.
    pub kernels: Vec<Vec<Vec<f64>>>,
    /// `tails[m] = Σ ∫_{Γ^{m+1}} T_{0,t_{m+1}}[Q⋯Q f]²(0)` for `m < m_max`.
    pub tails: Vec<f64>,
    /// `Σ_{multi-index} ∫_{Γ^i} g²` for `i = 1..=m_max`.
    pub kernel_sq: Vec<f64>,
    /// Backward sweeps actually performed.
    pub sweeps: u64,
}

/// One row of the Parseval ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderRow {
    pub order: usize,
    /// `c² + Σ_{i ≤ order} ∫ g_i²`, a lower bound for `T f²(0)`.
    pub partial_sum: f64,
    /// `T f²(0) − partial_sum`.
    pub defect: f64,
    /// `tail_norm(order)` if available.
    pub tail: Option<f64>,
}

/// Grid description attached to diagnostic records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummary {
    pub l: f64,
    pub h: f64,
    pub dt: f64,
    pub n_t: usize,
}

/// JSON diagnostic record `{order, value, grid, tolerance}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub kind: String,
    pub order: usize,
    pub value: f64,
    pub grid: GridSummary,
    pub tolerance: f64,
}

impl ChaosKernelSet {
    pub fn m_max(&self) -> usize {
        self.kernels.len()
    }

    /// Kernel values over ordered tuples for `order` and multi-index `mi`.
    pub fn kernel(&self, mi: &[usize]) -> Result<&[f64]> {
        let order = mi.len();
        if order == 0 || order > self.m_max() {
            return Err(invalid(format!("no kernels of order {order}")));
        }
        if mi.iter().any(|&k| k >= self.d1) {
            return Err(invalid(format!(
                "multi-index {mi:?} out of range for d1 = {}",
                self.d1
            )));
        }
        Ok(&self.kernels[order - 1][multi_index_rank(mi, self.d1)])
    }

    /// Kernel value at node tuple `nodes` (projected onto the ordered region).
    pub fn value(&self, mi: &[usize], nodes: &[usize]) -> Result<f64> {
        let k = self.kernel(mi)?;
        if nodes.len() != mi.len() {
            return Err(invalid("node tuple and multi-index lengths differ"));
        }
        Ok(k[SimplexGrid::rank(&self.simplex.project(nodes))])
    }

    /// Order-1 Parseval defect `T f²(0) − c² − tail_norm(0)`.
    pub fn parseval_gap(&self) -> f64 {
        self.tf2 - self.c * self.c - self.tails[0]
    }

    /// `Σ_{k_1..k_{m+1}} ∫_{Γ^{m+1}} T_{0,t_{m+1}}[Q⋯Q f]²(0) dt`.
    pub fn tail_norm(&self, m: usize) -> Result<f64> {
        self.tails.get(m).copied().ok_or_else(|| {
            invalid(format!(
                "tail of order {m} needs kernel sweeps through order {}, computed {}",
                m + 1,
                self.m_max()
            ))
        })
    }

    pub fn parseval_ladder(&self) -> Vec<LadderRow> {
        let mut partial = self.c * self.c;
        let mut rows = vec![LadderRow {
            order: 0,
            partial_sum: partial,
            defect: self.tf2 - partial,
            tail: self.tails.first().copied(),
        }];
        for (i, sq) in self.kernel_sq.iter().enumerate() {
            partial += sq;
            rows.push(LadderRow {
                order: i + 1,
                partial_sum: partial,
                defect: self.tf2 - partial,
                tail: self.tails.get(i + 1).copied(),
            });
        }
        rows
    }

    pub fn grid_summary(&self) -> GridSummary {
        GridSummary {
            l: self.pde_grid.l,
            h: self.pde_grid.h,
            dt: self.pde_grid.dt,
            n_t: self.simplex.n_t,
        }
    }

    /// Records for the Parseval defect and the tail ladder.
    pub fn diagnostics(&self, tolerance: f64) -> Vec<DiagnosticRecord> {
        let grid = self.grid_summary();
        let mut out = vec![DiagnosticRecord {
            kind: "parseval_gap".into(),
            order: 1,
            value: self.parseval_gap(),
            grid: grid.clone(),
            tolerance,
        }];
        for (m, t) in self.tails.iter().enumerate() {
            out.push(DiagnosticRecord {
                kind: "tail_norm".into(),
                order: m,
                value: *t,
                grid: grid.clone(),
                tolerance,
            });
        }
        out
    }
}

#[derive(Default)]
struct Partial {
    entries: Vec<(usize, usize, usize, f64)>,
    tails: Vec<f64>,
    sweeps: u64,
}

impl Partial {
    fn merge(&mut self, other: Partial) {
        self.entries.extend(other.entries);
        for (a, b) in self.tails.iter_mut().zip(other.tails) {
            *a += b;
        }
        self.sweeps += other.sweeps;
    }
}

struct Ctx<'a> {
    prop: &'a Propagator,
    simplex: SimplexGrid,
    node_k: Vec<usize>,
    psi: Vec<Vec<f64>>,
    levels: usize,
    d1: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Ctx<'_> {
    /// Sweep at `level` (number of Q's applied in the layers it produces)
    /// from PDE index `from_k` with terminal datum `terminal`; produces layers
    /// at the simplex nodes `j < upper_j`.
    fn level(
        &self,
        level: usize,
        terminal: Vec<f64>,
        from_k: usize,
        upper_j: usize,
        nodes: &[usize],
        cols: &[usize],
    ) -> Result<Partial> {
        let mut grads: Vec<(usize, Vec<Vec<f64>>)> = Vec::with_capacity(upper_j);
        let lowest = self.node_k[0];
        self.prop.sweep(from_k, lowest, terminal, |k, u| {
            if let Ok(j) = self.node_k[..upper_j].binary_search(&k) {
                grads.push((j, self.prop.gradient(u)));
            }
            Ok(())
        })?;
        grads.reverse();
        let weight = self.simplex.cell_weight(level);
        let mut part = Partial {
            tails: vec![0.0; self.levels],
            sweeps: 1,
            ..Default::default()
        };
        let children: Vec<Result<Partial>> = grads
            .par_iter()
            .map(|(j, du)| {
                let j = *j;
                let k = self.node_k[j];
                let mut local = Partial {
                    tails: vec![0.0; self.levels],
                    ..Default::default()
                };
                let qf = self.prop.quad_form(k, du);
                local.tails[level - 1] += weight * dot(&self.psi[j], &qf);
                let mut nodes_j = nodes.to_vec();
                nodes_j.push(j);
                let tuple_rank = SimplexGrid::rank(&nodes_j);
                for c in 0..self.d1 {
                    let v = self.prop.q_apply(k, du, c)?;
                    let mut cols_c = cols.to_vec();
                    cols_c.push(c);
                    local.entries.push((
                        level,
                        multi_index_rank(&cols_c, self.d1),
                        tuple_rank,
                        dot(&self.psi[j], &v),
                    ));
                    if level < self.levels && j >= 1 {
                        let child = self.level(level + 1, v, k, j, &nodes_j, &cols_c)?;
                        local.merge(child);
                    }
                }
                Ok(local)
            })
            .collect();
        for c in children {
            part.merge(c?);
        }
        Ok(part)
    }
}

/// Computes kernels through order `plan.m_max` and tails for orders
/// `0..plan.m_max` for terminal data `f` at `t0 = prop.grid().t0`.
///
/// The PDE time step must divide `Δ/2` where `Δ = t0/n_t`, so that every
/// simplex node is a PDE grid time.
pub fn compute_kernels(
    prop: &Propagator,
    f: &dyn Fn(&[f64]) -> f64,
    plan: &ChaosPlan,
) -> Result<ChaosKernelSet> {
    let grid = prop.grid().clone();
    if plan.m_max == 0 {
        return Err(invalid("m_max must be at least 1"));
    }
    let d1 = prop.field().noise_dim();
    let est = estimated_sweeps(plan.m_max, plan.n_t, d1);
    if est > plan.cost_cap as u128 {
        return Err(Error::CostGuard {
            estimated: est.min(u64::MAX as u128) as u64,
            cap: plan.cost_cap,
        });
    }
    let simplex = SimplexGrid::new(grid.t0, plan.n_t, plan.m_max)?;
    let half = 0.5 * simplex.delta() / grid.dt;
    if (half - half.round()).abs() > 1e-9 * half.max(1.0) || half.round() < 1.0 {
        return Err(invalid(format!(
            "PDE step {} must divide half the simplex spacing {}",
            grid.dt,
            0.5 * simplex.delta()
        )));
    }
    let r2 = half.round() as usize;
    let node_k: Vec<usize> = (0..plan.n_t).map(|j| (2 * j + 1) * r2).collect();
    let kk = grid.n_steps();
    let mut wanted = node_k.clone();
    wanted.push(kk);
    let mut psi = prop.origin_densities_at(&wanted)?;
    let psi_t0 = psi.pop().expect("terminal density");
    let terminal = grid.sample(f);
    let c = dot(&psi_t0, &terminal);
    let f2: Vec<f64> = terminal.iter().map(|v| v * v).collect();
    let tf2 = dot(&psi_t0, &f2);
    let ctx = Ctx {
        prop,
        simplex: simplex.clone(),
        node_k,
        psi,
        levels: plan.m_max,
        d1,
    };
    let part = ctx.level(1, terminal, kk, plan.n_t, &[], &[])?;
    let mut kernels: Vec<Vec<Vec<f64>>> = (1..=plan.m_max)
        .map(|i| vec![vec![0.0; simplex.count(i)]; d1.pow(i as u32)])
        .collect();
    for (order, mi, tr, v) in part.entries {
        kernels[order - 1][mi][tr] = v;
    }
    let kernel_sq = kernels
        .iter()
        .enumerate()
        .map(|(i, per)| {
            let w = simplex.cell_weight(i + 1);
            per.iter().flatten().map(|g| g * g * w).sum()
        })
        .collect();
    Ok(ChaosKernelSet {
        simplex,
        pde_grid: grid,
        d1,
        c,
        tf2,
        kernels,
        tails: part.tails,
        kernel_sq,
        sweeps: part.sweeps,
    })
}

#[cfg(test)]
mod tests;
