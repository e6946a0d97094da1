//! Left-point iterated Itô integrals of simplex kernels along a Wiener path.

use super::{multi_index_unrank, ChaosKernelSet, SimplexGrid};
use crate::error::{invalid, Result};
use crate::sde::WienerPath;

/// Kernel extended to all node tuples (`n_t^m`, row-major, outermost slot
/// most significant) by projection onto the ordered region.
struct DenseKernel {
    order: usize,
    mi: Vec<usize>,
    values: Vec<f64>,
}

impl DenseKernel {
    fn new(grid: &SimplexGrid, values: &[f64], mi: &[usize]) -> Result<Self> {
        let order = mi.len();
        if order == 0 {
            return Err(invalid("iterated integrals need order at least 1"));
        }
        if values.len() != grid.count(order) {
            return Err(invalid(format!(
                "kernel has {} values, the order-{order} simplex grid has {}",
                values.len(),
                grid.count(order)
            )));
        }
        let n = grid.n_t;
        let total = n.pow(order as u32);
        let mut dense = Vec::with_capacity(total);
        let mut tuple = vec![0usize; order];
        for idx in 0..total {
            let mut r = idx;
            for l in (0..order).rev() {
                tuple[l] = r % n;
                r /= n;
            }
            dense.push(values[SimplexGrid::rank(&grid.project(&tuple))]);
        }
        Ok(Self {
            order,
            mi: mi.to_vec(),
            values: dense,
        })
    }
}

fn check_path(grid: &SimplexGrid, path: &WienerPath, mi: &[usize]) -> Result<()> {
    if (path.t0 - grid.t0).abs() > 1e-9 * grid.t0 {
        return Err(invalid(format!(
            "path horizon {} differs from kernel horizon {}",
            path.t0, grid.t0
        )));
    }
    let ratio = grid.delta() / path.dt;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
        return Err(invalid(format!(
            "path step {} does not refine the simplex spacing {}",
            path.dt,
            grid.delta()
        )));
    }
    if let Some(&k) = mi.iter().find(|&&k| k >= path.d1) {
        return Err(invalid(format!(
            "column {k} out of range for a {}-dimensional path",
            path.d1
        )));
    }
    Ok(())
}

/// Runs the recursion for several kernels of (possibly) different orders on
/// one path and returns each integral.
fn run(grid: &SimplexGrid, kernels: &[DenseKernel], path: &WienerPath) -> Vec<f64> {
    let n = grid.n_t;
    // states[i][l] holds A_{l+1} indexed by the l outer node slots.
    let mut states: Vec<Vec<Vec<f64>>> = kernels
        .iter()
        .map(|k| (0..k.order).map(|l| vec![0.0; n.pow(l as u32)]).collect())
        .collect();
    for step in 0..path.n_steps() {
        let s = step as f64 * path.dt;
        let (j0, j1, w0, w1) = grid.interp(s);
        let dw = path.increment(step);
        for (kern, st) in kernels.iter().zip(states.iter_mut()) {
            let m = kern.order;
            // Outermost first, so every update uses left-point values.
            for l in 0..m {
                let incr = dw[kern.mi[l]];
                if incr == 0.0 {
                    continue;
                }
                let size = n.pow(l as u32);
                if l + 1 == m {
                    for (outer, acc) in st[l][..size].iter_mut().enumerate() {
                        let base = outer * n;
                        let g = w0 * kern.values[base + j0] + w1 * kern.values[base + j1];
                        *acc += g * incr;
                    }
                } else {
                    let (head, tail) = st.split_at_mut(l + 1);
                    let inner = &tail[0];
                    for (outer, acc) in head[l][..size].iter_mut().enumerate() {
                        let base = outer * n;
                        let v = w0 * inner[base + j0] + w1 * inner[base + j1];
                        *acc += v * incr;
                    }
                }
            }
        }
    }
    states.into_iter().map(|st| st[0][0]).collect()
}

/// `∫_{Γ^m_{t0}} g(t_1, …, t_m) dw^{k_m}_{t_m} ⋯ dw^{k_1}_{t_1}` by the
/// left-point recursion: `A_m(s; t_1..t_{m−1}) = ∫_0^s g(t_1, …, u) dw^{k_m}_u`,
/// `A_l(s; t_1..t_{l−1}) = ∫_0^s A_{l+1}(u; t_1, …, t_{l−1}, u) dw^{k_l}_u`,
/// result `A_1(t0)`. The last slot is interpolated linearly between simplex
/// nodes, outer slots sit on nodes. `values` are the kernel values over the
/// ordered tuples of `grid` (rank order) and `mi = (k_1, …, k_m)`.
pub fn iterated_ito(
    grid: &SimplexGrid,
    values: &[f64],
    mi: &[usize],
    path: &WienerPath,
) -> Result<f64> {
    check_path(grid, path, mi)?;
    let k = DenseKernel::new(grid, values, mi)?;
    Ok(run(grid, std::slice::from_ref(&k), path)[0])
}

/// Precomputed dense kernels for repeated reconstruction on many paths.
pub struct Reconstructor {
    grid: SimplexGrid,
    c: f64,
    kernels: Vec<DenseKernel>,
    d1: usize,
    m: usize,
}

impl Reconstructor {
    pub fn new(set: &ChaosKernelSet, m: usize) -> Result<Self> {
        if m > set.m_max() {
            return Err(invalid(format!(
                "reconstruction of order {m} needs kernels through order {m}, have {}",
                set.m_max()
            )));
        }
        let mut kernels = Vec::new();
        for order in 1..=m {
            for (r, vals) in set.kernels[order - 1].iter().enumerate() {
                if vals.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let mi = multi_index_unrank(order, set.d1, r);
                kernels.push(DenseKernel::new(&set.simplex, vals, &mi)?);
            }
        }
        Ok(Self {
            grid: set.simplex.clone(),
            c: set.c,
            kernels,
            d1: set.d1,
            m,
        })
    }

    /// Per-order contributions `[c, Σ I_1, …, Σ I_m]`.
    pub fn components(&self, path: &WienerPath) -> Result<Vec<f64>> {
        if path.d1 != self.d1 {
            return Err(invalid(format!(
                "path dimension {} differs from kernel noise dimension {}",
                path.d1, self.d1
            )));
        }
        check_path(&self.grid, path, &[])?;
        let mut out = vec![0.0; self.m + 1];
        out[0] = self.c;
        for (k, v) in self
            .kernels
            .iter()
            .zip(run(&self.grid, &self.kernels, path))
        {
            out[k.order] += v;
        }
        Ok(out)
    }

    /// `c + Σ_{i ≤ m} Σ_{k_1..k_i} I(g^{k_i…k_1})`.
    pub fn eval(&self, path: &WienerPath) -> Result<f64> {
        Ok(self.components(path)?.iter().sum())
    }
}

/// Chaos reconstruction of `f(x_{t0})` through order `m` on one path.
pub fn reconstruct(set: &ChaosKernelSet, path: &WienerPath, m: usize) -> Result<f64> {
    Reconstructor::new(set, m)?.eval(path)
}
