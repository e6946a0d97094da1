//! Concrete coefficient fields: closure-backed fields, the three-dimensional
//! example with a radial singularity, and grid-tabulated fields.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{CoefficientField, Tensor3, TimeFn};
use crate::error::{invalid, Error, Result};

type MatFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
type VecFn = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
type TensorFn = Arc<dyn Fn(f64, &[f64]) -> Tensor3 + Send + Sync>;

/// Bounded vector field `η(t, x) ∈ R^3` used by the example drift.
pub type SpaceTimeVecFn = Arc<dyn Fn(f64, &[f64]) -> [f64; 3] + Send + Sync>;

/// Constant function of time.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTime(pub f64);

impl TimeFn for ConstantTime {
    fn eval(&self, _t: f64) -> f64 {
        self.0
    }
}

/// `value · 1_{[a, b)}(t)`.
#[derive(Debug, Clone, Copy)]
pub struct IndicatorTime {
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

impl TimeFn for IndicatorTime {
    fn eval(&self, t: f64) -> f64 {
        if t >= self.a && t < self.b {
            self.value
        } else {
            0.0
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.a, self.b]
    }
}

/// Piecewise-linear interpolation of tabulated values, zero outside the
/// tabulated range.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearTime {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinearTime {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(invalid(
                "tabulated time function needs matching non-empty columns",
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("tabulated times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }
}

impl TimeFn for PiecewiseLinearTime {
    fn eval(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t < ts[0] || t > ts[ts.len() - 1] {
            return 0.0;
        }
        if ts.len() == 1 {
            return self.values[0];
        }
        let i = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1);
        let (t0, t1) = (ts[i - 1], ts[i]);
        let w = (t - t0) / (t1 - t0);
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

/// Closure-backed time function with declared breakpoints.
pub struct FnTime {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    breaks: Vec<f64>,
}

impl FnTime {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Self {
        Self {
            f: Arc::new(f),
            breaks,
        }
    }
}

impl TimeFn for FnTime {
    fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// The fractal-in-time envelope `κ(t) t^{-1/2}` with
/// `κ = Σ_{n0 ≤ n ≤ n_max} 1_{(a_n, b_n)}`, `a_n = 1/(n ln² n)`,
/// `b_n = (1 + a_n) a_n`. Its square integrates to `Σ ln(1 + a_n)`.
#[derive(Debug, Clone)]
pub struct KappaEnvelope {
    pub n0: usize,
    pub n_max: usize,
}

impl KappaEnvelope {
    pub fn a(n: usize) -> f64 {
        let nf = n as f64;
        1.0 / (nf * nf.ln().powi(2))
    }

    pub fn b(n: usize) -> f64 {
        let a = Self::a(n);
        (1.0 + a) * a
    }

    /// Checks `b_n ≤ a_{n-1} ≤ 1` for all `n ≥ n0`; the sequence is
    /// decreasing so it suffices to check the first index.
    pub fn intervals_disjoint(n0: usize) -> bool {
        n0 >= 3 && Self::b(n0) <= Self::a(n0 - 1) && Self::a(n0 - 1) <= 1.0
    }

    /// `Σ_{n0 ≤ n ≤ n_max} ln(1 + a_n)`.
    pub fn partial_sum(&self) -> f64 {
        (self.n0..=self.n_max).map(|n| Self::a(n).ln_1p()).sum()
    }

    fn kappa(&self, t: f64) -> f64 {
        if t <= 0.0 || t >= Self::b(self.n0) {
            return 0.0;
        }
        // a_n is decreasing: locate the candidate interval by bisection.
        let (mut lo, mut hi) = (self.n0, self.n_max);
        if t < Self::a(hi) {
            return 0.0;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if Self::a(mid) <= t {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        for n in [lo, hi] {
            if t > Self::a(n) && t < Self::b(n) {
                return 1.0;
            }
        }
        0.0
    }
}

impl TimeFn for KappaEnvelope {
    fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.kappa(t) / t.sqrt()
    }
    fn breakpoints(&self) -> Vec<f64> {
        (self.n0..=self.n_max)
            .flat_map(|n| [Self::a(n), Self::b(n)])
            .collect()
    }
}

/// General field assembled from closures; parts that are not supplied are
/// zero.
#[derive(Clone)]
pub struct FnField {
    d: usize,
    d1: usize,
    sigma: MatFn,
    b_m: Option<VecFn>,
    b_b: Option<VecFn>,
    b_bar: Arc<dyn TimeFn>,
    ds_m: Option<TensorFn>,
    ds_b: Option<TensorFn>,
    ds_bar: Arc<dyn TimeFn>,
    delta: f64,
    singular: Vec<Vec<f64>>,
    horizon: f64,
    homogeneous: bool,
}

impl FnField {
    pub fn new(
        d: usize,
        d1: usize,
        delta: f64,
        sigma: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            d,
            d1,
            sigma: Arc::new(sigma),
            b_m: None,
            b_b: None,
            b_bar: Arc::new(ConstantTime(0.0)),
            ds_m: None,
            ds_b: None,
            ds_bar: Arc::new(ConstantTime(0.0)),
            delta,
            singular: Vec::new(),
            horizon: f64::INFINITY,
            homogeneous: false,
        }
    }

    /// `σ = (I_d | 0)`, `b = 0`.
    pub fn unit_diffusion(d: usize, d1: usize) -> Self {
        Self::constant_sigma(
            DMatrix::from_fn(d, d1, |i, k| if i == k { 1.0 } else { 0.0 }),
            1.0,
        )
    }

    /// Constant diffusion matrix.
    pub fn constant_sigma(sigma: DMatrix<f64>, delta: f64) -> Self {
        let (d, d1) = sigma.shape();
        let mut f = Self::new(d, d1, delta, move |_, _| sigma.clone());
        f.homogeneous = true;
        f
    }

    /// `σ = (I_d | 0)` and a constant drift `c`, declared as bounded part.
    pub fn constant_drift(d: usize, d1: usize, c: Vec<f64>) -> Self {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cv = DVector::from_vec(c);
        Self::unit_diffusion(d, d1)
            .with_drift_bounded(move |_, _| cv.clone(), ConstantTime(norm))
            .time_homogeneous(true)
    }

    pub fn with_drift_morrey(
        mut self,
        f: impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.b_m = Some(Arc::new(f));
        self
    }

    pub fn with_drift_bounded(
        mut self,
        f: impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static,
        envelope: impl TimeFn + 'static,
    ) -> Self {
        self.b_b = Some(Arc::new(f));
        self.b_bar = Arc::new(envelope);
        self
    }

    pub fn with_dsigma_morrey(
        mut self,
        f: impl Fn(f64, &[f64]) -> Tensor3 + Send + Sync + 'static,
    ) -> Self {
        self.ds_m = Some(Arc::new(f));
        self
    }

    pub fn with_dsigma_bounded(
        mut self,
        f: impl Fn(f64, &[f64]) -> Tensor3 + Send + Sync + 'static,
        envelope: impl TimeFn + 'static,
    ) -> Self {
        self.ds_b = Some(Arc::new(f));
        self.ds_bar = Arc::new(envelope);
        self
    }

    pub fn with_singular_points(mut self, pts: Vec<Vec<f64>>) -> Self {
        self.singular = pts;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.homogeneous = yes;
        self
    }
}

impl CoefficientField for FnField {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.d1
    }
    fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(t, x)
    }
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64> {
        match &self.b_m {
            Some(f) if t <= self.horizon => f(t, x),
            _ => DVector::zeros(self.d),
        }
    }
    fn drift_bounded(&self, t: f64, x: &[f64]) -> DVector<f64> {
        match &self.b_b {
            Some(f) if t <= self.horizon => f(t, x),
            _ => DVector::zeros(self.d),
        }
    }
    fn drift_envelope(&self, t: f64) -> f64 {
        if t <= self.horizon {
            self.b_bar.eval(t)
        } else {
            0.0
        }
    }
    fn dsigma_morrey(&self, t: f64, x: &[f64]) -> Tensor3 {
        match &self.ds_m {
            Some(f) => f(t, x),
            None => Tensor3::zeros(self.d, self.d1),
        }
    }
    fn dsigma_bounded(&self, t: f64, x: &[f64]) -> Tensor3 {
        match &self.ds_b {
            Some(f) => f(t, x),
            None => Tensor3::zeros(self.d, self.d1),
        }
    }
    fn dsigma_envelope(&self, t: f64) -> f64 {
        self.ds_bar.eval(t)
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn singular_points(&self) -> Vec<Vec<f64>> {
        self.singular.clone()
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn is_time_homogeneous(&self) -> bool {
        self.homogeneous
    }
}

/// The three-dimensional example with twelve-dimensional noise:
///
/// * `σ = (α I₃ | β B(x))` where row `i` of the `3 × 9` block `B` holds
///   `x/|x|` in columns `3i+1..3i+3` (with `0/0 := 3^{-1/2}`), so that
///   `a = (α² + β²) I₃` everywhere;
/// * `b_M = −γ x/|x|² · 1_{0<|x|≤1}`;
/// * `b_B = ξ(t) η(t, x)` with envelope `|ξ(t)| · sup|η|`.
#[derive(Clone)]
pub struct Example3d {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    xi: Arc<dyn TimeFn>,
    eta: SpaceTimeVecFn,
    eta_sup: f64,
    horizon: f64,
    homogeneous: bool,
}

/// Builds [`Example3d`]; `eta_sup` must bound `|η|`.
pub fn example_field_3d(
    alpha: f64,
    beta: f64,
    gamma: f64,
    xi: Arc<dyn TimeFn>,
    eta: SpaceTimeVecFn,
    eta_sup: f64,
) -> Example3d {
    Example3d {
        alpha,
        beta,
        gamma,
        xi,
        eta,
        eta_sup,
        horizon: f64::INFINITY,
        homogeneous: false,
    }
}

impl Example3d {
    /// Example with `b_B = 0`.
    pub fn without_bounded_drift(alpha: f64, beta: f64, gamma: f64) -> Self {
        example_field_3d(
            alpha,
            beta,
            gamma,
            Arc::new(ConstantTime(0.0)),
            Arc::new(|_, _| [0.0; 3]),
            0.0,
        )
        .time_homogeneous(true)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Declares that `ξ` is constant and `η` time independent.
    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.homogeneous = yes;
        self
    }

    /// `x/|x|`, with every component `3^{-1/2}` at the origin.
    pub fn unit_direction(x: &[f64]) -> ([f64; 3], f64) {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r == 0.0 {
            let c = 3.0_f64.powf(-0.5);
            ([c, c, c], 0.0)
        } else {
            ([x[0] / r, x[1] / r, x[2] / r], r)
        }
    }

    fn active(&self, t: f64) -> bool {
        (0.0..=self.horizon).contains(&t)
    }
}

impl CoefficientField for Example3d {
    fn dim(&self) -> usize {
        3
    }
    fn noise_dim(&self) -> usize {
        12
    }
    fn sigma(&self, _t: f64, x: &[f64]) -> DMatrix<f64> {
        let (u, _) = Self::unit_direction(x);
        let mut s = DMatrix::zeros(3, 12);
        for i in 0..3 {
            s[(i, i)] = self.alpha;
            for l in 0..3 {
                s[(i, 3 + 3 * i + l)] = self.beta * u[l];
            }
        }
        s
    }
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        if !self.active(t) || r2 == 0.0 || r2 > 1.0 || self.gamma == 0.0 {
            return DVector::zeros(3);
        }
        DVector::from_fn(3, |i, _| -self.gamma * x[i] / r2)
    }
    fn drift_bounded(&self, t: f64, x: &[f64]) -> DVector<f64> {
        if !self.active(t) {
            return DVector::zeros(3);
        }
        let xi = self.xi.eval(t);
        if xi == 0.0 {
            return DVector::zeros(3);
        }
        let e = (self.eta)(t, x);
        DVector::from_fn(3, |i, _| xi * e[i])
    }
    fn drift_envelope(&self, t: f64) -> f64 {
        if self.active(t) {
            self.xi.eval(t).abs() * self.eta_sup
        } else {
            0.0
        }
    }
    fn dsigma_morrey(&self, _t: f64, x: &[f64]) -> Tensor3 {
        let mut out = Tensor3::zeros(3, 12);
        let (u, r) = Self::unit_direction(x);
        if r == 0.0 || self.beta == 0.0 {
            return out;
        }
        // D_i (x^l/|x|) = (δ_il − x̂_i x̂_l)/|x|.
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    let dil = if i == l { 1.0 } else { 0.0 };
                    out.set(i, j, 3 + 3 * j + l, self.beta * (dil - u[i] * u[l]) / r);
                }
            }
        }
        out
    }
    fn dsigma_bounded(&self, _t: f64, _x: &[f64]) -> Tensor3 {
        Tensor3::zeros(3, 12)
    }
    fn dsigma_envelope(&self, _t: f64) -> f64 {
        0.0
    }
    fn delta(&self) -> f64 {
        let s = self.alpha * self.alpha + self.beta * self.beta;
        if s == 0.0 {
            0.0
        } else {
            s.min(1.0 / s)
        }
    }
    fn singular_points(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; 3]]
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn is_time_homogeneous(&self) -> bool {
        self.homogeneous
    }
}

/// Field tabulated on a tensor grid in `(t, x_1, …, x_d)` and interpolated
/// multilinearly (clamped outside the grid). Each row of the source holds
/// `t, x_1..x_d`, then the `d·d1` entries of `σ` (row-major), then the `d`
/// drift components. The drift is treated as a Morrey part; `Dσ` is obtained
/// by centred differences of the interpolant.
#[derive(Debug, Clone)]
pub struct Tabulated {
    d: usize,
    d1: usize,
    /// Axis 0 is time, axes `1..=d` are space.
    axes: Vec<Vec<f64>>,
    /// Values per node, node index row-major over `axes`.
    values: Vec<f64>,
    n_values: usize,
    fd_step: f64,
    delta: f64,
}

impl Tabulated {
    /// Parses whitespace- or comma-separated columns; `#` starts a comment.
    pub fn parse(
        text: &str,
        d: usize,
        d1: usize,
        fd_step: f64,
        delta: Option<f64>,
    ) -> Result<Self> {
        let n_values = d * d1 + d;
        let n_cols = 1 + d + n_values;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect();
            let vals = vals.map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != n_cols {
                return Err(invalid(format!(
                    "line {}: expected {n_cols} columns, found {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        if rows.is_empty() {
            return Err(invalid("tabulated field has no rows"));
        }
        let mut axes: Vec<Vec<f64>> = (0..=d)
            .map(|a| {
                let mut v: Vec<f64> = rows.iter().map(|r| r[a]).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                v.dedup();
                v
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        if total != rows.len() {
            return Err(invalid(format!(
                "rows do not form a tensor grid: {} rows for {} nodes",
                rows.len(),
                total
            )));
        }
        let mut values = vec![f64::NAN; total * n_values];
        for r in &rows {
            let mut idx = 0;
            for a in 0..=d {
                let i = axes[a]
                    .binary_search_by(|v| v.total_cmp(&r[a]))
                    .map_err(|_| invalid("axis lookup failed"))?;
                idx = idx * axes[a].len() + i;
            }
            values[idx * n_values..(idx + 1) * n_values].copy_from_slice(&r[1 + d..]);
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(invalid("duplicate grid rows in tabulated field"));
        }
        for a in &mut axes {
            a.shrink_to_fit();
        }
        let mut tab = Self {
            d,
            d1,
            axes,
            values,
            n_values,
            fd_step,
            delta: 0.0,
        };
        tab.delta = match delta {
            Some(v) => v,
            None => tab.node_delta(),
        };
        Ok(tab)
    }

    pub fn load(
        path: &Path,
        d: usize,
        d1: usize,
        fd_step: f64,
        delta: Option<f64>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, d, d1, fd_step, delta)
    }

    /// Largest `δ` with every nodal `a` in `[δ, 1/δ]`.
    fn node_delta(&self) -> f64 {
        let n_nodes = self.values.len() / self.n_values;
        let mut delta = f64::INFINITY;
        for n in 0..n_nodes {
            let v = &self.values[n * self.n_values..n * self.n_values + self.d * self.d1];
            let s = DMatrix::from_row_slice(self.d, self.d1, v);
            let eig = SymmetricEigen::new(&s * s.transpose());
            let lo = eig.eigenvalues.min();
            let hi = eig.eigenvalues.max();
            delta = delta.min(lo).min(1.0 / hi);
        }
        delta.max(0.0)
    }

    fn interpolate(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let dims = self.d + 1;
        let mut lo = vec![0usize; dims];
        let mut w = vec![0.0; dims];
        for a in 0..dims {
            let ax = &self.axes[a];
            let v = if a == 0 { t } else { x[a - 1] };
            if ax.len() == 1 || v <= ax[0] {
                lo[a] = 0;
                w[a] = 0.0;
            } else if v >= ax[ax.len() - 1] {
                lo[a] = ax.len() - 2;
                w[a] = 1.0;
            } else {
                let i = ax.partition_point(|&s| s <= v).clamp(1, ax.len() - 1);
                lo[a] = i - 1;
                w[a] = (v - ax[i - 1]) / (ax[i] - ax[i - 1]);
            }
        }
        let mut out = vec![0.0; self.n_values];
        for corner in 0..(1usize << dims) {
            let mut weight = 1.0;
            let mut idx = 0;
            for a in 0..dims {
                let hi = (corner >> a) & 1 == 1;
                let len = self.axes[a].len();
                let i = if hi { (lo[a] + 1).min(len - 1) } else { lo[a] };
                weight *= if hi { w[a] } else { 1.0 - w[a] };
                idx = idx * len + i;
            }
            if weight == 0.0 {
                continue;
            }
            let v = &self.values[idx * self.n_values..(idx + 1) * self.n_values];
            for (o, vi) in out.iter_mut().zip(v) {
                *o += weight * vi;
            }
        }
        out
    }
}

impl CoefficientField for Tabulated {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.d1
    }
    fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let v = self.interpolate(t, x);
        DMatrix::from_row_slice(self.d, self.d1, &v[..self.d * self.d1])
    }
    fn drift_morrey(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let v = self.interpolate(t, x);
        DVector::from_row_slice(&v[self.d * self.d1..])
    }
    fn drift_bounded(&self, _t: f64, _x: &[f64]) -> DVector<f64> {
        DVector::zeros(self.d)
    }
    fn drift_envelope(&self, _t: f64) -> f64 {
        0.0
    }
    fn dsigma_morrey(&self, t: f64, x: &[f64]) -> Tensor3 {
        let mut out = Tensor3::zeros(self.d, self.d1);
        let h = self.fd_step;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for i in 0..self.d {
            xp[i] = x[i] + h;
            xm[i] = x[i] - h;
            let sp = self.sigma(t, &xp);
            let sm = self.sigma(t, &xm);
            for j in 0..self.d {
                for k in 0..self.d1 {
                    out.set(i, j, k, (sp[(j, k)] - sm[(j, k)]) / (2.0 * h));
                }
            }
            xp[i] = x[i];
            xm[i] = x[i];
        }
        out
    }
    fn dsigma_bounded(&self, _t: f64, _x: &[f64]) -> Tensor3 {
        Tensor3::zeros(self.d, self.d1)
    }
    fn dsigma_envelope(&self, _t: f64) -> f64 {
        0.0
    }
    fn delta(&self) -> f64 {
        self.delta
    }
    fn horizon(&self) -> f64 {
        *self.axes[0].last().expect("non-empty time axis")
    }
    fn is_time_homogeneous(&self) -> bool {
        self.axes[0].len() == 1
    }
}
