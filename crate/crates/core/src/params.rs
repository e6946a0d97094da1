//! Exponent systems and drift-regime classification.
//!
//! Before any analysis the theory fixes a handful of auxiliary exponents
//! (`p0`, `q0`, `alpha`, `beta0`, `beta0'`) subject to a system of strict and
//! non-strict inequalities. [`solve_exponents`] picks them deterministically
//! (midpoint of each feasible window, in a fixed order) and
//! [`validate_profile`] re-checks every inequality independently.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::coeffs::MixedOrder;
use crate::error::{invalid, Error, Result};

/// Margin used for strict inequalities between floating-point quantities.
pub const EPS_STRICT: f64 = 1e-9;

/// Ladyzhenskaya–Prodi–Serrin regime of a drift integrability pair `(p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Result of [`classify_lps`]: the regime and the value of `d/p + 2/q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub label: Regime,
    pub lhs: f64,
}

fn to_rational(name: &str, v: f64) -> Result<BigRational> {
    if !v.is_finite() {
        return Err(invalid(format!("{name} must be finite, got {v}")));
    }
    BigRational::from_float(v).ok_or_else(|| invalid(format!("{name} is not representable")))
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Classifies `(p, q)` by comparing `d/p + 2/q` with 1.
///
/// The comparison is exact: the binary floating-point inputs are converted to
/// rationals, so e.g. `(3, 6, 4)` is recognised as critical with no tolerance.
pub fn classify_lps(d: u32, p: f64, q: f64) -> Result<RegimeLabel> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    let pr = to_rational("p", p)?;
    let qr = to_rational("q", q)?;
    classify_lps_rational(d, &pr, &qr)
}

/// Exact variant of [`classify_lps`] for rational exponents.
pub fn classify_lps_rational(d: u32, p: &BigRational, q: &BigRational) -> Result<RegimeLabel> {
    let one = BigRational::one();
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if *p < one || *q < one {
        return Err(invalid(format!(
            "exponents must be at least 1, got p = {p}, q = {q}"
        )));
    }
    let lhs = BigRational::from_integer(BigInt::from(d)) / p
        + BigRational::from_integer(BigInt::from(2)) / q;
    let label = match lhs.cmp(&one) {
        std::cmp::Ordering::Less => Regime::Subcritical,
        std::cmp::Ordering::Equal => Regime::Critical,
        std::cmp::Ordering::Greater => Regime::Supercritical,
    };
    Ok(RegimeLabel {
        label,
        lhs: rational_to_f64(&lhs),
    })
}

/// All exponents fixed before the analysis starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentProfile {
    pub d: u32,
    pub d1: u32,
    pub p_b: f64,
    pub p_dsigma: f64,
    pub frp_b: f64,
    pub frq_b: f64,
    pub p0: f64,
    pub q0: f64,
    pub alpha: f64,
    pub beta0: f64,
    pub beta0p: f64,
    pub sfp: f64,
    pub sfq: f64,
}

/// One step of the feasibility trace: the open window a free exponent had to
/// be placed in, and the value chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub exponent: String,
    pub lower: f64,
    pub upper: f64,
    /// Whether the upper end of the window is attainable.
    pub upper_closed: bool,
    pub chosen: f64,
    pub binding_lower: String,
    pub binding_upper: String,
}

fn check_preconditions(d: u32, p_b: f64, p_dsigma: f64, frp_b: f64, frq_b: f64) -> Result<()> {
    for (name, v) in [
        ("p_b", p_b),
        ("p_dsigma", p_dsigma),
        ("frp_b", frp_b),
        ("frq_b", frq_b),
    ] {
        if !v.is_finite() {
            return Err(invalid(format!("{name} must be finite, got {v}")));
        }
    }
    if d < 3 {
        return Err(invalid(format!("dimension must be at least 3, got {d}")));
    }
    let df = d as f64;
    if !(p_b > 2.0_f64.max(df / 2.0) && p_b <= df) {
        return Err(invalid(format!(
            "p_b = {p_b} must lie in ({}, {df}]",
            2.0_f64.max(df / 2.0)
        )));
    }
    if !(p_dsigma > 2.0 && p_dsigma <= df) {
        return Err(invalid(format!(
            "p_dsigma = {p_dsigma} must lie in (2, {df}]"
        )));
    }
    if !(frp_b > 1.0 && frq_b > 1.0) {
        return Err(invalid(format!(
            "frp_b = {frp_b}, frq_b = {frq_b} must both exceed 1"
        )));
    }
    let lhs = to_rational("frp_b", frp_b)?;
    let rhs = to_rational("frq_b", frq_b)?;
    let sum = BigRational::from_integer(BigInt::from(d)) / lhs
        + BigRational::from_integer(BigInt::from(2)) / rhs;
    if sum < BigRational::one() {
        return Err(invalid(format!(
            "d/frp_b + 2/frq_b = {} must be at least 1",
            rational_to_f64(&sum)
        )));
    }
    Ok(())
}

fn pick(
    trace: &mut Vec<TraceStep>,
    exponent: &str,
    lower: (f64, &str),
    upper: (f64, &str),
    upper_closed: bool,
) -> Result<f64> {
    if upper.0 - lower.0 <= 2.0 * EPS_STRICT {
        return Err(Error::Infeasible {
            constraint: format!(
                "{exponent}: need {exponent} > {:.6} ({}) and {exponent} {} {:.6} ({})",
                lower.0,
                lower.1,
                if upper_closed { "<=" } else { "<" },
                upper.0,
                upper.1
            ),
        });
    }
    let chosen = 0.5 * (lower.0 + upper.0);
    trace.push(TraceStep {
        exponent: exponent.to_string(),
        lower: lower.0,
        upper: upper.0,
        upper_closed,
        chosen,
        binding_lower: lower.1.to_string(),
        binding_upper: upper.1.to_string(),
    });
    Ok(chosen)
}

fn max_of<'a>(items: &[(f64, &'a str)]) -> (f64, &'a str) {
    items.iter().copied().fold(
        (f64::NEG_INFINITY, ""),
        |a, b| if b.0 > a.0 { b } else { a },
    )
}

fn min_of<'a>(items: &[(f64, &'a str)]) -> (f64, &'a str) {
    items
        .iter()
        .copied()
        .fold((f64::INFINITY, ""), |a, b| if b.0 < a.0 { b } else { a })
}

/// Solves the exponent system; see [`solve_exponents_traced`].
pub fn solve_exponents(
    d: u32,
    p_b: f64,
    p_dsigma: f64,
    frp_b: f64,
    frq_b: f64,
) -> Result<ExponentProfile> {
    solve_exponents_traced(d, p_b, p_dsigma, frp_b, frq_b).map(|(p, _)| p)
}

/// Solves the exponent system and returns the feasibility trace.
///
/// Free exponents are fixed in the order `p0, q0, alpha, beta0, beta0'`, each
/// at the midpoint of its feasible window given the previous choices. The
/// windows are projections of the full system, so the greedy choice never
/// paints itself into a corner: the system is infeasible iff the `p0` window
/// (or, degenerate cases aside, the `q0` window) is empty.
///
/// The noise dimension of the returned profile defaults to `d`.
pub fn solve_exponents_traced(
    d: u32,
    p_b: f64,
    p_dsigma: f64,
    frp_b: f64,
    frq_b: f64,
) -> Result<(ExponentProfile, Vec<TraceStep>)> {
    check_preconditions(d, p_b, p_dsigma, frp_b, frq_b)?;
    let df = d as f64;
    let fr_min = frp_b.min(frq_b);
    let mut trace = Vec::new();

    // q0 < frq_b is forced by beta0 * q0 <= frq_b with beta0 > 1, which turns
    // d/p0 + 2/q0 < 2 into a lower bound on p0.
    let p0_lower_q = if frq_b > 1.0 {
        df / (2.0 - 2.0 / frq_b)
    } else {
        f64::INFINITY
    };
    let p0 = pick(
        &mut trace,
        "p0",
        max_of(&[
            (2.0, "p0 > 2"),
            (df / 2.0, "d/p0 < 2"),
            (p0_lower_q, "d/p0 + 2/q0 < 2 with q0 < frq_b"),
        ]),
        min_of(&[
            (p_b, "p0 < p_b"),
            (frp_b, "beta0 * p0 <= frp_b with beta0 > 1"),
        ]),
        false,
    )?;

    let q0 = pick(
        &mut trace,
        "q0",
        max_of(&[(1.0, "q0 > 1"), (2.0 / (2.0 - df / p0), "d/p0 + 2/q0 < 2")]),
        min_of(&[(frq_b, "beta0 * q0 <= frq_b with beta0 > 1")]),
        false,
    )?;

    let lhs = df / p0 + 2.0 / q0;
    let alpha = pick(
        &mut trace,
        "alpha",
        max_of(&[(1.0, "alpha > 1"), (p0 / p_b, "p0/alpha < p_b")]),
        min_of(&[(2.0 / lhs, "d/p0 + 2/q0 < 2/alpha"), (p0, "p0/alpha > 1")]),
        false,
    )?;

    let beta0 = pick(
        &mut trace,
        "beta0",
        (1.0, "beta0 > 1"),
        min_of(&[
            (2.0, "beta0 < 2"),
            (fr_min, "beta0 < frp_b ∧ frq_b"),
            (frp_b / p0, "beta0 * p0 <= frp_b"),
            (frq_b / q0, "beta0 * q0 <= frq_b"),
            (1.0 + fr_min / (2.0 * p0), "2(beta0 - 1) p0 < frp_b ∧ frq_b"),
        ]),
        true,
    )?;

    // Any value in (1, beta0) satisfies the same constraints as beta0; the
    // midpoint of that window is the default choice.
    let beta0p = pick(
        &mut trace,
        "beta0p",
        (1.0, "beta0p > 1"),
        (beta0, "beta0p < beta0"),
        false,
    )?;

    let profile = ExponentProfile {
        d,
        d1: d,
        p_b,
        p_dsigma,
        frp_b,
        frq_b,
        p0,
        q0,
        alpha,
        beta0,
        beta0p,
        sfp: frp_b / beta0,
        sfq: frq_b / beta0,
    };
    let violations = validate_profile(&profile);
    if let Some(v) = violations.first() {
        return Err(Error::Infeasible {
            constraint: v.clone(),
        });
    }
    Ok((profile, trace))
}

/// Independent re-check of every inequality an [`ExponentProfile`] must
/// satisfy. Returns a description of each violated inequality (empty when the
/// profile is valid). Strict inequalities use the margin [`EPS_STRICT`].
pub fn validate_profile(p: &ExponentProfile) -> Vec<String> {
    let mut out = Vec::new();
    let e = EPS_STRICT;
    let d = p.d as f64;
    let mut need = |ok: bool, what: &str| {
        if !ok {
            out.push(what.to_string());
        }
    };
    need(p.d >= 3, "d >= 3");
    need(p.d1 >= p.d, "d1 >= d");
    need(
        p.p_dsigma > 2.0 + e && p.p_dsigma <= d,
        "p_dsigma in (2, d]",
    );
    need(
        p.p_b > 2.0_f64.max(d / 2.0) + e && p.p_b <= d,
        "p_b in (2 ∨ d/2, d]",
    );
    need(p.p0 > 2.0 + e && p.p0 < p.p_b - e, "p0 in (2, p_b)");
    need(p.q0 > 1.0 + e && p.q0.is_finite(), "q0 in (1, ∞)");
    need(d / p.p0 + 2.0 / p.q0 < 2.0 - e, "d/p0 + 2/q0 < 2");
    need(p.alpha > 1.0 + e, "alpha > 1");
    need(
        d / p.p0 + 2.0 / p.q0 < 2.0 / p.alpha - e,
        "d/p0 + 2/q0 < 2/alpha",
    );
    need(
        p.p0 / p.alpha > 1.0 + e && p.p0 / p.alpha < p.p_b - e,
        "1 < p0/alpha < p_b",
    );
    for (name, b) in [("beta0", p.beta0), ("beta0p", p.beta0p)] {
        let fr_min = p.frp_b.min(p.frq_b);
        need(b > 1.0 + e && b < 2.0 - e, &format!("{name} in (1, 2)"));
        need(b < fr_min - e, &format!("{name} < frp_b ∧ frq_b"));
        need(b * p.p0 <= p.frp_b, &format!("{name} * p0 <= frp_b"));
        need(b * p.q0 <= p.frq_b, &format!("{name} * q0 <= frq_b"));
        need(
            2.0 * (b - 1.0) * p.p0 < fr_min - e,
            &format!("2({name} - 1) p0 < frp_b ∧ frq_b"),
        );
    }
    need(p.beta0p < p.beta0 - e, "beta0p < beta0");
    need(
        (p.sfp - p.frp_b / p.beta0).abs() <= 1e-12 * p.sfp.abs().max(1.0),
        "sfp = frp_b / beta0",
    );
    need(
        (p.sfq - p.frq_b / p.beta0).abs() <= 1e-12 * p.sfq.abs().max(1.0),
        "sfq = frq_b / beta0",
    );
    // Algebraically equivalent to d/frp_b + 2/frq_b >= 1; a relative slack of
    // a few ulps absorbs the division by beta0.
    need(
        d / p.sfp + 2.0 / p.sfq >= p.beta0 * (1.0 - 1e-12),
        "d/sfp + 2/sfq >= beta0",
    );
    out
}

/// Outcome of [`check_uniqueness_hypothesis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCheck {
    /// Whether `d/frp_b + 1/frq_b <= 1` (compared exactly).
    pub holds: bool,
    pub lhs: f64,
    /// Mixed-norm order to use in the drift condition: time-first when
    /// `frp_b <= frq_b`, space-first otherwise.
    pub order: MixedOrder,
}

/// Checks the exponent hypothesis of the strong uniqueness theorem.
pub fn check_uniqueness_hypothesis(d: u32, frp_b: f64, frq_b: f64) -> Result<UniquenessCheck> {
    if d < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    let p = to_rational("frp_b", frp_b)?;
    let q = to_rational("frq_b", frq_b)?;
    if p < BigRational::one() || q < BigRational::one() {
        return Err(invalid("exponents must be at least 1"));
    }
    let lhs = BigRational::from_integer(BigInt::from(d)) / &p + BigRational::one() / &q;
    Ok(UniquenessCheck {
        holds: lhs <= BigRational::one(),
        lhs: rational_to_f64(&lhs),
        order: if p <= q {
            MixedOrder::TimeFirst
        } else {
            MixedOrder::SpaceFirst
        },
    })
}
