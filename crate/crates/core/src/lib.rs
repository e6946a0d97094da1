//! Numerical laboratory for Itô SDEs whose diffusion gradient and drift are
//! only Morrey-integrable.
//!
//! The crate is organised along the objects that appear in the strong
//! well-posedness theory for such equations:
//!
//! * [`params`] — exponent systems and drift-regime classification;
//! * [`coeffs`] — coefficient fields, Morrey / mixed-norm diagnostics,
//!   mollification and truncation;
//! * [`pde`] — the backward evolution family `T_{s,t}` and the gradient
//!   operators `Q^k`;
//! * [`chaos`] — Wiener-chaos kernels, Parseval defects, strongness tails
//!   and pathwise reconstruction by iterated Itô integrals;
//! * [`sde`] — Euler–Maruyama simulation, occupation-time (Krylov)
//!   estimates, Girsanov weights and moment checks;
//! * [`verify`] — the acceptance criteria as runnable checks.

// Range checks are written as `!(x > 0.0)` on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numerical entry points take their exponents and budgets explicitly.
#![allow(clippy::too_many_arguments)]

pub mod chaos;
pub mod coeffs;
pub mod error;
pub mod params;
pub mod pde;
pub mod quadrature;
pub mod sde;
pub mod verify;

pub use chaos::{ChaosKernelSet, ChaosPlan, SimplexGrid};
pub use coeffs::{
    CoefficientField, Cylinder, MixedNormSpec, MixedOrder, MorreyReport, Tensor3, TimeFn,
};
pub use error::{Error, Result};
pub use params::{ExponentProfile, Regime, RegimeLabel};
pub use pde::{EvolutionSolve, Propagator, SpaceTimeGrid};
pub use sde::{McEstimate, SolutionPath, WienerPath};
