//! Nonlinearly preconditioned gradient flows.
//!
//! This crate simulates the dynamics `ẋ = −∇φ*(∇f(x))` together with the
//! discrete iteration `x⁺ = x − γ∇φ*(∇f(x))`, and turns the Lyapunov,
//! rate, duality and optimal-control properties of these dynamics into
//! executable checks.
//!
//! - [`refpotential`]: reference functions `φ`, conjugates `φ*` and the
//!   preconditioner `∇φ*`.
//! - [`objectives`]: smooth test costs with gradients, Hessian-vector
//!   products and known minimizers.
//! - [`integrate`]: vector fields, an adaptive Dormand–Prince integrator,
//!   fixed-step RK4 and the discrete preconditioned iteration.
//! - [`certify`]: claim checks over recorded trajectories.
//! - [`dualbridge`]: the mirror-descent correspondence, Bregman divergences
//!   and the infinite-horizon control cost.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod dualbridge;
pub mod integrate;
pub mod objectives;
pub mod refpotential;

pub use nalgebra::{DMatrix, DVector};

pub use certify::{CertificateReport, ClaimEntry, ClaimId, ClaimStatus};
pub use integrate::{TerminalReason, Trajectory};
pub use objectives::Objective;
pub use refpotential::ReferencePotential;
