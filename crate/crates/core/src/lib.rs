//! Inexact proximal methods for composite problems `f + g` with `f` smooth
//! (possibly nonconvex) and `g` weakly convex.
//!
//! The crate is organised bottom-up:
//!
//! * [`zero_finder`]: the generic inexact zero-finding scheme with
//!   null-iteration bookkeeping that the two solvers specialise.
//! * [`weakly_convex`]: function models, closed-form proximal operators,
//!   Moreau envelopes and probe-based subdifferential checks.
//! * [`subsolver`]: accelerated dual projected gradient for
//!   `prox_{λγ‖B·‖₁}` with duality-gap certificates.
//! * [`ippm`] / [`ipgm`]: the inexact proximal point and proximal gradient
//!   drivers, plus the iFB baseline.
//! * [`problems`]: the log-residual image restoration objective, seeded
//!   instance generation and small closed-form test problems.
//! * [`diagnostics`]: forward-backward envelope, surrogate merit function
//!   and empirical rate fitting.
//! * [`experiments`]: the two benchmark protocols and CSV export.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod ipgm;
pub mod ippm;
pub mod linalg;
pub mod problems;
pub mod subsolver;
pub mod weakly_convex;
pub mod zero_finder;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};

pub use diagnostics::{estimate_rate, fbe_gradient, fbe_value, surrogate_value, KlProfile, RateFit};
pub use ipgm::{
    compute_constants, forward_point, implied_step_params, run_ifb, run_ipgm, ConstantsBundle,
    ErrorSchedule, IfbConfig, IfbSchedule, IpgmConfig,
};
pub use ippm::{equivalent_framework_view, run_ippm, IppmConfig, ProxOracle};
pub use problems::{generate_instance, ImageRestorationInstance, LogResidualLoss};
pub use subsolver::{solve_prox_subproblem, AnalysisL1, SubproblemSpec};
pub use weakly_convex::{
    CompositeProblem, ExactProx, ProxRequest, ProxSubsolver, SmoothPart, SolveStatus,
    SubsolveOutcome, WeaklyConvexPart,
};
pub use zero_finder::{Budget, IterationRecord, RadiusSchedule, SolverState, StopReason, Trace};
