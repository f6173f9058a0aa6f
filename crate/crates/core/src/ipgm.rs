//! Inexact proximal gradient method and the iFB baseline.
//!
//! IPGM solves the prox subproblem at the forward point `F_λ(x) = x − λ∇f(x)`
//! to tolerance `min{λ(1 − λϱ)ε_k²/2, ρ_k}`, forms `g^k = (x^k − p^k)/λ` and
//! then either shrinks the radii (null iteration) or accepts `x^{k+1} = p^k`.
//! Viewed through the zero-finding scheme this is a run on the gradient
//! mapping `G_λ(x) = (x − T_λ(x))/λ` with the implied stepsizes of
//! [`implied_step_params`].
//!
//! iFB uses a summable-root tolerance `ω_k` together with a strict model
//! decrease test, and keeps iterating the subsolver until both hold.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm, norm_sq, Vector};
use crate::weakly_convex::{
    CompositeProblem, ProxRequest, ProxSubsolver, SmoothPart, SolveStatus, WeaklyConvexPart,
};
use crate::zero_finder::{direction, Budget, IterationRecord, RadiusSchedule, StopReason, Trace};

/// Step constants derived from `(λ, L, ϱ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsBundle {
    pub lambda: f64,
    pub l: f64,
    pub rho: f64,
    /// `λ(1 − λ(L + ϱ))`
    pub c1: f64,
    /// `2(√(2/(λ⁻¹ − ϱ)) + √(2λ))`
    pub c2: f64,
    /// `min{C₁²/(4C₂²), C₁/4}`
    pub c: f64,
    /// `min{λ(1 − λϱ)/2, C₁²/(4C₂²), C₁/4}`
    pub cscript: f64,
}

pub fn compute_constants(lambda: f64, l: f64, rho: f64) -> Result<ConstantsBundle> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    if !(l >= 0.0 && rho >= 0.0) {
        return Err(Error::config("L and rho must be nonnegative"));
    }
    if !(lambda * (l + rho) < 1.0) {
        return Err(Error::config(format!("lambda·(L + rho) must be < 1, got {}", lambda * (l + rho))));
    }
    let c1 = lambda * (1.0 - lambda * (l + rho));
    let c2 = 2.0 * ((2.0 / (1.0 / lambda - rho)).sqrt() + (2.0 * lambda).sqrt());
    let c = (c1 * c1 / (4.0 * c2 * c2)).min(c1 / 4.0);
    let cscript = (lambda * (1.0 - lambda * rho) / 2.0).min(c);
    Ok(ConstantsBundle { lambda, l, rho, c1, c2, c, cscript })
}

/// `F_λ(x) = x − λ∇f(x)`.
pub fn forward_point<F: SmoothPart + ?Sized>(f: &F, lambda: f64, x: &Vector) -> Vector {
    x - &(f.gradient(x) * lambda)
}

/// `(d^k, t_k)` of the zero-finding view: `(0, 2λ)` at null iterations,
/// otherwise `d = −proj(0, B(g, ε))` and `t = λ‖g‖/‖d‖`.
pub fn implied_step_params(g: &Vector, eps: f64, r: f64, lambda: f64) -> (Vector, f64) {
    let gn = norm(g);
    if gn <= r + eps {
        return (Vector::zeros(g.len()), 2.0 * lambda);
    }
    let d = direction(g, eps).expect("non-null iteration has ‖g‖ > eps");
    (d, lambda * gn / (gn - eps))
}

/// Manually controlled error sequence `ρ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorSchedule {
    /// `ρ_k = rho0 / k^exponent`, summable for `exponent > 1`.
    Summable { rho0: f64, exponent: f64 },
    /// `ρ_k = C·ε_k²` with `C` from the constants bundle.
    Proportional,
}

impl ErrorSchedule {
    /// `ρ_k = rho0/k²`.
    pub fn summable(rho0: f64) -> Self {
        ErrorSchedule::Summable { rho0, exponent: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorSchedule::Summable { rho0, exponent } => {
                if !(rho0 >= 0.0 && rho0.is_finite()) {
                    return Err(Error::config("rho0 must be nonnegative"));
                }
                if !(exponent > 1.0) {
                    return Err(Error::config(format!("summable schedule needs exponent > 1, got {exponent}")));
                }
                Ok(())
            }
            ErrorSchedule::Proportional => Ok(()),
        }
    }

    pub fn rho(&self, k: usize, eps: f64, consts: &ConstantsBundle) -> f64 {
        match *self {
            ErrorSchedule::Summable { rho0, exponent } => rho0 / inverse_power_denominator(k, exponent),
            ErrorSchedule::Proportional => consts.c * eps * eps,
        }
    }
}

fn inverse_power_denominator(k: usize, exponent: f64) -> f64 {
    let kf = k as f64;
    if exponent.fract() == 0.0 && exponent.abs() < i32::MAX as f64 {
        kf.powi(exponent as i32)
    } else {
        kf.powf(exponent)
    }
}

/// Subproblem tolerance `min{λ(1 − λϱ)ε²/2, ρ_k}`.
pub fn subproblem_tolerance(consts: &ConstantsBundle, eps: f64, rho_k: f64) -> f64 {
    (consts.lambda * (1.0 - consts.lambda * consts.rho) * eps * eps / 2.0).min(rho_k)
}

#[derive(Debug, Clone)]
pub struct IpgmConfig {
    pub lambda: f64,
    pub x1: Vector,
    /// Must satisfy `ε₁ ≤ r₁` and `θ ≤ μ`.
    pub radii: RadiusSchedule,
    pub schedule: ErrorSchedule,
    pub budget: Budget,
    /// Keep `x`, `g`, `d` and `p` in every record.
    pub store_vectors: bool,
}

impl IpgmConfig {
    pub fn new(lambda: f64, x1: Vector, radii: RadiusSchedule, schedule: ErrorSchedule, budget: Budget) -> Self {
        Self { lambda, x1, radii, schedule, budget, store_vectors: false }
    }
}

fn finish(records: Vec<IterationRecord>, stop: StopReason, x: Vector, initial: Option<RadiusSchedule>, radii: Option<RadiusSchedule>, start: Instant, violations: usize) -> Trace {
    let nulls = records.iter().filter(|r| r.is_null).count();
    Trace {
        iterations: records.len(),
        records,
        stop_reason: stop,
        x,
        initial_radii: initial,
        final_radii: radii,
        null_count: nulls,
        contract_violations: violations,
        elapsed: start.elapsed(),
    }
}

/// Runs IPGM on `φ = f + g` with the given prox subsolver.
pub fn run_ipgm<F, G, S>(problem: CompositeProblem<'_, F, G>, solver: &S, cfg: &IpgmConfig) -> Result<Trace>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
    S: ProxSubsolver + ?Sized,
{
    let rho = problem.g.modulus();
    let consts = compute_constants(cfg.lambda, problem.f.descent_constant(), rho)?;
    cfg.schedule.validate()?;
    if !cfg.radii.keeps_eps_below_r() {
        return Err(Error::config("IPGM needs eps1 <= r1 and theta <= mu"));
    }
    let lambda = cfg.lambda;
    let budget = cfg.budget;
    let start = Instant::now();
    let deadline = budget.deadline(start);

    let mut x = cfg.x1.clone();
    let mut radii = cfg.radii;
    let mut fval = problem.value(&x);
    let mut records: Vec<IterationRecord> = Vec::new();

    let stop = loop {
        if budget.target_hit(fval) {
            break StopReason::TargetReached;
        }
        if let Some(reason) = budget.pre_check(records.len(), start, Some(&radii)) {
            break reason;
        }
        let k = records.len() + 1;
        let anchor = forward_point(problem.f, lambda, &x);
        if !all_finite(&anchor) {
            break StopReason::NonFinite;
        }
        let omega = subproblem_tolerance(&consts, radii.eps, cfg.schedule.rho(k, radii.eps, &consts));
        let out = solver.solve(&ProxRequest { lambda, anchor: &anchor, omega, deadline });
        match out.status {
            SolveStatus::Converged => {}
            SolveStatus::TimedOut => break StopReason::TimeLimit,
            SolveStatus::Unconverged | SolveStatus::Rejected => {
                log::warn!("IPGM iteration {k}: subsolver stopped at gap {:e} > omega {:e}", out.gap, omega);
                break StopReason::SubsolverFailure;
            }
        }
        let g = (&x - &out.p) / lambda;
        if !all_finite(&g) {
            break StopReason::NonFinite;
        }
        let gnorm = norm(&g);
        let (eps, r) = (radii.eps, radii.r);
        let (d, t) = implied_step_params(&g, eps, r, lambda);
        let null = gnorm <= r + eps;
        let x_k = cfg.store_vectors.then(|| x.clone());
        let fval_k = fval;
        if null {
            radii.shrink();
        } else {
            x = out.p.clone();
            fval = problem.value(&x);
        }
        records.push(IterationRecord {
            k,
            dnorm: if null { 0.0 } else { gnorm - eps },
            x: x_k,
            g: cfg.store_vectors.then_some(g),
            d: cfg.store_vectors.then_some(d),
            p: cfg.store_vectors.then_some(out.p),
            gnorm,
            t,
            eps,
            r,
            is_null: null,
            fval: fval_k,
            omega,
            gap: out.gap,
            subsolver_iters: out.iters,
            time_s: start.elapsed().as_secs_f64(),
            contract_violation: false,
        });
        if budget.residual_hit(gnorm) {
            break StopReason::ResidualTolerance;
        }
    };
    Ok(finish(records, stop, x, Some(cfg.radii), Some(radii), start, 0))
}

/// iFB error sequence `ω_k = scale / k^exponent`; `Σ√ω_k < ∞` needs
/// `exponent > 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IfbSchedule {
    InversePower { scale: f64, exponent: f64 },
}

impl Default for IfbSchedule {
    fn default() -> Self {
        IfbSchedule::InversePower { scale: 1.0, exponent: 4.0 }
    }
}

impl IfbSchedule {
    pub fn validate(&self) -> Result<()> {
        let IfbSchedule::InversePower { scale, exponent } = *self;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config("iFB schedule scale must be positive"));
        }
        if !(exponent > 2.0) {
            return Err(Error::config(format!(
                "iFB needs sum of sqrt(omega_k) finite; 1/k^{exponent} does not qualify"
            )));
        }
        Ok(())
    }

    pub fn omega(&self, k: usize) -> f64 {
        let IfbSchedule::InversePower { scale, exponent } = *self;
        scale / inverse_power_denominator(k, exponent)
    }
}

#[derive(Debug, Clone)]
pub struct IfbConfig {
    /// `λ ∈ (0, 1/L)`.
    pub lambda: f64,
    pub x1: Vector,
    pub schedule: IfbSchedule,
    pub budget: Budget,
    pub store_vectors: bool,
}

impl IfbConfig {
    pub fn new(lambda: f64, x1: Vector, budget: Budget) -> Self {
        Self { lambda, x1, schedule: IfbSchedule::default(), budget, store_vectors: false }
    }
}

/// Runs the iFB baseline (convex `g` only).
///
/// Each step accepts `p` once the gap is `≤ ω_k` and
/// `⟨∇f(x), p − x⟩ + ‖p − x‖²/(2λ) + g(p) < g(x)`. When the subsolver cannot
/// deliver such a point within its inner budget the run stops as
/// [`StopReason::Stalled`].
pub fn run_ifb<F, G, S>(problem: CompositeProblem<'_, F, G>, solver: &S, cfg: &IfbConfig) -> Result<Trace>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
    S: ProxSubsolver + ?Sized,
{
    let l = problem.f.descent_constant();
    if !(cfg.lambda > 0.0 && cfg.lambda * l < 1.0) {
        return Err(Error::config(format!("iFB needs lambda in (0, 1/L), got lambda·L = {}", cfg.lambda * l)));
    }
    if problem.g.modulus() != 0.0 {
        return Err(Error::config("iFB needs a convex g"));
    }
    cfg.schedule.validate()?;
    let lambda = cfg.lambda;
    let budget = cfg.budget;
    let start = Instant::now();
    let deadline = budget.deadline(start);

    let mut x = cfg.x1.clone();
    let mut gx = problem.g.value(&x);
    let mut fval = problem.f.value(&x) + gx;
    let mut records: Vec<IterationRecord> = Vec::new();

    let stop = loop {
        if budget.target_hit(fval) {
            break StopReason::TargetReached;
        }
        if let Some(reason) = budget.pre_check(records.len(), start, None) {
            break reason;
        }
        let k = records.len() + 1;
        let grad = problem.f.gradient(&x);
        let anchor = &x - &(&grad * lambda);
        if !all_finite(&anchor) {
            break StopReason::NonFinite;
        }
        let omega = cfg.schedule.omega(k);
        let mut accept = |p: &Vector| {
            let step = p - &x;
            grad.dot(&step) + norm_sq(&step) / (2.0 * lambda) + problem.g.value(p) < gx
        };
        let out = solver.solve_accepting(&ProxRequest { lambda, anchor: &anchor, omega, deadline }, &mut accept);
        match out.status {
            SolveStatus::Converged => {}
            SolveStatus::TimedOut => break StopReason::TimeLimit,
            SolveStatus::Unconverged | SolveStatus::Rejected => {
                log::info!("iFB stalled at iteration {k} (gap {:e}, omega {:e}, status {:?})", out.gap, omega, out.status);
                break StopReason::Stalled;
            }
        }
        let g = (&x - &out.p) / lambda;
        if !all_finite(&g) {
            break StopReason::NonFinite;
        }
        let gnorm = norm(&g);
        let x_k = cfg.store_vectors.then(|| x.clone());
        let fval_k = fval;
        x = out.p.clone();
        gx = problem.g.value(&x);
        fval = problem.f.value(&x) + gx;
        records.push(IterationRecord {
            k,
            dnorm: gnorm,
            x: x_k,
            d: cfg.store_vectors.then(|| -&g),
            g: cfg.store_vectors.then_some(g),
            p: cfg.store_vectors.then_some(out.p),
            gnorm,
            t: lambda,
            eps: f64::NAN,
            r: f64::NAN,
            is_null: false,
            fval: fval_k,
            omega,
            gap: out.gap,
            subsolver_iters: out.iters,
            time_s: start.elapsed().as_secs_f64(),
            contract_violation: false,
        });
        if budget.residual_hit(gnorm) {
            break StopReason::ResidualTolerance;
        }
    };
    Ok(finish(records, stop, x, None, None, start, 0))
}
