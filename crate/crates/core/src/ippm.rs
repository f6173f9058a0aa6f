//! Inexact proximal point method.
//!
//! The zero-finding scheme applied to `G = ∇e_λg`: an oracle returns `p^k`
//! with `‖p^k − Prox_{λg}(x^k)‖ ≤ λε_k`, so `g^k = (x^k − p^k)/λ` is an
//! `ε_k`-accurate evaluation of the Moreau gradient.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist, norm, Vector};
use crate::weakly_convex::{check_prox_parameter, moreau_gradient, ProxRequest, ProxSubsolver, SolveStatus, WeaklyConvexPart};
use crate::zero_finder::{framework_step, Budget, ConstantStep, IterationRecord, RadiusSchedule, SolverState, StopReason, Trace};

/// Relative slack on the oracle contract check.
const CONTRACT_SLACK: f64 = 1e-9;

/// Inexact proximal operator `(λ, x, ε) ↦ p` with `‖p − Prox_{λg}(x)‖ ≤ λε`.
pub trait ProxOracle {
    fn query(&mut self, lambda: f64, x: &Vector, eps: f64) -> Result<Vector>;
}

impl<F: FnMut(f64, &Vector, f64) -> Result<Vector>> ProxOracle for F {
    fn query(&mut self, lambda: f64, x: &Vector, eps: f64) -> Result<Vector> {
        self(lambda, x, eps)
    }
}

/// Oracle returning the exact prox of `g`.
#[derive(Debug, Clone, Copy)]
pub struct ExactOracle<'a, G: ?Sized>(pub &'a G);

impl<G: WeaklyConvexPart + ?Sized> ProxOracle for ExactOracle<'_, G> {
    fn query(&mut self, lambda: f64, x: &Vector, _eps: f64) -> Result<Vector> {
        self.0.prox(lambda, x)
    }
}

/// Oracle built on a gap-certified subsolver.
///
/// A gap `ω` bounds `‖p − Prox‖ ≤ √(2ω/(λ⁻¹ − ϱ))`, so asking for
/// `ω = λ²ε²(λ⁻¹ − ϱ)/2` meets the distance contract.
#[derive(Debug, Clone, Copy)]
pub struct GapOracle<'a, S: ?Sized> {
    pub solver: &'a S,
    pub modulus: f64,
}

pub fn gap_for_distance(lambda: f64, modulus: f64, eps: f64) -> f64 {
    lambda * lambda * eps * eps * (1.0 / lambda - modulus) / 2.0
}

impl<S: ProxSubsolver + ?Sized> ProxOracle for GapOracle<'_, S> {
    fn query(&mut self, lambda: f64, x: &Vector, eps: f64) -> Result<Vector> {
        let omega = gap_for_distance(lambda, self.modulus, eps);
        let out = self.solver.solve(&ProxRequest { lambda, anchor: x, omega, deadline: None });
        match out.status {
            SolveStatus::Converged => Ok(out.p),
            _ => Err(Error::Unconverged { gap: out.gap, iters: out.iters }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IppmConfig {
    /// `λ ∈ (0, 1/ϱ)`.
    pub lambda: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub x1: Vector,
    pub radii: RadiusSchedule,
    pub budget: Budget,
    pub store_vectors: bool,
    /// Compare every oracle answer against `g.prox` and count misses.
    pub cross_check: bool,
    /// Constant stepsize; defaults to `min(τ₂, max(τ₁, λ))`.
    pub stepsize: Option<f64>,
}

impl IppmConfig {
    pub fn new(lambda: f64, x1: Vector, radii: RadiusSchedule, budget: Budget) -> Self {
        Self {
            lambda,
            tau1: lambda,
            tau2: lambda,
            x1,
            radii,
            budget,
            store_vectors: false,
            cross_check: false,
            stepsize: None,
        }
    }

    pub fn step(&self) -> f64 {
        self.stepsize.unwrap_or_else(|| self.tau2.min(self.tau1.max(self.lambda)))
    }

    fn validate(&self, modulus: f64) -> Result<()> {
        check_prox_parameter(self.lambda, modulus)?;
        if !(self.tau1 > 0.0 && self.tau1 <= self.tau2 && self.tau2 < 2.0 * self.lambda) {
            return Err(Error::config(format!(
                "need 0 < tau1 <= tau2 < 2·lambda, got tau1 = {}, tau2 = {}, lambda = {}",
                self.tau1, self.tau2, self.lambda
            )));
        }
        let t = self.step();
        if !(t >= self.tau1 && t <= self.tau2) {
            return Err(Error::config(format!("stepsize {t} outside [tau1, tau2]")));
        }
        if let Some(tol) = self.budget.tol_residual {
            if !(tol >= 0.0) {
                return Err(Error::config("residual tolerance must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Runs the inexact proximal point method on `g`.
pub fn run_ippm<G, O>(g: &G, oracle: &mut O, cfg: &IppmConfig) -> Result<Trace>
where
    G: WeaklyConvexPart + ?Sized,
    O: ProxOracle + ?Sized,
{
    cfg.validate(g.modulus())?;
    let lambda = cfg.lambda;
    let budget = cfg.budget;
    let mut step = ConstantStep(cfg.step());
    let start = Instant::now();
    let mut state = SolverState::new(cfg.x1.clone(), cfg.radii);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut violations = 0;

    let stop = loop {
        if let Some(reason) = budget.pre_check(records.len(), start, Some(&state.radii)) {
            break reason;
        }
        let eps = state.radii.eps;
        let p = oracle.query(lambda, &state.x, eps)?;
        if !all_finite(&p) {
            break StopReason::NonFinite;
        }
        let mut violated = false;
        if cfg.cross_check {
            let exact = g.prox(lambda, &state.x)?;
            if dist(&p, &exact) > lambda * eps * (1.0 + CONTRACT_SLACK) {
                violated = true;
                violations += 1;
                log::warn!("IPPM iteration {}: oracle missed its accuracy contract", state.k);
            }
        }
        let grad = (&state.x - &p) / lambda;
        if !all_finite(&grad) {
            break StopReason::NonFinite;
        }
        let fval = g.value(&state.x);
        let (next, mut rec) = framework_step(state, grad, &mut step)?;
        state = next;
        let gnorm = rec.gnorm;
        rec.fval = fval;
        rec.contract_violation = violated;
        rec.time_s = start.elapsed().as_secs_f64();
        if cfg.store_vectors {
            rec.p = Some(p);
        } else {
            rec.x = None;
            rec.g = None;
            rec.d = None;
        }
        records.push(rec);
        if budget.residual_hit(gnorm) {
            break StopReason::ResidualTolerance;
        }
    };
    let nulls = records.iter().filter(|r| r.is_null).count();
    Ok(Trace {
        iterations: records.len(),
        records,
        stop_reason: stop,
        x: state.x,
        initial_radii: Some(cfg.radii),
        final_radii: Some(state.radii),
        null_count: nulls,
        contract_violations: violations,
        elapsed: start.elapsed(),
    })
}

/// `‖g^k − ∇e_λg(x^k)‖` for every record of a run kept with vectors.
pub fn equivalent_framework_view<G: WeaklyConvexPart + ?Sized>(trace: &Trace, g: &G, lambda: f64) -> Result<Vec<f64>> {
    trace
        .records
        .iter()
        .map(|rec| {
            let (Some(x), Some(gk)) = (rec.x.as_ref(), rec.g.as_ref()) else {
                return Err(Error::Capability("trace was recorded without iterate vectors"));
            };
            let exact = moreau_gradient(g, lambda, x)?;
            Ok(norm(&(gk - &exact)))
        })
        .collect()
}
