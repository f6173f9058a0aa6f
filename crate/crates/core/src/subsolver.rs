//! Dual accelerated projected gradient for the prox of `g = γ‖B·‖₁`.
//!
//! The primal subproblem `min_p Φ(p) = γ‖Bp‖₁ + ‖p − a‖²/(2λ)` has the dual
//! `max_{‖y‖∞ ≤ γ} Ψ(y) = −(λ/2)‖Bᵀy‖² + ⟨Ba, y⟩`, whose gradient is
//! `B(a − λBᵀy)` with Lipschitz constant `λ‖B‖₂²`. Each dual iterate yields
//! the primal candidate `p(y) = a − λBᵀy` and the certificate `Φ(p) − Ψ(y)`.
//!
//! The gap is evaluated in the cancellation-free form
//! `Σ_i |(Bp)_i|(γ − sign((Bp)_i)·y_i) + ‖p − p(y)‖²/(2λ)`, a sum of
//! nonnegative terms for feasible `y`. This keeps certificates meaningful at
//! the very small tolerances iFB asks for late in a run.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{norm1, norm_inf, norm_sq, spectral_norm_sq, Matrix, Vector};
use crate::weakly_convex::{ProxRequest, ProxSubsolver, SolveStatus, SubsolveOutcome, WeaklyConvexPart};

const POWER_STEPS: usize = 100;
const POWER_TOL: f64 = 1e-6;
const STEP_SAFETY: f64 = 0.99;

/// One prox subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub b: &'a Matrix,
    pub gamma: f64,
    pub lambda: f64,
    /// The forward point `F_λ(x^k)`.
    pub anchor: &'a Vector,
    pub omega: f64,
    pub inner_budget: usize,
    /// Cached `‖B‖₂²`; estimated by power iteration when absent.
    pub b_norm_sq: Option<f64>,
    pub deadline: Option<Instant>,
    /// Keep the best-so-far gap after every inner iteration.
    pub record_history: bool,
}

impl<'a> SubproblemSpec<'a> {
    pub fn new(b: &'a Matrix, gamma: f64, lambda: f64, anchor: &'a Vector, omega: f64) -> Self {
        Self {
            b,
            gamma,
            lambda,
            anchor,
            omega,
            inner_budget: 1_000_000,
            b_norm_sq: None,
            deadline: None,
            record_history: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("lambda must be positive"));
        }
        if self.omega.is_nan() || self.omega < 0.0 {
            return Err(Error::config("omega must be nonnegative"));
        }
        if self.b.ncols() != self.anchor.len() {
            return Err(Error::DimensionMismatch { expected: self.b.ncols(), found: self.anchor.len() });
        }
        Ok(())
    }

    fn feasible(&self, y: &Vector) -> bool {
        norm_inf(y) <= self.gamma
    }
}

/// `Ψ(y) = −(λ/2)‖Bᵀy‖² + ⟨B·anchor, y⟩` on the box, `−∞` off it.
pub fn dual_objective(spec: &SubproblemSpec<'_>, y: &Vector) -> f64 {
    if !spec.feasible(y) {
        return f64::NEG_INFINITY;
    }
    let w = spec.b.t().dot(y);
    -0.5 * spec.lambda * norm_sq(&w) + spec.anchor.dot(&w)
}

/// `p = anchor − λBᵀy`.
pub fn primal_recovery(spec: &SubproblemSpec<'_>, y: &Vector) -> Vector {
    spec.anchor - &(spec.b.t().dot(y) * spec.lambda)
}

/// `Φ(p) = γ‖Bp‖₁ + ‖p − anchor‖²/(2λ)`.
pub fn primal_objective(spec: &SubproblemSpec<'_>, p: &Vector) -> f64 {
    spec.gamma * norm1(&spec.b.dot(p)) + norm_sq(&(p - spec.anchor)) / (2.0 * spec.lambda)
}

/// `Φ(p) − Ψ(y)` for feasible `y`.
pub fn duality_gap(spec: &SubproblemSpec<'_>, p: &Vector, y: &Vector) -> Result<f64> {
    if !spec.feasible(y) {
        return Err(Error::Contract("duality gap needs a dual-feasible y".into()));
    }
    let bp = spec.b.dot(p);
    let recovered = primal_recovery(spec, y);
    Ok(box_gap(spec.gamma, &bp, y) + norm_sq(&(p - &recovered)) / (2.0 * spec.lambda))
}

/// `Σ |v_i|(γ − sign(v_i)·y_i)`; every term is ≥ 0 when `|y_i| ≤ γ`.
fn box_gap(gamma: f64, bp: &Vector, y: &Vector) -> f64 {
    bp.iter()
        .zip(y.iter())
        .map(|(&v, &yi)| if v == 0.0 { 0.0 } else { v.abs() * (gamma - v.signum() * yi) })
        .sum()
}

/// Dual iterate with accelerated-gradient momentum.
#[derive(Debug, Clone)]
pub struct DualState {
    pub y: Vector,
    pub y_prev: Vector,
    pub momentum_t: f64,
    pub inner_iter: usize,
    /// Extrapolation weight `(t_{k-1} − 1)/t_k` for the next step.
    beta: f64,
    /// `Bᵀy` and `B Bᵀy` for the current and previous iterate.
    w: Vector,
    w_prev: Vector,
    bw: Vector,
    bw_prev: Vector,
}

impl DualState {
    fn zero(m: usize, n: usize) -> Self {
        Self {
            y: Vector::zeros(m),
            y_prev: Vector::zeros(m),
            momentum_t: 1.0,
            inner_iter: 0,
            beta: 0.0,
            w: Vector::zeros(n),
            w_prev: Vector::zeros(n),
            bw: Vector::zeros(m),
            bw_prev: Vector::zeros(m),
        }
    }

    /// One projected ascent step from the extrapolated point.
    fn advance(&mut self, b: &Matrix, ba: &Vector, gamma: f64, lambda: f64, step: f64) {
        let beta = self.beta;
        // extrapolated z = y + β(y − y_prev); ∇Ψ(z) = Ba − λ B Bᵀz
        let mut y_new = Vector::zeros(self.y.len());
        ndarray::Zip::from(&mut y_new)
            .and(&self.y)
            .and(&self.y_prev)
            .and(ba)
            .and(&self.bw)
            .and(&self.bw_prev)
            .for_each(|out, &y, &yp, &ba, &bw, &bwp| {
                let z = y + beta * (y - yp);
                let bwz = bw + beta * (bw - bwp);
                *out = (z + step * (ba - lambda * bwz)).clamp(-gamma, gamma);
            });
        let w_new = b.t().dot(&y_new);
        let bw_new = b.dot(&w_new);
        self.y_prev = std::mem::replace(&mut self.y, y_new);
        self.w_prev = std::mem::replace(&mut self.w, w_new);
        self.bw_prev = std::mem::replace(&mut self.bw, bw_new);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.momentum_t * self.momentum_t).sqrt());
        self.beta = (self.momentum_t - 1.0) / t_next;
        self.momentum_t = t_next;
        self.inner_iter += 1;
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub p: Vector,
    pub y: Vector,
    pub gap: f64,
    pub iters: usize,
    pub status: SolveStatus,
    /// Best-so-far gap after each inner iteration (index 0 is the start).
    pub gap_history: Vec<f64>,
}

/// Solves the prox subproblem to duality gap `≤ omega`.
pub fn solve_prox_subproblem(spec: &SubproblemSpec<'_>) -> Result<SubproblemSolution> {
    solve_prox_subproblem_accepting(spec, &mut |_| true)
}

/// As [`solve_prox_subproblem`], but a candidate is only returned once it
/// also passes `accept`.
///
/// Starts from `y = 0` and returns the first iterate meeting both
/// conditions. If the budget or deadline runs out first, the pair with the
/// smallest gap is returned with a non-converged status.
pub fn solve_prox_subproblem_accepting(
    spec: &SubproblemSpec<'_>,
    accept: &mut dyn FnMut(&Vector) -> bool,
) -> Result<SubproblemSolution> {
    spec.validate()?;
    let (m, n) = spec.b.dim();
    let (gamma, lambda) = (spec.gamma, spec.lambda);
    let lip = spec.b_norm_sq.unwrap_or_else(|| spectral_norm_sq(spec.b, POWER_STEPS, POWER_TOL));

    let ba = spec.b.dot(spec.anchor);
    let mut state = DualState::zero(m, n);
    let mut best_gap = box_gap(gamma, &ba, &state.y);
    let mut best = (spec.anchor.clone(), state.y.clone());
    let mut history = Vec::new();
    if spec.record_history {
        history.push(best_gap);
    }
    let mut rejected = false;
    if best_gap <= spec.omega {
        if accept(spec.anchor) {
            return Ok(SubproblemSolution {
                p: spec.anchor.clone(),
                y: state.y,
                gap: best_gap,
                iters: 0,
                status: SolveStatus::Converged,
                gap_history: history,
            });
        }
        rejected = true;
    }
    if lip == 0.0 {
        // B = 0: p = anchor is optimal
        let status = if rejected { SolveStatus::Rejected } else { SolveStatus::Converged };
        return Ok(SubproblemSolution { p: best.0, y: best.1, gap: 0.0, iters: 0, status, gap_history: history });
    }
    let step = STEP_SAFETY / (lambda * lip);

    let mut status = SolveStatus::Unconverged;
    while state.inner_iter < spec.inner_budget {
        if state.inner_iter.is_multiple_of(64) {
            if let Some(deadline) = spec.deadline {
                if Instant::now() >= deadline {
                    status = SolveStatus::TimedOut;
                    break;
                }
            }
        }
        state.advance(spec.b, &ba, gamma, lambda, step);
        // p(y) = a − λw, Bp = Ba − λBw
        let bp = &ba - &(&state.bw * lambda);
        let gap = box_gap(gamma, &bp, &state.y);
        let improved = gap < best_gap;
        if improved {
            best_gap = gap;
        }
        if spec.record_history {
            history.push(best_gap);
        }
        if gap <= spec.omega {
            let p = spec.anchor - &(&state.w * lambda);
            if accept(&p) {
                return Ok(SubproblemSolution {
                    p,
                    y: state.y,
                    gap,
                    iters: state.inner_iter,
                    status: SolveStatus::Converged,
                    gap_history: history,
                });
            }
            rejected = true;
            if improved {
                best = (p, state.y.clone());
            }
        } else if improved {
            best = (spec.anchor - &(&state.w * lambda), state.y.clone());
        }
    }
    if status == SolveStatus::Unconverged && rejected {
        status = SolveStatus::Rejected;
    }
    Ok(SubproblemSolution {
        p: best.0,
        y: best.1,
        gap: best_gap,
        iters: state.inner_iter,
        status,
        gap_history: history,
    })
}

/// `g(x) = γ‖Bx‖₁`, carrying a cached `‖B‖₂²` and inner-iteration budgets.
#[derive(Debug, Clone)]
pub struct AnalysisL1 {
    b: Matrix,
    gamma: f64,
    b_norm_sq: f64,
    /// Inner budget for inexact solves.
    pub inner_budget: usize,
    /// Inner budget for the high-accuracy reference prox.
    pub reference_budget: usize,
    /// Reference prox solves to gap `reference_tol·max(1, g(anchor))`.
    pub reference_tol: f64,
}

impl AnalysisL1 {
    pub fn new(b: Matrix, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be nonnegative, got {gamma}")));
        }
        let b_norm_sq = spectral_norm_sq(&b, POWER_STEPS, POWER_TOL);
        Ok(Self { b, gamma, b_norm_sq, inner_budget: 1_000_000, reference_budget: 1_000_000, reference_tol: 1e-12 })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn b_norm_sq(&self) -> f64 {
        self.b_norm_sq
    }

    pub fn spec<'a>(&'a self, lambda: f64, anchor: &'a Vector, omega: f64) -> SubproblemSpec<'a> {
        SubproblemSpec {
            b: &self.b,
            gamma: self.gamma,
            lambda,
            anchor,
            omega,
            inner_budget: self.inner_budget,
            b_norm_sq: Some(self.b_norm_sq),
            deadline: None,
            record_history: false,
        }
    }

    /// Prox computed to a caller-chosen gap.
    pub fn prox_to_gap(&self, lambda: f64, x: &Vector, omega: f64) -> Result<SubproblemSolution> {
        if self.gamma == 0.0 {
            return Ok(SubproblemSolution {
                p: x.clone(),
                y: Vector::zeros(self.b.nrows()),
                gap: 0.0,
                iters: 0,
                status: SolveStatus::Converged,
                gap_history: Vec::new(),
            });
        }
        let mut spec = self.spec(lambda, x, omega);
        spec.inner_budget = self.reference_budget;
        solve_prox_subproblem(&spec)
    }
}

impl WeaklyConvexPart for AnalysisL1 {
    fn value(&self, x: &Vector) -> f64 {
        self.gamma * norm1(&self.b.dot(x))
    }

    fn modulus(&self) -> f64 {
        0.0
    }

    fn prox(&self, lambda: f64, x: &Vector) -> Result<Vector> {
        let omega = self.reference_tol * self.value(x).max(1.0);
        let sol = self.prox_to_gap(lambda, x, omega)?;
        match sol.status {
            SolveStatus::Converged => Ok(sol.p),
            _ => Err(Error::Unconverged { gap: sol.gap, iters: sol.iters }),
        }
    }
}

impl ProxSubsolver for AnalysisL1 {
    fn solve_accepting(&self, req: &ProxRequest<'_>, accept: &mut dyn FnMut(&Vector) -> bool) -> SubsolveOutcome {
        if self.gamma == 0.0 {
            let p = req.anchor.clone();
            let status = if accept(&p) { SolveStatus::Converged } else { SolveStatus::Rejected };
            return SubsolveOutcome { p, gap: 0.0, iters: 0, status };
        }
        let mut spec = self.spec(req.lambda, req.anchor, req.omega);
        spec.deadline = req.deadline;
        match solve_prox_subproblem_accepting(&spec, accept) {
            Ok(sol) => SubsolveOutcome { p: sol.p, gap: sol.gap, iters: sol.iters, status: sol.status },
            Err(_) => SubsolveOutcome {
                p: req.anchor.clone(),
                gap: f64::INFINITY,
                iters: 0,
                status: SolveStatus::Unconverged,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dist, norm};
    use crate::problems::generate_instance;
    use crate::weakly_convex::soft_threshold;
    use ndarray::array;

    fn scalar() -> (Matrix, Vector) {
        (array![[1.0]], array![2.0])
    }

    #[test]
    fn dual_objective_examples() {
        let (b, a) = scalar();
        let spec = SubproblemSpec::new(&b, 1.0, 1.0, &a, 0.0);
        assert_eq!(dual_objective(&spec, &array![0.0]), 0.0);
        assert_eq!(dual_objective(&spec, &array![1.5]), f64::NEG_INFINITY);
        assert_eq!(dual_objective(&spec, &array![1.0]), 1.5);
    }

    #[test]
    fn primal_recovery_examples() {
        let (b, a) = scalar();
        let spec = SubproblemSpec::new(&b, 1.0, 1.0, &a, 0.0);
        assert_eq!(primal_recovery(&spec, &array![0.0]), a);
        let p = primal_recovery(&spec, &array![1.0]);
        assert_eq!(p, array![1.0]);
        assert_eq!(p, soft_threshold(&a, 1.0));

        let spec2 = SubproblemSpec::new(&b, 1.0, 2.0, &a, 0.0);
        let corr1 = &a - &primal_recovery(&spec, &array![0.5]);
        let corr2 = &a - &primal_recovery(&spec2, &array![0.5]);
        assert_eq!(corr2, corr1 * 2.0);
    }

    #[test]
    fn duality_gap_examples() {
        let (b, a) = scalar();
        let spec = SubproblemSpec::new(&b, 1.0, 1.0, &a, 0.0);
        assert_eq!(duality_gap(&spec, &array![1.0], &array![1.0]).unwrap(), 0.0);
        // y = 0, p = anchor → γ‖B·anchor‖₁
        assert_eq!(duality_gap(&spec, &a, &array![0.0]).unwrap(), 2.0);
        assert!(matches!(duality_gap(&spec, &a, &array![3.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn stable_gap_agrees_with_direct_difference() {
        let inst = generate_instance(6, 4, 0.3, 8).unwrap();
        let anchor = array![0.5, -1.0, 2.0, 0.1];
        let spec = SubproblemSpec::new(inst.reg.b(), 0.3, 0.2, &anchor, 0.0);
        let y = array![0.1, -0.3, 0.3, 0.0, 0.2, -0.05];
        let p = array![0.4, -0.7, 1.5, 0.3];
        let direct = primal_objective(&spec, &p) - dual_objective(&spec, &y);
        let stable = duality_gap(&spec, &p, &y).unwrap();
        assert!((direct - stable).abs() < 1e-12 * (1.0 + direct.abs()), "{direct} vs {stable}");
    }

    #[test]
    fn infinite_omega_returns_anchor() {
        let (b, a) = scalar();
        let spec = SubproblemSpec::new(&b, 1.0, 1.0, &a, f64::INFINITY);
        let sol = solve_prox_subproblem(&spec).unwrap();
        assert_eq!(sol.p, a);
        assert_eq!(sol.y, array![0.0]);
        assert_eq!(sol.iters, 0);
    }

    #[test]
    fn scalar_solve_matches_soft_threshold() {
        let (b, a) = scalar();
        let omega = 1e-10;
        let sol = solve_prox_subproblem(&SubproblemSpec::new(&b, 1.0, 1.0, &a, omega)).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.gap <= omega);
        assert!((sol.p[0] - 1.0).abs() <= (2.0 * omega).sqrt());
    }

    #[test]
    fn orthogonal_b_matches_closed_form() {
        // B = rotation by 0.7 rad: prox_{λγ‖B·‖₁}(a) = Bᵀ soft(Ba, λγ)
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let b = array![[c, -s], [s, c]];
        let a = array![1.3, -0.4];
        let (gamma, lambda) = (0.5, 0.8);
        let exact = b.t().dot(&soft_threshold(&b.dot(&a), lambda * gamma));
        let mut spec = SubproblemSpec::new(&b, gamma, lambda, &a, 1e-14);
        spec.record_history = true;
        let sol = solve_prox_subproblem(&spec).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(dist(&sol.p, &exact) <= (2.0 * sol.gap * lambda).sqrt() + 1e-12);
        assert!(sol.gap_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn weak_duality_along_iterates() {
        let inst = generate_instance(30, 20, 0.05, 12).unwrap();
        let anchor = Vector::from_iter((0..20).map(|i| (i as f64).sin()));
        let mut spec = inst.reg.spec(0.01, &anchor, 0.0);
        for budget in [1, 2, 5, 10, 50] {
            spec.inner_budget = budget;
            let sol = solve_prox_subproblem(&spec).unwrap();
            let gap = duality_gap(&spec, &sol.p, &sol.y).unwrap();
            assert!(gap >= -1e-12);
            let direct = primal_objective(&spec, &sol.p) - dual_objective(&spec, &sol.y);
            assert!(direct >= -1e-12 * (1.0 + primal_objective(&spec, &sol.p).abs()));
        }
    }

    #[test]
    fn unconverged_status_carries_gap() {
        let inst = generate_instance(40, 30, 1.0, 3).unwrap();
        let anchor = Vector::from_elem(30, 1.0);
        let mut spec = inst.reg.spec(0.5, &anchor, 0.0);
        spec.inner_budget = 3;
        let sol = solve_prox_subproblem(&spec).unwrap();
        assert_eq!(sol.status, SolveStatus::Unconverged);
        assert_eq!(sol.iters, 3);
        assert!(sol.gap > 0.0 && sol.gap.is_finite());
    }

    #[test]
    fn rejected_when_acceptance_never_holds() {
        let (b, a) = scalar();
        let mut spec = SubproblemSpec::new(&b, 1.0, 1.0, &a, 1e-3);
        spec.inner_budget = 20;
        let sol = solve_prox_subproblem_accepting(&spec, &mut |_| false).unwrap();
        assert_eq!(sol.status, SolveStatus::Rejected);
    }

    #[test]
    fn solver_is_deterministic() {
        let inst = generate_instance(25, 15, 0.1, 4).unwrap();
        let anchor = Vector::from_iter((0..15).map(|i| i as f64 * 0.1 - 0.7));
        let spec = inst.reg.spec(0.02, &anchor, 1e-10);
        let a = solve_prox_subproblem(&spec).unwrap();
        let b = solve_prox_subproblem(&spec).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.y, b.y);
        assert_eq!(a.gap.to_bits(), b.gap.to_bits());
    }

    #[test]
    fn reference_prox_is_optimal_against_perturbations() {
        let inst = generate_instance(12, 10, 0.2, 6).unwrap();
        let x = Vector::from_iter((0..10).map(|i| (i as f64 * 0.9).cos()));
        let lambda = 0.05;
        let p = inst.reg.prox(lambda, &x).unwrap();
        let spec = inst.reg.spec(lambda, &x, 0.0);
        let base = primal_objective(&spec, &p);
        for i in 0..10 {
            let mut q = p.clone();
            q[i] += 1e-3;
            assert!(primal_objective(&spec, &q) >= base - 1e-12);
        }
        assert!(norm(&p).is_finite());
    }
}
