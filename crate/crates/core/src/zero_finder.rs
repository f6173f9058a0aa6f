//! Generic inexact scheme for finding zeros of a continuous mapping `G`.
//!
//! Each iteration receives an inexact evaluation `g ≈ G(x)` with
//! `‖g − G(x)‖ ≤ ε`. If `‖g‖ ≤ r + ε` the iteration is *null*: the iterate is
//! frozen and both radii shrink (`r ← μr`, `ε ← θε`). Otherwise the iterate
//! moves along `d = −proj(0, B(g, ε))` with a caller-chosen stepsize.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, norm, Vector};

/// Radii `(ε, r)` together with their reduction factors `(μ, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSchedule {
    pub eps: f64,
    pub r: f64,
    pub mu: f64,
    pub theta: f64,
}

impl RadiusSchedule {
    pub fn new(eps: f64, r: f64, mu: f64, theta: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config(format!("eps must be positive, got {eps}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::config(format!("r must be positive, got {r}")));
        }
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::config(format!("mu must lie in (0,1), got {mu}")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::config(format!("theta must lie in (0,1), got {theta}")));
        }
        Ok(Self { eps, r, mu, theta })
    }

    /// `ε ≤ r` is preserved by every update whenever it holds initially and
    /// `θ ≤ μ`.
    pub fn keeps_eps_below_r(&self) -> bool {
        self.eps <= self.r && self.theta <= self.mu
    }

    pub fn shrink(&mut self) {
        self.r *= self.mu;
        self.eps *= self.theta;
    }
}

/// Null test `‖g‖ ≤ r + ε`. The boundary counts as null.
pub fn is_null(g: &Vector, r: f64, eps: f64) -> bool {
    norm(g) <= r + eps
}

/// `d = −proj(0, B(g, ε)) = −((‖g‖ − ε)/‖g‖)·g`. Requires `‖g‖ > ε`.
pub fn direction(g: &Vector, eps: f64) -> Result<Vector> {
    let gn = norm(g);
    if !(gn > eps) {
        return Err(Error::Contract(format!(
            "direction needs ‖g‖ > eps, got ‖g‖ = {gn}, eps = {eps}"
        )));
    }
    Ok(g * (-(gn - eps) / gn))
}

/// Iterate and radii of the scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Vector,
    pub radii: RadiusSchedule,
    /// Index of the next iteration (starts at 1).
    pub k: usize,
    pub last_null: bool,
}

impl SolverState {
    pub fn new(x: Vector, radii: RadiusSchedule) -> Self {
        Self { x, radii, k: 1, last_null: false }
    }
}

/// Rule producing the stepsize `t_k > 0` of a non-null iteration.
pub trait StepsizeRule {
    fn stepsize(&mut self, k: usize, g: &Vector, d: &Vector) -> f64;
}

/// Constant stepsize.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStep(pub f64);

impl StepsizeRule for ConstantStep {
    fn stepsize(&mut self, _k: usize, _g: &Vector, _d: &Vector) -> f64 {
        self.0
    }
}

impl<F: FnMut(usize, &Vector, &Vector) -> f64> StepsizeRule for F {
    fn stepsize(&mut self, k: usize, g: &Vector, d: &Vector) -> f64 {
        self(k, g, d)
    }
}

/// One row of a run log.
///
/// Vector fields are only populated when the driver is asked to keep them;
/// long benchmark runs keep scalars only.
#[derive(Debug, Clone, Default)]
pub struct IterationRecord {
    pub k: usize,
    pub x: Option<Vector>,
    pub g: Option<Vector>,
    pub d: Option<Vector>,
    /// Inexact prox point `p^k` (proximal drivers only).
    pub p: Option<Vector>,
    pub gnorm: f64,
    pub dnorm: f64,
    pub t: f64,
    pub eps: f64,
    pub r: f64,
    pub is_null: bool,
    /// Objective value at `x^k`, NaN when not tracked.
    pub fval: f64,
    /// Tolerance handed to the subproblem solver.
    pub omega: f64,
    /// Certified duality gap reported by the subproblem solver.
    pub gap: f64,
    pub subsolver_iters: usize,
    /// Seconds since the start of the run, taken at the end of the iteration.
    pub time_s: f64,
    /// The prox oracle was cross-checked and missed its accuracy contract.
    pub contract_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `ε` and `r` both fell below the radius tolerance.
    RadiiBelowTolerance,
    /// `‖g^k‖` fell below the residual tolerance.
    ResidualTolerance,
    /// The objective dropped strictly below the requested target.
    TargetReached,
    MaxIterations,
    TimeLimit,
    /// The subproblem solver ran out of inner iterations.
    SubsolverFailure,
    /// iFB could not satisfy its strict-decrease test within the inner cap.
    Stalled,
    NonFinite,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::RadiiBelowTolerance => "radii",
            StopReason::ResidualTolerance => "gnorm",
            StopReason::TargetReached => "target",
            StopReason::MaxIterations => "budget",
            StopReason::TimeLimit => "time",
            StopReason::SubsolverFailure => "subsolver",
            StopReason::Stalled => "stalled",
            StopReason::NonFinite => "nonfinite",
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, StopReason::SubsolverFailure | StopReason::NonFinite)
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outer stopping rules; whichever fires first wins.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub max_iter: usize,
    pub time_limit: Option<Duration>,
    /// Stop once `‖g^k‖ ≤ tol_residual`.
    pub tol_residual: Option<f64>,
    /// Stop once both radii are `≤ tol_radius`.
    pub tol_radius: Option<f64>,
    /// Stop once the objective is strictly below this value.
    pub target_value: Option<f64>,
}

impl Budget {
    pub fn iterations(max_iter: usize) -> Self {
        Self { max_iter, time_limit: None, tol_residual: None, tol_radius: None, target_value: None }
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn with_residual_tol(mut self, tol: f64) -> Self {
        self.tol_residual = Some(tol);
        self
    }

    pub fn with_radius_tol(mut self, tol: f64) -> Self {
        self.tol_radius = Some(tol);
        self
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target_value = Some(target);
        self
    }

    pub(crate) fn deadline(&self, start: Instant) -> Option<Instant> {
        self.time_limit.map(|t| start + t)
    }

    /// Checks taken before an iteration starts.
    pub(crate) fn pre_check(&self, completed: usize, start: Instant, radii: Option<&RadiusSchedule>) -> Option<StopReason> {
        if let (Some(tol), Some(rs)) = (self.tol_radius, radii) {
            if rs.eps <= tol && rs.r <= tol {
                return Some(StopReason::RadiiBelowTolerance);
            }
        }
        if completed >= self.max_iter {
            return Some(StopReason::MaxIterations);
        }
        if let Some(limit) = self.time_limit {
            if start.elapsed() >= limit {
                return Some(StopReason::TimeLimit);
            }
        }
        None
    }

    pub(crate) fn target_hit(&self, fval: f64) -> bool {
        self.target_value.is_some_and(|t| fval < t)
    }

    pub(crate) fn residual_hit(&self, gnorm: f64) -> bool {
        self.tol_residual.is_some_and(|t| gnorm <= t)
    }
}

/// Full log of a run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Last iterate.
    pub x: Vector,
    /// Initial radii, `None` for drivers without radii (iFB).
    pub initial_radii: Option<RadiusSchedule>,
    pub final_radii: Option<RadiusSchedule>,
    /// Number of completed iterations.
    pub iterations: usize,
    pub null_count: usize,
    pub contract_violations: usize,
    pub elapsed: Duration,
}

impl Trace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Mean number of inner subsolver iterations per outer iteration.
    pub fn mean_subsolver_iters(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.subsolver_iters as f64).sum::<f64>() / self.records.len() as f64
    }

    pub fn non_null_iterates(&self) -> Vec<Vector> {
        non_null_subsequence(&self.records)
    }
}

/// One step of the scheme: classify, update radii, move.
///
/// The record carries `x^k`, `g^k`, `d^k` and `t_k`; the returned state holds
/// `x^{k+1}` and the updated radii.
pub fn framework_step(
    state: SolverState,
    g: Vector,
    stepsize: &mut dyn StepsizeRule,
) -> Result<(SolverState, IterationRecord)> {
    let k = state.k;
    if !all_finite(&g) {
        return Err(Error::NonFinite { k });
    }
    let SolverState { mut x, mut radii, .. } = state;
    let (eps, r) = (radii.eps, radii.r);
    let gnorm = norm(&g);
    let null = gnorm <= r + eps;
    let x_k = x.clone();
    let (d, t) = if null {
        radii.shrink();
        (Vector::zeros(g.len()), 0.0)
    } else {
        let d = direction(&g, eps)?;
        let t = stepsize.stepsize(k, &g, &d);
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Contract(format!("stepsize must be positive and finite, got {t}")));
        }
        x.scaled_add(t, &d);
        (d, t)
    };
    let record = IterationRecord {
        k,
        dnorm: norm(&d),
        x: Some(x_k),
        g: Some(g),
        d: Some(d),
        gnorm,
        t,
        eps,
        r,
        is_null: null,
        fval: f64::NAN,
        omega: f64::NAN,
        gap: f64::NAN,
        ..Default::default()
    };
    Ok((SolverState { x, radii, k: k + 1, last_null: null }, record))
}

/// Iterates `x^{j}` at non-null indices `j₁ < j₂ < …`, collapsing repeats so
/// consecutive entries are distinct.
///
/// Records without a stored iterate are skipped.
pub fn non_null_subsequence(records: &[IterationRecord]) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    for rec in records.iter().filter(|r| !r.is_null) {
        if let Some(x) = &rec.x {
            if out.last() != Some(x) {
                out.push(x.clone());
            }
        }
    }
    out
}

/// Runs the scheme for a caller-supplied inexact oracle.
///
/// `oracle(x, ε)` must return some `g` with `‖g − G(x)‖ ≤ ε`.
pub fn run_framework(
    x1: Vector,
    radii: RadiusSchedule,
    mut oracle: impl FnMut(&Vector, f64) -> Vector,
    stepsize: &mut dyn StepsizeRule,
    budget: Budget,
) -> Result<Trace> {
    let start = Instant::now();
    let initial = radii;
    let mut state = SolverState::new(x1, radii);
    let mut records = Vec::new();
    let mut nulls = 0;
    let stop = loop {
        if let Some(reason) = budget.pre_check(records.len(), start, Some(&state.radii)) {
            break reason;
        }
        let g = oracle(&state.x, state.radii.eps);
        if !all_finite(&g) {
            break StopReason::NonFinite;
        }
        let (next, mut rec) = framework_step(state, g, stepsize)?;
        nulls += rec.is_null as usize;
        rec.time_s = start.elapsed().as_secs_f64();
        let gnorm = rec.gnorm;
        records.push(rec);
        state = next;
        if budget.residual_hit(gnorm) {
            break StopReason::ResidualTolerance;
        }
    };
    Ok(Trace {
        iterations: records.len(),
        records,
        stop_reason: stop,
        x: state.x,
        initial_radii: Some(initial),
        final_radii: Some(state.radii),
        null_count: nulls,
        contract_violations: 0,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn null_test_examples() {
        assert!(is_null(&array![0.0, 0.0], 1e-3, 0.0));
        assert!(!is_null(&array![3.0, 4.0], 1.0, 1.0));
        assert!(is_null(&array![0.5, 0.0], 0.3, 0.3));
        // boundary is null
        assert!(is_null(&array![3.0, 4.0], 2.5, 2.5));
    }

    #[test]
    fn direction_examples() {
        let d = direction(&array![3.0, 4.0], 1.0).unwrap();
        assert!((d[0] + 2.4).abs() < 1e-15 && (d[1] + 3.2).abs() < 1e-15);
        assert!((norm(&d) - 4.0).abs() < 1e-14);

        let g = array![1.5, -0.25, 7.0];
        assert_eq!(direction(&g, 0.0).unwrap(), -&g);

        assert_eq!(direction(&array![2.0, 0.0], 1.0).unwrap(), array![-1.0, 0.0]);
    }

    #[test]
    fn direction_rejects_small_g() {
        assert!(matches!(direction(&array![0.5, 0.0], 1.0), Err(Error::Contract(_))));
        assert!(direction(&array![0.0], 0.0).is_err());
    }

    #[test]
    fn radius_schedule_validation() {
        assert!(RadiusSchedule::new(0.0, 1.0, 0.5, 0.5).is_err());
        assert!(RadiusSchedule::new(1.0, -1.0, 0.5, 0.5).is_err());
        assert!(RadiusSchedule::new(1.0, 1.0, 1.0, 0.5).is_err());
        assert!(RadiusSchedule::new(1.0, 1.0, 0.5, 0.0).is_err());
        assert!(RadiusSchedule::new(1.0, 1.0, 0.5, 0.5).is_ok());
    }

    #[test]
    fn null_branch_shrinks_radii_and_freezes_x() {
        let radii = RadiusSchedule::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let state = SolverState::new(array![1.0, 2.0], radii);
        let (next, rec) = framework_step(state, array![0.3, 0.4], &mut ConstantStep(1.0)).unwrap();
        assert!(rec.is_null);
        assert_eq!(next.radii.r, 0.5);
        assert_eq!(next.radii.eps, 0.5);
        assert_eq!(next.x, array![1.0, 2.0]);
        assert_eq!(rec.d.unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn non_null_branch_moves() {
        let radii = RadiusSchedule::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let state = SolverState::new(array![0.0, 0.0], radii);
        let (next, rec) = framework_step(state, array![3.0, 4.0], &mut ConstantStep(0.5)).unwrap();
        assert!(!rec.is_null);
        assert_eq!(next.radii, radii);
        assert!((next.x[0] + 1.2).abs() < 1e-15 && (next.x[1] + 1.6).abs() < 1e-15);
        assert_eq!(next.k, 2);
    }

    #[test]
    fn zero_g_is_always_null() {
        for (e, r) in [(1e-300, 1e-300), (1.0, 5.0), (3.0, 0.1)] {
            let radii = RadiusSchedule::new(e, r, 0.9, 0.1).unwrap();
            let (_, rec) = framework_step(SolverState::new(array![4.0], radii), array![0.0], &mut ConstantStep(1.0)).unwrap();
            assert!(rec.is_null);
        }
    }

    #[test]
    fn non_finite_oracle_output_aborts() {
        let radii = RadiusSchedule::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let err = framework_step(SolverState::new(array![0.0], radii), array![f64::NAN], &mut ConstantStep(1.0));
        assert!(matches!(err, Err(Error::NonFinite { k: 1 })));
    }

    fn rec(x: f64, null: bool) -> IterationRecord {
        IterationRecord { x: Some(array![x]), is_null: null, ..Default::default() }
    }

    #[test]
    fn non_null_subsequence_examples() {
        let all_null = vec![rec(1.0, true), rec(1.0, true)];
        assert!(non_null_subsequence(&all_null).is_empty());

        // flags [T,F,T,F] at iterates [a,b,b,c] -> [b, c]
        let mixed = vec![rec(0.0, true), rec(1.0, false), rec(1.0, true), rec(2.0, false)];
        assert_eq!(non_null_subsequence(&mixed), vec![array![1.0], array![2.0]]);

        let none_null = vec![rec(0.0, false), rec(1.0, false), rec(2.0, false)];
        assert_eq!(non_null_subsequence(&none_null).len(), 3);
    }

    #[test]
    fn run_framework_finds_zero_of_linear_map() {
        // G(x) = x - 3, exact oracle perturbed inside the ε-ball
        let radii = RadiusSchedule::new(0.5, 1.0, 0.5, 0.5).unwrap();
        let trace = run_framework(
            array![10.0],
            radii,
            |x, eps| x.mapv(|v| v - 3.0 + 0.5 * eps),
            &mut ConstantStep(0.5),
            Budget::iterations(400).with_radius_tol(1e-10),
        )
        .unwrap();
        assert_eq!(trace.stop_reason, StopReason::RadiiBelowTolerance);
        assert!((trace.x[0] - 3.0).abs() < 1e-8, "{}", trace.x[0]);
    }
}
