//! Function models for `φ = f + g`.
//!
//! `f` is a smooth part exposing value, gradient and (optionally) Hessian
//! products together with a descent constant `L`. `g` is `ϱ`-weakly convex,
//! i.e. `g + (ϱ/2)‖·‖²` is convex, and may be extended-real valued: points
//! outside `dom g` evaluate to `+∞`, which saturates through the sums used
//! here and compares as maximal.
//!
//! The subdifferential checks in this module quantify over finitely many
//! probe points. A `false` answer certifies non-membership; a `true` answer
//! is only evidence.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg::{norm, norm1, norm_sq, Vector};
use crate::problems::standard_normal;

pub trait SmoothPart {
    fn value(&self, x: &Vector) -> f64;

    fn gradient(&self, x: &Vector) -> Vector;

    /// `∇²f(x)·v`.
    fn hessian_apply(&self, _x: &Vector, _v: &Vector) -> Result<Vector> {
        Err(Error::Capability("hessian_apply"))
    }

    /// Constant `L` of the descent inequality
    /// `f(x) ≤ f(y) + ⟨∇f(y), x − y⟩ + (L/2)‖x − y‖²`.
    fn descent_constant(&self) -> f64;
}

pub trait WeaklyConvexPart {
    /// Value of `g`; `+∞` outside the domain.
    fn value(&self, x: &Vector) -> f64;

    /// Weak-convexity modulus `ϱ ≥ 0`.
    fn modulus(&self) -> f64;

    /// `Prox_{λg}(x)` for `λ ∈ (0, 1/ϱ)`, either in closed form or to high
    /// accuracy.
    fn prox(&self, _lambda: f64, _x: &Vector) -> Result<Vector> {
        Err(Error::Capability("prox"))
    }
}

impl<T: SmoothPart + ?Sized> SmoothPart for &T {
    fn value(&self, x: &Vector) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (**self).gradient(x)
    }
    fn hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        (**self).hessian_apply(x, v)
    }
    fn descent_constant(&self) -> f64 {
        (**self).descent_constant()
    }
}

impl<T: WeaklyConvexPart + ?Sized> WeaklyConvexPart for &T {
    fn value(&self, x: &Vector) -> f64 {
        (**self).value(x)
    }
    fn modulus(&self) -> f64 {
        (**self).modulus()
    }
    fn prox(&self, lambda: f64, x: &Vector) -> Result<Vector> {
        (**self).prox(lambda, x)
    }
}

/// `φ = f + g`, borrowing both parts.
#[derive(Debug)]
pub struct CompositeProblem<'a, F: ?Sized, G: ?Sized> {
    pub f: &'a F,
    pub g: &'a G,
}

impl<F: ?Sized, G: ?Sized> Clone for CompositeProblem<'_, F, G> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: ?Sized, G: ?Sized> Copy for CompositeProblem<'_, F, G> {}

impl<'a, F: SmoothPart + ?Sized, G: WeaklyConvexPart + ?Sized> CompositeProblem<'a, F, G> {
    pub fn new(f: &'a F, g: &'a G) -> Self {
        Self { f, g }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.f.value(x) + self.g.value(x)
    }
}

/// Query for the prox subproblem `min_y Φ_{λ,x}(y) = g(y) + ‖y − x‖²/(2λ)`.
#[derive(Debug, Clone)]
pub struct ProxQuery {
    pub lambda: f64,
    pub anchor: Vector,
    pub tolerance_omega: f64,
}

impl ProxQuery {
    pub fn new(lambda: f64, anchor: Vector, tolerance_omega: f64, modulus: f64) -> Result<Self> {
        check_prox_parameter(lambda, modulus)?;
        if !(tolerance_omega >= 0.0) {
            return Err(Error::config("omega must be nonnegative"));
        }
        Ok(Self { lambda, anchor, tolerance_omega })
    }
}

pub(crate) fn check_prox_parameter(lambda: f64, modulus: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    if !(lambda * modulus < 1.0) {
        return Err(Error::config(format!(
            "lambda·rho must be < 1, got lambda = {lambda}, rho = {modulus}"
        )));
    }
    Ok(())
}

/// `Φ_{λ,x}(y) = g(y) + ‖y − x‖²/(2λ)`, `+∞` outside `dom g`.
pub fn phi_value<G: WeaklyConvexPart + ?Sized>(g: &G, q: &ProxQuery, y: &Vector) -> f64 {
    let gy = g.value(y);
    if gy == f64::INFINITY {
        return f64::INFINITY;
    }
    gy + norm_sq(&(y - &q.anchor)) / (2.0 * q.lambda)
}

/// Componentwise `sign(x)·max(|x| − τ, 0)`, the prox of `τ‖·‖₁`.
pub fn soft_threshold(x: &Vector, tau: f64) -> Vector {
    debug_assert!(tau >= 0.0);
    x.mapv(|v| v.signum() * (v.abs() - tau).max(0.0))
}

/// `e_λg(x) = Φ_{λ,x}(Prox_{λg}(x))`.
pub fn moreau_envelope<G: WeaklyConvexPart + ?Sized>(g: &G, lambda: f64, x: &Vector) -> Result<f64> {
    check_prox_parameter(lambda, g.modulus())?;
    let p = g.prox(lambda, x)?;
    let q = ProxQuery { lambda, anchor: x.clone(), tolerance_omega: 0.0 };
    Ok(phi_value(g, &q, &p))
}

/// `∇e_λg(x) = (x − Prox_{λg}(x))/λ`.
pub fn moreau_gradient<G: WeaklyConvexPart + ?Sized>(g: &G, lambda: f64, x: &Vector) -> Result<Vector> {
    check_prox_parameter(lambda, g.modulus())?;
    let p = g.prox(lambda, x)?;
    Ok((x - &p) / lambda)
}

/// Probe-based test of `v ∈ ∂_{ε,ρ} g(x̄)`:
/// `⟨v, x − x̄⟩ ≤ g(x) − g(x̄) + (ρ/2)‖x − x̄‖² + ε` at every probe `x`.
pub fn weak_eps_subdiff_member<G: WeaklyConvexPart + ?Sized>(
    g: &G,
    rho: f64,
    eps: f64,
    xbar: &Vector,
    v: &Vector,
    probes: &[Vector],
) -> Result<bool> {
    let g_bar = g.value(xbar);
    if !g_bar.is_finite() {
        return Err(Error::Domain("x̄ is outside dom g".into()));
    }
    if probes.is_empty() {
        return Err(Error::config("probe set is empty"));
    }
    for x in probes {
        let gx = g.value(x);
        if gx == f64::INFINITY {
            continue;
        }
        let diff = x - xbar;
        let lhs = v.dot(&diff);
        let rhs = gx - g_bar + 0.5 * rho * norm_sq(&diff) + eps;
        let slack = 1e-12 * (1.0 + lhs.abs().max(rhs.abs()));
        if lhs > rhs + slack {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Deterministic probe set: `x̄ ± radius·e_i` for every axis plus `random`
/// points drawn uniformly from the ball of the given radius.
pub fn probe_points(xbar: &Vector, radius: f64, random: usize, seed: u64) -> Vec<Vector> {
    let n = xbar.len();
    let mut out = Vec::with_capacity(2 * n + random);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut x = xbar.clone();
            x[i] += s * radius;
            out.push(x);
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..random {
        let dir = Vector::from_iter((0..n).map(|_| standard_normal(&mut rng)));
        let dn = norm(&dir);
        let u: f64 = rng.random();
        let scale = if dn > 0.0 { radius * u.powf(1.0 / n.max(1) as f64) / dn } else { 0.0 };
        out.push(xbar + &(dir * scale));
    }
    out
}

/// Descent inequality `f(x) ≤ f(y) + ⟨∇f(y), x − y⟩ + (L/2)‖x − y‖²` on every
/// pair, with relative slack `1e-10`.
pub fn descent_condition_probe<F: SmoothPart + ?Sized>(f: &F, l: f64, pairs: &[(Vector, Vector)]) -> bool {
    pairs.iter().all(|(x, y)| {
        let fx = f.value(x);
        let fy = f.value(y);
        let diff = x - y;
        let rhs = fy + f.gradient(y).dot(&diff) + 0.5 * l * norm_sq(&diff);
        fx <= rhs + 1e-10 * (1.0 + fx.abs().max(fy.abs()))
    })
}

/// Central-difference step `h = max(1e-6, 1e-8‖x‖)`.
pub fn finite_difference_step(x: &Vector) -> f64 {
    (1e-8 * norm(x)).max(1e-6)
}

/// Central-difference gradient of a (fallible) scalar function.
pub fn central_difference(mut f: impl FnMut(&Vector) -> Result<f64>, x: &Vector) -> Result<Vector> {
    let h = finite_difference_step(x);
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Request handed to a [`ProxSubsolver`]: find `p` with
/// `Φ_{λ,anchor}(p) ≤ inf Φ_{λ,anchor} + omega`.
#[derive(Debug, Clone, Copy)]
pub struct ProxRequest<'a> {
    pub lambda: f64,
    pub anchor: &'a Vector,
    pub omega: f64,
    pub deadline: Option<Instant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Inner budget exhausted with the gap still above `omega`.
    Unconverged,
    /// Gap reached but the caller's acceptance test kept failing until the
    /// inner budget ran out.
    Rejected,
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct SubsolveOutcome {
    pub p: Vector,
    /// Certified upper bound on `Φ(p) − inf Φ`.
    pub gap: f64,
    pub iters: usize,
    pub status: SolveStatus,
}

/// Inexact solver for the prox subproblem.
pub trait ProxSubsolver {
    /// Iterates until the certified gap is `≤ omega` *and* `accept(p)` holds,
    /// or the solver's own budget runs out.
    fn solve_accepting(&self, req: &ProxRequest<'_>, accept: &mut dyn FnMut(&Vector) -> bool) -> SubsolveOutcome;

    fn solve(&self, req: &ProxRequest<'_>) -> SubsolveOutcome {
        self.solve_accepting(req, &mut |_| true)
    }
}

/// Subsolver backed by an exact proximal operator (gap 0).
#[derive(Debug, Clone, Copy)]
pub struct ExactProx<'a, G: ?Sized>(pub &'a G);

impl<G: WeaklyConvexPart + ?Sized> ProxSubsolver for ExactProx<'_, G> {
    fn solve_accepting(&self, req: &ProxRequest<'_>, accept: &mut dyn FnMut(&Vector) -> bool) -> SubsolveOutcome {
        match self.0.prox(req.lambda, req.anchor) {
            Ok(p) => {
                let status = if accept(&p) { SolveStatus::Converged } else { SolveStatus::Rejected };
                SubsolveOutcome { p, gap: 0.0, iters: 0, status }
            }
            Err(_) => SubsolveOutcome {
                p: req.anchor.clone(),
                gap: f64::INFINITY,
                iters: 0,
                status: SolveStatus::Unconverged,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form regularisers

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFunction;

impl WeaklyConvexPart for ZeroFunction {
    fn value(&self, _x: &Vector) -> f64 {
        0.0
    }
    fn modulus(&self) -> f64 {
        0.0
    }
    fn prox(&self, _lambda: f64, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFunction(pub f64);

impl WeaklyConvexPart for ConstantFunction {
    fn value(&self, _x: &Vector) -> f64 {
        self.0
    }
    fn modulus(&self) -> f64 {
        0.0
    }
    fn prox(&self, _lambda: f64, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }
}

/// `γ‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct L1Norm {
    pub gamma: f64,
}

impl WeaklyConvexPart for L1Norm {
    fn value(&self, x: &Vector) -> f64 {
        self.gamma * norm1(x)
    }
    fn modulus(&self) -> f64 {
        0.0
    }
    fn prox(&self, lambda: f64, x: &Vector) -> Result<Vector> {
        check_prox_parameter(lambda, 0.0)?;
        Ok(soft_threshold(x, lambda * self.gamma))
    }
}

/// `(a/2)‖x‖²`; weakly convex with modulus `max(0, −a)` when `a < 0`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledSquaredNorm {
    pub a: f64,
}

impl WeaklyConvexPart for ScaledSquaredNorm {
    fn value(&self, x: &Vector) -> f64 {
        0.5 * self.a * norm_sq(x)
    }
    fn modulus(&self) -> f64 {
        (-self.a).max(0.0)
    }
    fn prox(&self, lambda: f64, x: &Vector) -> Result<Vector> {
        check_prox_parameter(lambda, self.modulus())?;
        Ok(x / (1.0 + lambda * self.a))
    }
}

/// Indicator of the box `[lo, hi]ⁿ`.
#[derive(Debug, Clone, Copy)]
pub struct BoxIndicator {
    pub lo: f64,
    pub hi: f64,
}

impl WeaklyConvexPart for BoxIndicator {
    fn value(&self, x: &Vector) -> f64 {
        if x.iter().all(|v| *v >= self.lo && *v <= self.hi) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn modulus(&self) -> f64 {
        0.0
    }
    fn prox(&self, _lambda: f64, x: &Vector) -> Result<Vector> {
        Ok(x.mapv(|v| v.clamp(self.lo, self.hi)))
    }
}

/// Pointwise sum of two weakly convex parts (no prox).
#[derive(Debug, Clone, Copy)]
pub struct Sum<A, B>(pub A, pub B);

impl<A: WeaklyConvexPart, B: WeaklyConvexPart> WeaklyConvexPart for Sum<A, B> {
    fn value(&self, x: &Vector) -> f64 {
        self.0.value(x) + self.1.value(x)
    }
    fn modulus(&self) -> f64 {
        self.0.modulus() + self.1.modulus()
    }
}
