//! Forward-backward envelope, the surrogate merit function and empirical
//! rate fitting.
//!
//! The envelope routines call `g.prox`, which for subsolver-backed
//! regularisers is a high-accuracy reference solve.

use crate::error::{Error, Result};
use crate::ipgm::forward_point;
use crate::linalg::{norm_sq, Vector};
use crate::weakly_convex::{check_prox_parameter, CompositeProblem, SmoothPart, WeaklyConvexPart};

/// RMS log-residual above which a fit is rejected.
pub const DEFAULT_RATE_THRESHOLD: f64 = 0.2;
/// Minimum number of positive distances for a fit.
pub const MIN_RATE_SAMPLES: usize = 10;

/// KL desingularizer `ψ(t) = M·t^{1−q}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlProfile {
    pub m: f64,
    pub q: f64,
}

/// Convergence class induced by a KL exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateClass {
    Linear,
    /// `‖x^k − x̄‖ = O(k^{−exponent})`.
    Power { exponent: f64 },
}

impl KlProfile {
    pub fn new(m: f64, q: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::config(format!("KL constant must be positive, got {m}")));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::config(format!("KL exponent must lie in (0,1), got {q}")));
        }
        Ok(Self { m, q })
    }

    pub fn rate_class(&self) -> RateClass {
        if self.q <= 0.5 {
            RateClass::Linear
        } else {
            RateClass::Power { exponent: (1.0 - self.q) / (2.0 * self.q - 1.0) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    Linear { factor: f64 },
    Power { exponent: f64 },
    Inconclusive,
}

/// Outcome of [`estimate_rate`]; `residual` is the RMS error in log space of
/// the chosen model (of the better one when inconclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub kind: RateKind,
    pub residual: f64,
}

/// Least-squares line `y ≈ a + b·t`; returns `(b, rms)`.
fn fit_line(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (&ti, &yi) in t.iter().zip(y) {
        stt += (ti - tm) * (ti - tm);
        sty += (ti - tm) * (yi - ym);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let sse: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let e = yi - (ym + slope * (ti - tm));
            e * e
        })
        .sum();
    (slope, (sse / n).sqrt())
}

/// Fits `log d_k` against `k` (linear rate) and `log k` (power rate) with
/// the default threshold.
pub fn estimate_rate(distances: &[f64]) -> RateFit {
    estimate_rate_with_threshold(distances, DEFAULT_RATE_THRESHOLD)
}

/// As [`estimate_rate`] with a custom residual threshold. Entries that are
/// not positive and finite are dropped; indices stay those of the input
/// (starting at 1).
pub fn estimate_rate_with_threshold(distances: &[f64], threshold: f64) -> RateFit {
    let (k, logd): (Vec<f64>, Vec<f64>) = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0 && d.is_finite())
        .map(|(i, &d)| ((i + 1) as f64, d.ln()))
        .unzip();
    if k.len() < MIN_RATE_SAMPLES {
        return RateFit { kind: RateKind::Inconclusive, residual: f64::INFINITY };
    }
    let logk: Vec<f64> = k.iter().map(|v| v.ln()).collect();
    let (lin_slope, lin_res) = fit_line(&k, &logd);
    let (pow_slope, pow_res) = fit_line(&logk, &logd);

    let lin = (lin_slope < -1e-12).then_some((RateKind::Linear { factor: lin_slope.exp() }, lin_res));
    let pow = (pow_slope < -1e-12).then_some((RateKind::Power { exponent: -pow_slope }, pow_res));
    let best = match (lin, pow) {
        (Some(a), Some(b)) => Some(if a.1 <= b.1 { a } else { b }),
        (a, b) => a.or(b),
    };
    match best {
        Some((kind, res)) if res <= threshold => RateFit { kind, residual: res },
        Some((_, res)) => RateFit { kind: RateKind::Inconclusive, residual: res },
        None => RateFit { kind: RateKind::Inconclusive, residual: lin_res.min(pow_res) },
    }
}

/// Distances `‖z − x̄‖` of a sequence to a reference point.
pub fn distances_to(points: &[Vector], reference: &Vector) -> Vec<f64> {
    points.iter().map(|z| norm_sq(&(z - reference)).sqrt()).collect()
}

/// `T_λ(x) = Prox_{λg}(x − λ∇f(x))`.
pub fn prox_gradient_point<F, G>(problem: &CompositeProblem<'_, F, G>, lambda: f64, x: &Vector) -> Result<Vector>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
{
    check_prox_parameter(lambda, problem.g.modulus())?;
    problem.g.prox(lambda, &forward_point(problem.f, lambda, x))
}

/// `G_λ(x) = (x − T_λ(x))/λ`.
pub fn gradient_mapping<F, G>(problem: &CompositeProblem<'_, F, G>, lambda: f64, x: &Vector) -> Result<Vector>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
{
    Ok((x - &prox_gradient_point(problem, lambda, x)?) / lambda)
}

/// `φ_λ(x) = f(x) − (λ/2)‖∇f(x)‖² + e_λg(x − λ∇f(x))`.
pub fn fbe_value<F, G>(problem: &CompositeProblem<'_, F, G>, lambda: f64, x: &Vector) -> Result<f64>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
{
    check_prox_parameter(lambda, problem.g.modulus())?;
    let grad = problem.f.gradient(x);
    let fwd = x - &(&grad * lambda);
    let p = problem.g.prox(lambda, &fwd)?;
    let envelope = problem.g.value(&p) + norm_sq(&(&p - &fwd)) / (2.0 * lambda);
    Ok(problem.f.value(x) - 0.5 * lambda * norm_sq(&grad) + envelope)
}

/// `∇φ_λ(x) = (x − T_λ(x))/λ − ∇²f(x)(x − T_λ(x))`.
pub fn fbe_gradient<F, G>(problem: &CompositeProblem<'_, F, G>, lambda: f64, x: &Vector) -> Result<Vector>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
{
    let step = x - &prox_gradient_point(problem, lambda, x)?;
    let curvature = problem.f.hessian_apply(x, &step)?;
    Ok(&step / lambda - &curvature)
}

/// `F_λ(x, ε) = φ_λ(x) + 𝒞ε²`.
pub fn surrogate_value<F, G>(problem: &CompositeProblem<'_, F, G>, lambda: f64, cscript: f64, x: &Vector, eps: f64) -> Result<f64>
where
    F: SmoothPart + ?Sized,
    G: WeaklyConvexPart + ?Sized,
{
    Ok(fbe_value(problem, lambda, x)? + cscript * eps * eps)
}
