//! Small dense-vector helpers on top of `ndarray`.

use ndarray::{Array1, Array2};

pub type Vector = Array1<f64>;
pub type Matrix = Array2<f64>;

pub fn norm(v: &Vector) -> f64 {
    v.dot(v).sqrt()
}

pub fn norm_sq(v: &Vector) -> f64 {
    v.dot(v)
}

pub fn norm1(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest eigenvalue of `BᵀB` (i.e. `‖B‖₂²`) by power iteration from the
/// normalised all-ones vector.
pub fn spectral_norm_sq(b: &Matrix, max_steps: usize, rel_tol: f64) -> f64 {
    let n = b.ncols();
    if n == 0 || b.nrows() == 0 {
        return 0.0;
    }
    let mut v = Vector::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..max_steps {
        let bv = b.dot(&v);
        let w = b.t().dot(&bv);
        // Rayleigh quotient vᵀBᵀBv with ‖v‖ = 1
        let next = norm_sq(&bv);
        let wn = norm(&w);
        if wn == 0.0 {
            return next;
        }
        v = w / wn;
        let converged = (next - estimate).abs() <= rel_tol * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}
