//! Test problems.
//!
//! The main instance is the nonconvex image-restoration model
//! `φ(x) = Σ log(1 + (Ax − b)_i²) + γ‖Bx‖₁` with Gaussian `A`, `b`, `B`.
//! Instances are generated from ChaCha20 with one stream per matrix
//! (`A` → 0, `b` → 1, `B` → 2) and Box–Muller normals, so a seed pins the
//! instance bit-for-bit.

use std::path::Path;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm_sq, Matrix, Vector};
use crate::subsolver::AnalysisL1;
use crate::weakly_convex::SmoothPart;

/// The sixteen `(m, n, γ)` test configurations, in table order.
pub const TABLE1: [(usize, usize, f64); 16] = [
    (200, 200, 1e-3),
    (400, 400, 1e-3),
    (800, 800, 1e-3),
    (1600, 1600, 1e-3),
    (200, 800, 1e-3),
    (400, 1600, 1e-3),
    (800, 200, 1e-3),
    (1600, 400, 1e-3),
    (200, 200, 1e-6),
    (400, 400, 1e-6),
    (800, 800, 1e-6),
    (1600, 1600, 1e-6),
    (200, 800, 1e-6),
    (400, 1600, 1e-6),
    (800, 200, 1e-6),
    (1600, 400, 1e-6),
];

/// Configuration `(m, n, γ)` of test number `tn` (1-based).
pub fn table1(tn: usize) -> Option<(usize, usize, f64)> {
    tn.checked_sub(1).and_then(|i| TABLE1.get(i).copied())
}

/// One standard normal draw by Box–Muller (cosine branch); consumes exactly
/// two `u64`s.
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 ∈ (0, 1], u2 ∈ [0, 1)
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * SCALE;
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_stream(seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| standard_normal(&mut rng)).collect()
}

/// `f(x) = Σ log(1 + (Ax − b)_i²)`.
#[derive(Debug, Clone)]
pub struct LogResidualLoss {
    a: Matrix,
    b: Vector,
    lipschitz: f64,
}

impl LogResidualLoss {
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: b.len() });
        }
        let lipschitz = lipschitz_bound(&a);
        Ok(Self { a, b, lipschitz })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.a.ncols() {
            return Err(Error::DimensionMismatch { expected: self.a.ncols(), found: x.len() });
        }
        Ok(())
    }

    fn residual(&self, x: &Vector) -> Vector {
        self.a.dot(x) - &self.b
    }

    pub fn f_value(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(self.residual(x).iter().map(|w| w.mul_add(*w, 1.0).ln()).sum())
    }

    /// `2Aᵀu` with `u_i = w_i/(1 + w_i²)`, `w = Ax − b`.
    pub fn f_gradient(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        let u = self.residual(x).mapv(|w| w / w.mul_add(w, 1.0));
        Ok(self.a.t().dot(&u) * 2.0)
    }

    /// `2Aᵀ D A v` with `D = diag((1 − w_i²)/(1 + w_i²)²)`.
    pub fn f_hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.check(x)?;
        self.check(v)?;
        let w = self.residual(x);
        let av = self.a.dot(v);
        let scaled = ndarray::Zip::from(&w).and(&av).map_collect(|&w, &av| {
            let s = w.mul_add(w, 1.0);
            (1.0 - w * w) / (s * s) * av
        });
        Ok(self.a.t().dot(&scaled) * 2.0)
    }

    /// `L = 2‖A‖₁‖A‖∞`.
    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz
    }
}

/// `2·(max column abs-sum)·(max row abs-sum)`.
pub fn lipschitz_bound(a: &Matrix) -> f64 {
    let col = a.columns().into_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let row = a.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    2.0 * col * row
}

impl SmoothPart for LogResidualLoss {
    fn value(&self, x: &Vector) -> f64 {
        self.f_value(x).expect("dimension mismatch")
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.f_gradient(x).expect("dimension mismatch")
    }
    fn hessian_apply(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.f_hessian_apply(x, v)
    }
    fn descent_constant(&self) -> f64 {
        self.lipschitz
    }
}

/// `Σ log(1 + (Ax − b)_i²) + γ‖Bx‖₁` together with its generating seed.
#[derive(Debug, Clone)]
pub struct ImageRestorationInstance {
    pub loss: LogResidualLoss,
    pub reg: AnalysisL1,
    pub seed: u64,
}

impl ImageRestorationInstance {
    pub fn m(&self) -> usize {
        self.reg.b().nrows()
    }

    pub fn n(&self) -> usize {
        self.loss.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.reg.gamma()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        self.loss.value(x) + crate::weakly_convex::WeaklyConvexPart::value(&self.reg, x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, n) = (self.m(), self.n());
        let mut out = Vec::with_capacity(40 + 8 * (n * n + n + m * n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(m as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&self.gamma().to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.loss.a.iter().chain(self.loss.b.iter()).chain(self.reg.b().iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 8 + 4 * 8;
        if bytes.len() < header || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an instance container".into()));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let m = u64::from_le_bytes(word(0)) as usize;
        let n = u64::from_le_bytes(word(1)) as usize;
        let gamma = f64::from_le_bytes(word(2));
        let seed = u64::from_le_bytes(word(3));
        let count = n
            .checked_mul(n)
            .and_then(|nn| nn.checked_add(n))
            .and_then(|s| m.checked_mul(n).and_then(|mn| s.checked_add(mn)))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        if bytes.len() != header + 8 * count {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                8 * count,
                bytes.len() - header
            )));
        }
        let mut vals = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let a = Matrix::from_shape_vec((n, n), vals.by_ref().take(n * n).collect()).map_err(fmt_err)?;
        let b = Vector::from_iter(vals.by_ref().take(n));
        let bm = Matrix::from_shape_vec((m, n), vals.collect()).map_err(fmt_err)?;
        Ok(Self { loss: LogResidualLoss::new(a, b)?, reg: AnalysisL1::new(bm, gamma)?, seed })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MAGIC: &[u8; 8] = b"IPRXINS1";

fn fmt_err(e: ndarray::ShapeError) -> Error {
    Error::Format(e.to_string())
}

/// Seeded instance with `A ∈ ℝ^{n×n}`, `b ∈ ℝⁿ`, `B ∈ ℝ^{m×n}`, all entries
/// i.i.d. standard normal.
pub fn generate_instance(m: usize, n: usize, gamma: f64, seed: u64) -> Result<ImageRestorationInstance> {
    if m == 0 || n == 0 {
        return Err(Error::config("m and n must be at least 1"));
    }
    let a = Matrix::from_shape_vec((n, n), gaussian_stream(seed, 0, n * n)).map_err(fmt_err)?;
    let b = Vector::from(gaussian_stream(seed, 1, n));
    let bm = Matrix::from_shape_vec((m, n), gaussian_stream(seed, 2, m * n)).map_err(fmt_err)?;
    Ok(ImageRestorationInstance { loss: LogResidualLoss::new(a, b)?, reg: AnalysisL1::new(bm, gamma)?, seed })
}

/// `f(x) = ½(x − c)ᵀQ(x − c)` with symmetric `Q`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: Matrix,
    center: Vector,
    l: f64,
}

impl Quadratic {
    pub fn new(q: Matrix, center: Vector) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != center.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), found: q.nrows() });
        }
        let l = spectral_norm_sq(&q, 1000, 1e-14).sqrt();
        Ok(Self { q, center, l })
    }

    pub fn diagonal(diag: Vector, center: Vector) -> Self {
        let l = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self { q: Matrix::from_diag(&diag), center, l }
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }
}

impl SmoothPart for Quadratic {
    fn value(&self, x: &Vector) -> f64 {
        let d = x - &self.center;
        0.5 * d.dot(&self.q.dot(&d))
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.q.dot(&(x - &self.center))
    }
    fn hessian_apply(&self, _x: &Vector, v: &Vector) -> Result<Vector> {
        Ok(self.q.dot(v))
    }
    fn descent_constant(&self) -> f64 {
        self.l
    }
}

/// `f(x) = ⟨c, x⟩ + offset`.
#[derive(Debug, Clone)]
pub struct LinearFunction {
    pub c: Vector,
    pub offset: f64,
}

impl SmoothPart for LinearFunction {
    fn value(&self, x: &Vector) -> f64 {
        self.c.dot(x) + self.offset
    }
    fn gradient(&self, _x: &Vector) -> Vector {
        self.c.clone()
    }
    fn hessian_apply(&self, _x: &Vector, v: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(v.len()))
    }
    fn descent_constant(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use crate::weakly_convex::{central_difference, descent_condition_probe, WeaklyConvexPart};
    use ndarray::array;

    fn scalar_instance(a: f64, b: f64) -> LogResidualLoss {
        LogResidualLoss::new(array![[a]], array![b]).unwrap()
    }

    #[test]
    fn f_value_examples() {
        let loss = scalar_instance(1.0, 0.0);
        assert!((loss.f_value(&array![1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let inst = generate_instance(5, 5, 1e-3, 1).unwrap();
        // x solving Ax = b gives f = 0
        let a = inst.loss.a().clone();
        let x = array![0.3, -1.0, 2.0, 0.5, 0.0];
        let b = a.dot(&x);
        let exact = LogResidualLoss::new(a, b).unwrap();
        assert!(exact.f_value(&x).unwrap().abs() < 1e-25);
    }

    #[test]
    fn f_value_is_permutation_invariant() {
        let a = array![[1.0, 2.0], [3.0, -1.0]];
        let b = array![0.5, -0.25];
        let swapped = LogResidualLoss::new(array![[3.0, -1.0], [1.0, 2.0]], array![-0.25, 0.5]).unwrap();
        let loss = LogResidualLoss::new(a, b).unwrap();
        let x = array![0.7, -0.2];
        assert!((loss.f_value(&x).unwrap() - swapped.f_value(&x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let loss = scalar_instance(1.0, 0.0);
        assert!(matches!(loss.f_value(&array![1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(loss.f_gradient(&array![]).is_err());
        assert!(loss.f_hessian_apply(&array![1.0], &array![1.0, 1.0]).is_err());
    }

    #[test]
    fn f_gradient_examples() {
        let loss = scalar_instance(1.0, 0.0);
        assert!((loss.f_gradient(&array![1.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        let fd = central_difference(|x| loss.f_value(x), &array![1.0]).unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-8);
        assert_eq!(loss.f_gradient(&array![0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn f_hessian_examples() {
        let loss = scalar_instance(1.0, 0.0);
        assert_eq!(loss.f_hessian_apply(&array![1.0], &array![1.0]).unwrap()[0], 0.0);
        // w = 0 → D = I, H = 2AᵀA
        let a = array![[1.0, 2.0], [0.5, -1.0]];
        let x = array![0.2, 0.4];
        let loss = LogResidualLoss::new(a.clone(), a.dot(&x)).unwrap();
        let v = array![1.0, -3.0];
        let expected = a.t().dot(&a.dot(&v)) * 2.0;
        let got = loss.f_hessian_apply(&x, &v).unwrap();
        assert!(norm(&(got - expected)) < 1e-14);
    }

    #[test]
    fn hessian_is_symmetric_and_matches_gradient_differences() {
        let inst = generate_instance(8, 8, 1e-3, 9).unwrap();
        let x = Vector::from_iter((0..8).map(|i| (i as f64 * 0.37).sin()));
        let v = Vector::from_iter((0..8).map(|i| (i as f64 * 1.3).cos()));
        let w = Vector::from_iter((0..8).map(|i| 1.0 / (1.0 + i as f64)));
        let hv = inst.loss.f_hessian_apply(&x, &v).unwrap();
        let hw = inst.loss.f_hessian_apply(&x, &w).unwrap();
        assert!((w.dot(&hv) - v.dot(&hw)).abs() < 1e-10 * (1.0 + w.dot(&hv).abs()));

        // directional difference of the gradient
        let h = 1e-6;
        let fd = (inst.loss.f_gradient(&(&x + &(&v * h))).unwrap() - inst.loss.f_gradient(&(&x - &(&v * h))).unwrap())
            / (2.0 * h);
        assert!(norm(&(&fd - &hv)) <= 1e-4 * norm(&hv).max(1.0));
    }

    #[test]
    fn lipschitz_examples() {
        let eye = Matrix::eye(4);
        assert_eq!(lipschitz_bound(&eye), 2.0);
        assert_eq!(lipschitz_bound(&(&eye * 2.0)), 8.0);
        let a = array![[1.0, -2.0], [0.5, 3.0]];
        assert!((lipschitz_bound(&(&a * 3.0)) - 9.0 * lipschitz_bound(&a)).abs() < 1e-12);
    }

    #[test]
    fn instance_generation_is_deterministic() {
        let a = generate_instance(6, 4, 1e-3, 42).unwrap();
        let b = generate_instance(6, 4, 1e-3, 42).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = generate_instance(6, 4, 1e-3, 43).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn substreams_are_disjoint() {
        let inst = generate_instance(3, 3, 1e-3, 5).unwrap();
        let a0 = inst.loss.a()[[0, 0]];
        assert_ne!(a0, inst.loss.b()[0]);
        assert_ne!(a0, inst.reg.b()[[0, 0]]);
    }

    #[test]
    fn entries_look_standard_normal() {
        let inst = generate_instance(200, 200, 1e-3, 2024).unwrap();
        let entries = inst.loss.a();
        let count = entries.len() as f64;
        let mean = entries.sum() / count;
        let var = entries.mapv(|v| (v - mean) * (v - mean)).sum() / count;
        assert!(mean.abs() <= 4.0 / count.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn table1_configurations_are_constructible() {
        assert_eq!(table1(5), Some((200, 800, 1e-3)));
        assert_eq!(table1(16), Some((1600, 400, 1e-6)));
        assert_eq!(table1(0), None);
        assert_eq!(table1(17), None);
        let (m, n, gamma) = table1(5).unwrap();
        let inst = generate_instance(m, n, gamma, 0).unwrap();
        assert_eq!((inst.m(), inst.n()), (200, 800));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let inst = generate_instance(7, 5, 1e-6, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.bin");
        inst.write(&path).unwrap();
        let back = ImageRestorationInstance::read(&path).unwrap();
        assert_eq!(back.to_bytes(), inst.to_bytes());
        assert_eq!(back.seed, 77);
        assert_eq!(back.gamma(), 1e-6);
    }

    #[test]
    fn malformed_container_is_rejected() {
        let inst = generate_instance(2, 2, 1e-3, 1).unwrap();
        let bytes = inst.to_bytes();
        assert!(ImageRestorationInstance::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ImageRestorationInstance::from_bytes(&bad).is_err());
    }

    #[test]
    fn instance_properties() {
        let inst = generate_instance(30, 30, 1e-3, 3).unwrap();
        let l = inst.loss.lipschitz_l();
        let probe = |s: u64| Vector::from(gaussian_stream(s, 9, 30)) * 0.3;
        let pairs: Vec<_> = (0..20).map(|s| (probe(2 * s), probe(2 * s + 1))).collect();
        assert!(descent_condition_probe(&inst.loss, l, &pairs));
        for (x, _) in &pairs {
            assert!(inst.objective(x) >= 0.0);
            assert!(inst.reg.value(x) >= 0.0);
            let g = inst.loss.f_gradient(x).unwrap();
            let fd = central_difference(|y| inst.loss.f_value(y), x).unwrap();
            assert!(norm(&(&g - &fd)) <= 1e-5 * norm(&g).max(1.0));
        }
    }
}
