//! Fixtures shared by the benchmarks.

use iprox::ipgm::forward_point;
use iprox::problems::{generate_instance, ImageRestorationInstance};
use iprox::Vector;

/// Seeded instance, its stepsize `λ = 1/(2L)` and a nonzero iterate.
pub struct Fixture {
    pub inst: ImageRestorationInstance,
    pub lambda: f64,
    pub x: Vector,
}

impl Fixture {
    pub fn new(m: usize, n: usize, gamma: f64) -> Self {
        let inst = generate_instance(m, n, gamma, 42).expect("valid shape");
        let lambda = 1.0 / (2.0 * inst.loss.lipschitz_l());
        let x = Vector::from_iter((0..n).map(|i| ((i as f64) * 0.37).sin()));
        Self { inst, lambda, x }
    }

    pub fn anchor(&self) -> Vector {
        forward_point(&self.inst.loss, self.lambda, &self.x)
    }
}
