use iprox::diagnostics::{fbe_value, prox_gradient_point};
use iprox::ipgm::{compute_constants, run_ifb, run_ipgm, ErrorSchedule, IfbConfig, IpgmConfig};
use iprox::ippm::{run_ippm, GapOracle, IppmConfig};
use iprox::linalg::{dist, norm};
use iprox::problems::{generate_instance, Quadratic};
use iprox::subsolver::{dual_objective, duality_gap, primal_objective, primal_recovery};
use iprox::weakly_convex::{moreau_gradient, ExactProx, L1Norm, SmoothPart, WeaklyConvexPart};
use iprox::zero_finder::run_framework;
use iprox::{Budget, CompositeProblem, RadiusSchedule, StopReason, Vector};
use ndarray::array;
use proptest::prelude::*;

fn small_quadratic() -> Quadratic {
    Quadratic::diagonal(array![1.0, 4.0, 2.5, 0.5], array![1.0, -2.0, 0.3, 0.0])
}

#[test]
fn ipgm_matches_framework_on_gradient_mapping() {
    let f = small_quadratic();
    let g = L1Norm { gamma: 0.4 };
    let problem = CompositeProblem::new(&f, &g);
    let lambda = 0.1;
    let radii = RadiusSchedule::new(0.5, 0.5, 0.5, 0.5).unwrap();
    let x1 = array![3.0, 3.0, -3.0, 1.0];

    let mut cfg = IpgmConfig::new(lambda, x1.clone(), radii, ErrorSchedule::Proportional, Budget::iterations(80));
    cfg.store_vectors = true;
    let ipgm = run_ipgm(problem, &ExactProx(&g), &cfg).unwrap();

    let oracle = |x: &Vector, _eps: f64| (x - &prox_gradient_point(&problem, lambda, x).unwrap()) / lambda;
    let mut step = |_k: usize, g: &Vector, d: &Vector| lambda * norm(g) / norm(d);
    let framework = run_framework(x1, radii, oracle, &mut step, Budget::iterations(80)).unwrap();

    assert_eq!(ipgm.null_count, framework.null_count);
    for (a, b) in ipgm.records.iter().zip(&framework.records) {
        assert_eq!(a.is_null, b.is_null);
        assert!(dist(a.x.as_ref().unwrap(), b.x.as_ref().unwrap()) < 1e-12);
    }
    assert!(dist(&ipgm.x, &framework.x) < 1e-12);
}

#[test]
fn ipgm_on_instance_respects_gap_and_descent() {
    let inst = generate_instance(30, 40, 1e-2, 11).unwrap();
    let l = inst.loss.lipschitz_l();
    let lambda = 1.0 / (2.0 * l);
    let consts = compute_constants(lambda, l, 0.0).unwrap();
    let eps1 = (100.0 / consts.cscript).sqrt();
    let radii = RadiusSchedule::new(eps1, eps1, 0.5, 0.5).unwrap();
    let cfg = IpgmConfig::new(lambda, Vector::zeros(40), radii, ErrorSchedule::Proportional, Budget::iterations(300));
    let trace = run_ipgm(CompositeProblem::new(&inst.loss, &inst.reg), &inst.reg, &cfg).unwrap();
    assert_eq!(trace.stop_reason, StopReason::MaxIterations);
    for w in trace.records.windows(2) {
        assert!(w[0].gap <= w[0].omega);
        assert!(w[1].fval <= w[0].fval + 1e-12 * w[0].fval.abs());
    }
}

#[test]
fn ifb_decreases_objective_on_instance() {
    let inst = generate_instance(20, 20, 1e-3, 3).unwrap();
    let l = inst.loss.lipschitz_l();
    let lambda = 1.0 / (2.0 * l);
    let problem = CompositeProblem::new(&inst.loss, &inst.reg);
    let ifb = run_ifb(problem, &inst.reg, &IfbConfig::new(lambda, Vector::zeros(20), Budget::iterations(50))).unwrap();
    assert_eq!(ifb.iterations, 50);
    for w in ifb.records.windows(2) {
        assert!(w[1].fval < w[0].fval);
        assert!(w[0].gap <= w[0].omega);
    }
    let x = ifb.x.clone();
    assert!(fbe_value(&problem, lambda, &x).unwrap() <= problem.value(&x) + 1e-12);
}

#[test]
fn ippm_with_subsolver_oracle_meets_contract() {
    let inst = generate_instance(15, 10, 0.5, 8).unwrap();
    let g = &inst.reg;
    let lambda = 0.05;
    let radii = RadiusSchedule::new(1.0, 1.0, 0.5, 0.5).unwrap();
    let mut cfg = IppmConfig::new(lambda, Vector::from_elem(10, 2.0), radii, Budget::iterations(40));
    cfg.cross_check = true;
    cfg.store_vectors = true;
    let mut oracle = GapOracle { solver: g, modulus: 0.0 };
    let trace = run_ippm(g, &mut oracle, &cfg).unwrap();
    assert_eq!(trace.contract_violations, 0);
    for rec in &trace.records {
        let exact = moreau_gradient(g, lambda, rec.x.as_ref().unwrap()).unwrap();
        assert!(dist(rec.g.as_ref().unwrap(), &exact) <= rec.eps * (1.0 + 1e-6));
    }
    assert!(trace.last().unwrap().fval < g.value(&Vector::from_elem(10, 2.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn duality_gap_is_nonnegative(seed in 0u64..1000, scale in 0.0f64..1.0, lambda in 0.01f64..1.0) {
        let inst = generate_instance(12, 8, 0.3, seed).unwrap();
        let anchor = Vector::from_iter((0..8).map(|i| (i as f64 - 3.5) * scale));
        let spec = inst.reg.spec(lambda, &anchor, 0.0);
        let y = Vector::from_iter((0..12).map(|i| 0.3 * ((i as f64 + seed as f64).sin())));
        let p = primal_recovery(&spec, &y);
        let gap = duality_gap(&spec, &p, &y).unwrap();
        prop_assert!(gap >= -1e-12);
        let direct = primal_objective(&spec, &p) - dual_objective(&spec, &y);
        prop_assert!((gap - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn radii_follow_null_count(eps in 0.01f64..1.0, extra in 0.0f64..1.0, mu in 0.1f64..0.9, theta in 0.1f64..0.9, x0 in -5.0f64..5.0) {
        let radii = RadiusSchedule::new(eps, eps + extra, mu, theta).unwrap();
        // G(x) = x with the oracle error pushed to its limit
        let oracle = |x: &Vector, e: f64| x + &Vector::from_elem(x.len(), e / 2f64.sqrt());
        let mut step = |_k: usize, _g: &Vector, _d: &Vector| 0.5;
        let trace = run_framework(array![x0, -x0], radii, oracle, &mut step, Budget::iterations(60)).unwrap();
        let fin = trace.final_radii.unwrap();
        let n = trace.null_count as i32;
        prop_assert!((fin.eps - theta.powi(n) * eps).abs() <= 1e-12 * fin.eps);
        prop_assert!((fin.r - mu.powi(n) * (eps + extra)).abs() <= 1e-12 * fin.r);
    }

    #[test]
    fn descent_lemma_holds_for_instance_loss(seed in 0u64..50, t in 0.0f64..1.0) {
        let inst = generate_instance(5, 6, 0.1, seed).unwrap();
        let f = &inst.loss;
        let x = Vector::from_iter((0..6).map(|i| (i as f64 * 0.7 + seed as f64).cos()));
        let y = Vector::from_iter((0..6).map(|i| t * (i as f64 * 1.3).sin()));
        let l = f.descent_constant();
        let diff = &y - &x;
        let rhs = f.value(&x) + f.gradient(&x).dot(&diff) + 0.5 * l * diff.dot(&diff);
        prop_assert!(f.value(&y) <= rhs + 1e-10 * (1.0 + rhs.abs()));
    }
}
