use std::sync::Arc;

use proptest::prelude::*;
use sinkflow::gaussian::{deficit_ratio, fokker_planck_scale_variance, sinkhorn_scale_variance};
use sinkflow::grid::sup_norm;
use sinkflow::measures::{discretize, kl_divergence};
use sinkflow::pma::{
    brenier_potential, continuity_residual, continuity_residual_of, dual_pma_residual,
    fokker_planck_step, fokker_planck_velocity, gauge_consistency, kl_decay_series,
    linot_second_order, metric_derivative_lot, mirror_flow_step, pma_rhs, pushforward_residual,
    step, velocity, velocity_from_potential, MirrorFlowState, MirrorFunctional, PmaConfig,
    PmaProblem, PmaState,
};
use sinkflow::{ConvexPotential, DensitySpec, Error, Grid, GridDensity};

fn gauss(m: f64, v: f64) -> DensitySpec {
    DensitySpec::gaussian(m, v).unwrap()
}

/// PMA run from `rho0` towards `e^{-f}` with mirror target `e^{-g}`, started
/// at the Brenier potential from `rho0` to `e^{-g}`.
fn start(f: DensitySpec, g: DensitySpec, rho0: DensitySpec, n: usize, half_width: f64) -> PmaState {
    let grid = Grid::symmetric(half_width, n).unwrap();
    let mu = discretize(&f, &grid).unwrap();
    let nu = discretize(&g, &grid).unwrap();
    let rho0 = discretize(&rho0, &grid).unwrap();
    let cfg = PmaConfig::default();
    let u0 = brenier_potential(&rho0, &nu, cfg.a_floor).unwrap();
    PmaState::new(Arc::new(PmaProblem::new(f, g, mu, nu, cfg)), u0).unwrap()
}

/// Gaussian location: `f = N(0,1)`, `g = N(theta,1)`, `rho0 = e^{-g}`.
fn location(theta: f64, n: usize) -> PmaState {
    start(gauss(0.0, 1.0), gauss(theta, 1.0), gauss(theta, 1.0), n, 8.0)
}

/// Gaussian scale: `f = N(0,1)`, `g = N(0,eta^2)`, `rho0 = e^{-g}`.
fn scale(eta: f64, n: usize) -> PmaState {
    start(gauss(0.0, 1.0), gauss(0.0, eta * eta), gauss(0.0, eta * eta), n, 8.0)
}

fn stationary(n: usize) -> PmaState {
    start(gauss(0.0, 1.0), gauss(0.0, 1.0), gauss(0.0, 1.0), n, 8.0)
}

fn interior_gap(g: &Grid, a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
    sup_norm(g.interior(0.1).map(|i| a[i] - b(i)))
}

#[test]
fn rhs_vanishes_at_the_brenier_potential() {
    let s = start(gauss(0.0, 1.0), gauss(0.5, 1.0), gauss(0.0, 1.0), 512, 8.0);
    let r = pma_rhs(&s).unwrap();
    assert!(interior_gap(s.grid(), &r, |_| 0.0) < 1e-3);
}

#[test]
fn rhs_of_the_location_start() {
    let theta = 0.5;
    let s = location(theta, 512);
    let r = pma_rhs(&s).unwrap();
    let x = s.grid().nodes();
    assert!(interior_gap(s.grid(), &r, |i| theta * x[i] - 0.5 * theta * theta) < 1e-6);
}

#[test]
fn rhs_log_det_of_a_quadratic() {
    let grid = Grid::symmetric(8.0, 256).unwrap();
    let (f, g) = (gauss(0.0, 1.0), gauss(0.0, 1.0));
    let p = Arc::new(PmaProblem::new(
        f.clone(),
        g.clone(),
        discretize(&f, &grid).unwrap(),
        discretize(&g, &grid).unwrap(),
        PmaConfig::default(),
    ));
    let c = 1.7;
    let s = PmaState::new(p, ConvexPotential::quadratic(grid, c, 0.1).unwrap()).unwrap();
    let r = pma_rhs(&s).unwrap();
    for (i, x) in grid.nodes().iter().enumerate() {
        let rest = f.neg_log_density(*x) - g.neg_log_density(c * x + 0.1);
        assert!((r[i] - rest - c.ln()).abs() < 1e-12);
    }
}

#[test]
fn convexity_floor_is_enforced() {
    let grid = Grid::symmetric(8.0, 128).unwrap();
    let f = gauss(0.0, 1.0);
    let p = Arc::new(PmaProblem::new(
        f.clone(),
        f.clone(),
        discretize(&f, &grid).unwrap(),
        discretize(&f, &grid).unwrap(),
        PmaConfig::default(),
    ));
    let flat = ConvexPotential::quadratic(grid, 1e-4, 0.0).unwrap();
    assert!(matches!(PmaState::new(p, flat), Err(Error::ConvexityLost { .. })));
}

#[test]
fn location_mean_decays() {
    let theta = 0.5;
    let s = location(theta, 512).advance_to(1.0, 1e-3).unwrap();
    let exact = theta * (-1.0f64).exp();
    assert!((s.rho.mean() / exact - 1.0).abs() < 0.02, "mean {}", s.rho.mean());
    assert!(s.projection < 1e-6);
    assert!(s.bounds.a_min_observed >= PmaConfig::default().a_floor);
}

#[test]
fn scale_variance_grows() {
    let eta = 0.5;
    let s = scale(eta, 512).advance_to(0.5, 1e-3).unwrap();
    let exact = sinkhorn_scale_variance(eta, 0.5);
    assert!((s.rho.variance() / exact - 1.0).abs() < 0.02, "variance {}", s.rho.variance());
}

#[test]
fn zero_step_keeps_the_state() {
    let s = location(0.5, 128);
    let t = step(&s, 0.0).unwrap();
    assert_eq!(t.u.u(), s.u.u());
    assert_eq!(t.rho, s.rho);
    assert_eq!(t.t, s.t);
}

#[test]
fn invariants_along_a_run() {
    let mut s = location(0.5, 512);
    let dt = 1e-3;
    for _ in 0..200 {
        let next = step(&s, dt).unwrap();
        assert!(pushforward_residual(&next).unwrap() < 1e-3);
        assert!(gauge_consistency(&s, &next) < 1e-3);
        assert!((next.rho.mass() - 1.0).abs() < 1e-8);
        s = next;
    }
    let a = velocity(&s).unwrap();
    let b = velocity_from_potential(&s);
    assert!(interior_gap(s.grid(), &a.values, |i| b.values[i]) < 1e-3);
}

#[test]
fn velocity_examples() {
    let s = stationary(256);
    assert!(sup_norm(velocity(&s).unwrap().values.iter().copied()) < 1e-4);

    let theta = 0.5;
    let s = location(theta, 512);
    let v = velocity(&s).unwrap();
    assert!(interior_gap(s.grid(), &v.values, |_| -theta) < 1e-6);
    // u'' = 1: same as the Fokker-Planck field.
    let fp = fokker_planck_velocity(&s.rho, &s.problem().mu).unwrap();
    assert!(interior_gap(s.grid(), &v.values, |i| fp.values[i]) < 1e-9);
}

#[test]
fn fokker_planck_velocity_examples() {
    let g = Grid::symmetric(8.0, 512).unwrap();
    let mu = discretize(&gauss(0.0, 1.0), &g).unwrap();
    let v = fokker_planck_velocity(&mu, &mu).unwrap();
    assert!(sup_norm(v.values.iter().copied()) < 1e-6);
    let rho = discretize(&gauss(0.5, 1.0), &g).unwrap();
    let v = fokker_planck_velocity(&rho, &mu).unwrap();
    assert!(interior_gap(&g, &v.values, |_| -0.5) < 1e-6);
    let rho = discretize(&gauss(0.0, 0.25), &g).unwrap();
    let v = fokker_planck_velocity(&rho, &mu).unwrap();
    assert!(interior_gap(&g, &v.values, |i| 3.0 * g.node(i)) < 1e-6);
}

fn fokker_planck_run(rho: &GridDensity, mu: &GridDensity, t: f64, dt: f64) -> GridDensity {
    let mut r = rho.clone();
    let steps = (t / dt).round() as usize;
    for _ in 0..steps {
        r = fokker_planck_step(&r, mu, dt).unwrap();
    }
    r
}

#[test]
fn fokker_planck_flow_examples() {
    let g = Grid::symmetric(8.0, 512).unwrap();
    let mu = discretize(&gauss(0.0, 1.0), &g).unwrap();

    let rho = discretize(&gauss(0.5, 1.0), &g).unwrap();
    let r = fokker_planck_run(&rho, &mu, 1.0, 1e-2);
    assert!((r.variance() - 1.0).abs() < 0.01);
    assert!((r.mean() / (0.5 * (-1.0f64).exp()) - 1.0).abs() < 0.01);

    let rho = discretize(&gauss(0.0, 0.25), &g).unwrap();
    let r = fokker_planck_run(&rho, &mu, 1.0, 1e-2);
    assert!((r.variance() / fokker_planck_scale_variance(0.5, 1.0) - 1.0).abs() < 0.01);
    assert!((fokker_planck_scale_variance(0.5, 1.0) - 0.8985).abs() < 1e-4);

    let r = fokker_planck_run(&mu, &mu, 1.0, 1e-2);
    assert!(sup_norm(r.values().iter().zip(mu.values()).map(|(a, b)| a - b)) < 1e-6);
}

/// Residual of a diagnostic after running to t = 0.2 with `(n, dt)`.
fn at(
    make: fn(f64, usize) -> PmaState,
    param: f64,
    n: usize,
    dt: f64,
    diag: fn(&PmaState, f64) -> f64,
) -> f64 {
    let s = make(param, n).advance_to(0.2, dt).unwrap();
    diag(&s, dt)
}

fn dual(s: &PmaState, dt: f64) -> f64 {
    dual_pma_residual(s, dt).unwrap()
}

fn continuity(s: &PmaState, dt: f64) -> f64 {
    continuity_residual(s, &step(s, dt).unwrap()).unwrap()
}

// The refinement pairs start at n = 1024: each outer step is split into
// stability substeps, and the forward difference over the step carries an
// O(dt) error proportional to (1 - 1/substeps). On coarse grids the substep
// count is 2 or 3 and changes the constant as well as dt.

#[test]
fn dual_flow_residual() {
    assert!(dual_pma_residual(&stationary(256), 1e-3).unwrap() < 1e-3);
    for make in [location as fn(f64, usize) -> PmaState, scale] {
        let p = 0.5;
        assert!(at(make, p, 512, 1e-3, dual) <= 5e-2);
        let (rc, rf) = (at(make, p, 1024, 1e-3, dual), at(make, p, 2048, 5e-4, dual));
        assert!(rc / rf >= 1.8, "{rc} -> {rf}");
    }
}

#[test]
fn continuity_equation_residual() {
    let s = stationary(256);
    assert!(continuity(&s, 1e-3) <= 1e-4);
    for make in [location as fn(f64, usize) -> PmaState, scale] {
        assert!(at(make, 0.5, 512, 1e-3, continuity) <= 0.05);
        let (rc, rf) = (at(make, 0.5, 1024, 1e-3, continuity), at(make, 0.5, 2048, 5e-4, continuity));
        assert!(rc / rf >= 1.8, "{rc} -> {rf}");
    }

    // Fokker-Planck pair with its own velocity field.
    let res = |n: usize, dt: f64| {
        let g = Grid::symmetric(8.0, n).unwrap();
        let mu = discretize(&gauss(0.0, 1.0), &g).unwrap();
        let rho = discretize(&gauss(0.5, 1.0), &g).unwrap();
        let v = fokker_planck_velocity(&rho, &mu).unwrap();
        let next = fokker_planck_step(&rho, &mu, dt).unwrap();
        continuity_residual_of(&rho, &next, &v, dt)
    };
    assert!(res(512, 1e-3) <= 0.05);
    let (rc, rf) = (res(1024, 1e-3), res(2048, 5e-4));
    assert!(rc / rf >= 1.8, "{rc} -> {rf}");
}

#[test]
fn metric_derivative_of_the_location_flow() {
    let deltas = [0.1, 0.05, 0.025];
    let times = [0.5, 0.525, 0.55, 0.6];
    let run = location(0.5, 512).run_to_times(1e-3, &times).unwrap();
    let rows = metric_derivative_lot(&run, 0.5, &deltas).unwrap();
    let last = rows.last().unwrap();
    assert!((last.ratio - 1.0).abs() <= 0.05, "{rows:?}");
    // The ratio moves towards 1 as delta shrinks.
    assert!((rows[0].ratio - 1.0).abs() >= (last.ratio - 1.0).abs());

    let (second, first) = linot_second_order(&run, 0.5, 0.025).unwrap();
    assert!(second <= 0.1 * first, "{second} vs {first}");

    let run = stationary(256).run_to_times(1e-3, &[0.0, 0.05]).unwrap();
    let rows = metric_derivative_lot(&run, 0.0, &[0.05]).unwrap();
    assert_eq!(rows[0].ratio, 0.0);
}

#[test]
fn kl_decay_of_the_location_flow() {
    let theta = 0.5;
    let times: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
    let run = location(theta, 512).run_to_times(1e-3, &times).unwrap();
    let table = kl_decay_series(&run, 1.0).unwrap();
    assert!(table.within_bound);
    for row in &table.rows {
        let exact = 0.5 * theta * theta * (-2.0 * row.t).exp();
        assert!((row.kl - exact).abs() < 1e-3 * exact.max(1e-3), "{row:?}");
        assert!((row.h - 1.0).abs() < 1e-3);
    }

    let run = stationary(256).run_to_times(1e-3, &[0.0, 0.5]).unwrap();
    let table = kl_decay_series(&run, 1.0).unwrap();
    assert!(table.within_bound);
    assert!(table.rows.iter().all(|r| r.kl < 1e-10));
}

#[test]
fn scale_flow_beats_fokker_planck() {
    let eta = 0.5;
    let times = [1.0, 2.0];
    let run = scale(eta, 512).run_to_times(1e-3, &times).unwrap();
    let g = *run[0].grid();
    let mu = run[0].problem().mu.clone();
    let rho0 = discretize(&gauss(0.0, eta * eta), &g).unwrap();
    let fp1 = fokker_planck_run(&rho0, &mu, 1.0, 1e-2);
    let fp2 = fokker_planck_run(&fp1, &mu, 1.0, 1e-2);
    for (s, fp) in run.iter().zip([fp1, fp2]) {
        assert!(kl_divergence(&s.rho, &mu).unwrap() < kl_divergence(&fp, &mu).unwrap());
        let (_, bound) = deficit_ratio(eta, s.t).unwrap();
        let ratio = (1.0 - fp.variance()) / (1.0 - s.rho.variance());
        assert!(ratio >= bound * 0.98, "t = {}: {ratio} vs {bound}", s.t);
    }
}

#[test]
fn mirror_flow_examples() {
    // Entropy: rho_t = N(0, (1 + t)^2).
    let grid = Grid::symmetric(12.0, 512).unwrap();
    let g = gauss(0.0, 1.0);
    let mut s = MirrorFlowState::new(ConvexPotential::quadratic(grid, 1.0, 0.0).unwrap(), g.clone(), 1e-3).unwrap();
    for _ in 0..100 {
        s = mirror_flow_step(&s, &MirrorFunctional::Entropy, 1e-2).unwrap();
    }
    assert!((s.rho.variance() / 4.0 - 1.0).abs() < 0.02, "{}", s.rho.variance());

    // Potential energy V = x^2 / 2: rho_t = N(0, 1 / (1 + t)^2).
    let grid = Grid::symmetric(8.0, 512).unwrap();
    let v = MirrorFunctional::PotentialEnergy(Arc::new(|x: f64| 0.5 * x * x));
    let mut s = MirrorFlowState::new(ConvexPotential::quadratic(grid, 1.0, 0.0).unwrap(), g, 1e-3).unwrap();
    for _ in 0..100 {
        s = mirror_flow_step(&s, &v, 1e-2).unwrap();
    }
    assert!((s.rho.variance() / 0.25 - 1.0).abs() < 0.02, "{}", s.rho.variance());

    // Relative entropy is the Sinkhorn flow itself.
    let p = location(0.5, 256);
    let mut m = MirrorFlowState::new(p.u.clone(), p.problem().g.clone(), 1e-3).unwrap();
    let f = MirrorFunctional::RelativeEntropy(p.problem().f.clone());
    let q = p.advance_to(0.1, 1e-3).unwrap();
    for _ in 0..100 {
        m = mirror_flow_step(&m, &f, 1e-3).unwrap();
    }
    assert!(sup_norm(m.rho.values().iter().zip(q.rho.values()).map(|(a, b)| a - b)) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn location_rhs_formula(theta in -1.0f64..1.0) {
        let s = location(theta, 256);
        let r = pma_rhs(&s).unwrap();
        let x = s.grid().nodes();
        prop_assert!(interior_gap(s.grid(), &r, |i| theta * x[i] - 0.5 * theta * theta) < 1e-6);
    }

    #[test]
    fn short_runs_keep_the_constraints(theta in -1.0f64..1.0, eta in 0.5f64..1.1) {
        let s0 = start(gauss(0.0, 1.0), gauss(theta, eta * eta), gauss(theta, eta * eta), 256, 8.0);
        let s1 = s0.advance_to(0.05, 1e-3).unwrap();
        prop_assert!(pushforward_residual(&s1).unwrap() < 5e-3);
        prop_assert!((s1.rho.mass() - 1.0).abs() < 1e-8);
        prop_assert!(kl_divergence(&s1.rho, &s1.problem().mu).unwrap()
            <= kl_divergence(&s0.rho, &s0.problem().mu).unwrap() + 1e-12);
    }

    #[test]
    fn fokker_planck_conserves_mass(m in -1.0f64..1.0, v in 0.3f64..1.2, dt in 1e-4f64..5e-2) {
        let g = Grid::symmetric(8.0, 256).unwrap();
        let mu = discretize(&gauss(0.0, 1.0), &g).unwrap();
        let rho = discretize(&gauss(m, v), &g).unwrap();
        let r = fokker_planck_step(&rho, &mu, dt).unwrap();
        prop_assert!((r.mass() - 1.0).abs() < 1e-7);
    }
}
