use std::sync::Arc;

use sinkflow::diffusion::{
    dual_sde_coefficients, dual_sde_step, empirical_density, euler_maruyama_step,
    generator_stationarity_residual, ks_distance, ks_distance_nodes, markov_chain_step,
    mirror_langevin_step, noise, sinkhorn_sde_coefficients, sinkhorn_sde_step, ParticleEnsemble,
    TestFunction,
};
use sinkflow::measures::{discretize, kl_divergence};
use sinkflow::pma::{brenier_potential, step, PmaConfig, PmaProblem, PmaState};
use sinkflow::sinkhorn::SinkhornState;
use sinkflow::transport::mirror_coordinate;
use sinkflow::{ConvexPotential, DensitySpec, Execution, Grid, GridDensity};

const KS_95: f64 = 1.63;

fn gauss(m: f64, v: f64) -> DensitySpec {
    DensitySpec::gaussian(m, v).unwrap()
}

fn flow(f: DensitySpec, g: DensitySpec, n: usize) -> PmaState {
    let grid = Grid::symmetric(8.0, n).unwrap();
    let mu = discretize(&f, &grid).unwrap();
    let nu = discretize(&g, &grid).unwrap();
    let cfg = PmaConfig::default();
    let u0 = brenier_potential(&nu, &nu, cfg.a_floor).unwrap();
    PmaState::new(Arc::new(PmaProblem::new(f, g, mu, nu, cfg)), u0).unwrap()
}

fn location(theta: f64) -> PmaState {
    flow(gauss(0.0, 1.0), gauss(theta, 1.0), 512)
}

/// `u' = x + 0.3 tanh(x)`: a non-quadratic mirror with `1 <= u'' <= 1.3`.
fn tanh_mirror(grid: Grid) -> ConvexPotential {
    ConvexPotential::from_fn(
        grid,
        |x: f64| 0.5 * x * x + 0.3 * x.cosh().ln(),
        |x: f64| x + 0.3 * x.tanh(),
        |x: f64| 1.0 + 0.3 / x.cosh().powi(2),
        1e-3,
    )
    .unwrap()
}

/// `(w')_# e^{-g}` for the mirror `u`: density `nu(u') u''`.
fn pulled_back(u: &ConvexPotential, g: &DensitySpec) -> GridDensity {
    let logs: Vec<f64> = u
        .du()
        .iter()
        .zip(u.d2u())
        .map(|(d, a)| -g.neg_log_density(*d) + a.ln())
        .collect();
    GridDensity::from_log(*u.grid(), &logs).unwrap()
}

#[test]
fn sinkhorn_sde_follows_the_flow() {
    let theta = 0.5;
    let dt = 1e-3;
    let mut pma = location(theta);
    let mut e = ParticleEnsemble::from_density(&pma.rho, 100_000, 7);
    for k in 1..=1000 {
        e = sinkhorn_sde_step(&e, &pma, dt).unwrap();
        pma = step(&pma, dt).unwrap();
        if k == 500 || k == 1000 {
            let se = e.standard_error();
            assert!((e.mean() - pma.rho.mean()).abs() <= 3.0 * se, "t = {}", e.t);
            let se_var = e.variance() * (2.0 / e.len() as f64).sqrt();
            assert!((e.variance() - pma.rho.variance()).abs() <= 3.0 * se_var, "t = {}", e.t);
        }
    }
    let exact = theta * (-1.0f64).exp();
    assert!((e.mean() - exact).abs() <= 3.0 * e.standard_error(), "mean {}", e.mean());
}

#[test]
fn sde_coefficients_match_the_mirror() {
    let pma = location(0.5).advance_to(0.3, 1e-3).unwrap();
    let c = sinkhorn_sde_coefficients(&pma);
    for (s, a) in c.diffusion.iter().zip(pma.u.d2u()) {
        assert!((s * s - 2.0 / a).abs() < 1e-6);
    }
    let d = dual_sde_coefficients(&pma);
    assert_eq!(d.nodes(), pma.u.du());
}

#[test]
fn noiseless_drift_at_the_fixed_point() {
    // f = g = h: the f and h terms cancel and the drift is -g'(u'(x)) = -x,
    // the Langevin drift towards e^{-f}.
    let pma = flow(gauss(0.0, 1.0), gauss(0.0, 1.0), 512);
    let c = sinkhorn_sde_coefficients(&pma);
    let g = *pma.grid();
    for i in g.interior(0.1) {
        let (b, _) = c.eval(g.node(i));
        assert!((b + g.node(i)).abs() < 1e-6);
    }
    // With noise it is stationary in law.
    let mut e = ParticleEnsemble::from_density(&pma.rho, 100_000, 3);
    let ks0 = ks_distance(&e.positions, &pma.rho);
    for _ in 0..500 {
        e = euler_maruyama_step(&e, &c, 1e-3, 1.0, &g, Execution::default()).unwrap();
    }
    let ks = ks_distance(&e.positions, &pma.rho);
    assert!(ks <= (2.0 * ks0).max(KS_95 / (e.len() as f64).sqrt()), "{ks0} -> {ks}");
}

#[test]
fn seeded_runs_repeat() {
    let pma = location(0.5);
    let e = ParticleEnsemble::from_density(&pma.rho, 1000, 11);
    assert_eq!(e, ParticleEnsemble::from_density(&pma.rho, 1000, 11));
    let a = sinkhorn_sde_step(&e, &pma, 1e-3).unwrap();
    let b = sinkhorn_sde_step(&e, &pma, 1e-3).unwrap();
    assert_eq!(a, b);
    let ey = ParticleEnsemble::from_density(&pma.problem().nu, 1000, 11);
    assert_eq!(dual_sde_step(&ey, &pma, 1e-3).unwrap(), dual_sde_step(&ey, &pma, 1e-3).unwrap());
    let other = ParticleEnsemble { seed: 12, ..e.clone() };
    assert_ne!(sinkhorn_sde_step(&other, &pma, 1e-3).unwrap().positions, a.positions);

    // Thread partitioning does not change the streams.
    let c = sinkhorn_sde_coefficients(&pma);
    let s = euler_maruyama_step(&e, &c, 1e-3, 1.0, pma.grid(), Execution::Sequential).unwrap();
    let p = euler_maruyama_step(&e, &c, 1e-3, 1.0, pma.grid(), Execution::Parallel).unwrap();
    assert_eq!(s, p);
    // Nor does the particle count: particle i sees the same noise.
    let head = ParticleEnsemble::new(e.positions[..100].to_vec(), 11);
    let h = sinkhorn_sde_step(&head, &pma, 1e-3).unwrap();
    assert_eq!(h.positions[..], a.positions[..100]);
}

#[test]
fn time_mismatch_is_rejected() {
    let pma = location(0.5);
    let mut e = ParticleEnsemble::from_density(&pma.rho, 10, 1);
    e.t = 0.5;
    assert!(sinkhorn_sde_step(&e, &pma, 1e-3).is_err());
    assert!(dual_sde_step(&e, &pma, 1e-3).is_err());
}

#[test]
fn frozen_dual_diffusion_keeps_the_target() {
    let pma = location(0.5).advance_to(0.5, 1e-3).unwrap();
    let c = dual_sde_coefficients(&pma);
    let nu = &pma.problem().nu;
    let p = 100_000;
    let mut e = ParticleEnsemble::from_density(nu, p, 5);
    for _ in 0..1000 {
        e = euler_maruyama_step(&e, &c, 1e-3, 1.0, nu.grid(), Execution::default()).unwrap();
    }
    let ks = ks_distance(&e.positions, nu);
    assert!(ks <= 2.0 * KS_95 / (p as f64).sqrt(), "{ks}");
}

#[test]
fn primal_and_dual_agree_through_the_mirror() {
    let dt = 1e-3;
    let mut pma = location(0.5);
    let x0 = ParticleEnsemble::from_density(&pma.rho, 100_000, 21);
    let y0 = ParticleEnsemble::new(x0.positions.iter().map(|&x| pma.u.eval_du(x)).collect(), 21);
    let (mut x, mut y) = (x0, y0);
    for _ in 0..100 {
        x = sinkhorn_sde_step(&x, &pma, dt).unwrap();
        y = dual_sde_step(&y, &pma, dt).unwrap();
        pma = step(&pma, dt).unwrap();
    }
    let mapped = x
        .positions
        .iter()
        .map(|&v| mirror_coordinate(&pma.u, v).unwrap())
        .sum::<f64>()
        / x.len() as f64;
    assert!((mapped - y.mean()).abs() <= 5.0 * dt, "{mapped} vs {}", y.mean());
}

#[test]
fn langevin_reduction_is_exact() {
    let grid = Grid::symmetric(8.0, 256).unwrap();
    let u = ConvexPotential::quadratic(grid, 1.0, 0.0).unwrap();
    let target = gauss(0.0, 1.0);
    let e = ParticleEnsemble::new((0..1000).map(|i| -3.0 + 0.006 * i as f64).collect(), 99);
    let dt = 1e-2;
    let next = mirror_langevin_step(&e, &u, &target, dt).unwrap();
    for (i, (x, y)) in e.positions.iter().zip(&next.positions).enumerate() {
        let xi = noise::normal(99, 0, i as u64);
        let gp = x;
        let reference = x - gp * dt + 2f64.sqrt() * dt.sqrt() * xi;
        assert_eq!(*y, reference);
    }
    assert_eq!(next, mirror_langevin_step(&e, &u, &target, dt).unwrap());
}

#[test]
fn mirror_langevin_is_stationary() {
    let grid = Grid::symmetric(8.0, 512).unwrap();
    let u = tanh_mirror(grid);
    let g = gauss(0.0, 1.0);
    let rho = pulled_back(&u, &g);
    let mut e = ParticleEnsemble::from_density(&rho, 100_000, 13);
    let ks0 = ks_distance(&e.positions, &rho);
    for _ in 0..1000 {
        e = mirror_langevin_step(&e, &u, &g, 1e-3).unwrap();
    }
    let ks = ks_distance(&e.positions, &rho);
    assert!(ks <= (2.0 * ks0).max(KS_95 / (e.len() as f64).sqrt()), "{ks0} -> {ks}");
}

#[test]
fn markov_chain_marginals() {
    let grid = Grid::symmetric(8.0, 256).unwrap();
    let mu = discretize(&gauss(0.0, 1.0), &grid).unwrap();
    let nu = discretize(&gauss(0.5, 1.0), &grid).unwrap();
    let u0: Vec<f64> = grid.nodes().iter().map(|x| 0.5 * x * x).collect();
    let p = 100_000;
    let bound = 3.0 * KS_95 / (p as f64).sqrt();
    for eps in [0.2, 0.1] {
        let mut sk = SinkhornState::new(u0.clone(), mu.clone(), nu.clone(), eps, nu.clone()).unwrap();
        let mut e = ParticleEnsemble::on_nodes(&nu, p, 17);
        assert!(ks_distance_nodes(&e.positions, &sk.rho) <= bound);
        for _ in 0..10 {
            e = markov_chain_step(&e, &sk).unwrap();
            sk = sk.s_step().unwrap();
            let ks = ks_distance_nodes(&e.positions, &sk.rho);
            assert!(ks <= bound, "eps = {eps}, k = {}: {ks}", sk.k);
        }
        assert!((e.t - 10.0 * eps).abs() < 1e-12);
    }
}

#[test]
fn markov_chain_forgets_at_large_eps() {
    let grid = Grid::symmetric(8.0, 256).unwrap();
    let mu = discretize(&gauss(0.0, 1.0), &grid).unwrap();
    let u0: Vec<f64> = grid.nodes().iter().map(|x| 0.5 * x * x).collect();
    let sk = SinkhornState::new(u0, mu.clone(), mu.clone(), 10.0, mu.clone())
        .unwrap()
        .s_step()
        .unwrap();
    let mut e = ParticleEnsemble::on_nodes(&sk.rho, 100_000, 23);
    e.step_count = 1;
    let next = markov_chain_step(&e, &sk).unwrap();
    let (mx, my) = (e.mean(), next.mean());
    let cov: f64 = e
        .positions
        .iter()
        .zip(&next.positions)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (e.len() as f64 - 1.0);
    let corr = cov / (e.variance() * next.variance()).sqrt();
    assert!(corr.abs() <= 0.1, "{corr}");
    assert_eq!(next, markov_chain_step(&e, &sk).unwrap());

    e.step_count = 0;
    assert!(markov_chain_step(&e, &sk).is_err());
}

#[test]
fn kernel_density_estimates() {
    let grid = Grid::symmetric(8.0, 512).unwrap();
    let truth = discretize(&gauss(0.0, 1.0), &grid).unwrap();
    let e = ParticleEnsemble::new((0..1_000_000).map(|i| noise::normal(31, 0, i)).collect(), 31);
    let kde = empirical_density(&e, &grid, 0.1).unwrap();
    assert!((kde.mass() - 1.0).abs() < 1e-8);
    let kl = kl_divergence(&truth, &kde).unwrap();
    assert!(kl <= 5e-3, "{kl}");

    let one = ParticleEnsemble::new(vec![grid.node(200)], 0);
    let bump = empirical_density(&one, &grid, 0.2).unwrap();
    assert!((bump.mass() - 1.0).abs() < 1e-8);
    let peak = (0..grid.len()).max_by(|&a, &b| bump.values()[a].total_cmp(&bump.values()[b])).unwrap();
    assert_eq!(peak, 200);
    assert!((bump.mean() - grid.node(200)).abs() < 1e-9);
    assert!(empirical_density(&one, &grid, 0.0).is_err());
}

#[test]
fn ensemble_csv() {
    let e = ParticleEnsemble::new(vec![0.5, -1.0], 0);
    let mut out = Vec::new();
    e.write_csv(&mut out).unwrap();
    let s = String::from_utf8(out).unwrap();
    assert!(s.starts_with("particle_id,x\n0,"));
    assert_eq!(s.lines().count(), 3);
}

#[test]
fn generator_residual() {
    let g = gauss(0.0, 1.0);
    let bump = TestFunction::bump(0.3, 2.0);

    let grid = Grid::symmetric(8.0, 512).unwrap();
    let quad = ConvexPotential::quadratic(grid, 1.0, 0.0).unwrap();
    let y = Grid::symmetric(4.0, 400).unwrap();
    assert!(generator_stationarity_residual(&quad, &g, &bump, &y).unwrap() <= 1e-4);
    assert_eq!(generator_stationarity_residual(&quad, &g, &TestFunction::constant(2.0), &y).unwrap(), 0.0);

    // Non-quadratic mirror: the residual is a central-difference error.
    let u = tanh_mirror(Grid::symmetric(8.0, 1024).unwrap());
    let r: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&m| {
            let y = Grid::symmetric(4.0, m).unwrap();
            generator_stationarity_residual(&u, &g, &bump, &y).unwrap()
        })
        .collect();
    assert!(r[1] <= 1e-4, "{r:?}");
    assert!(r[0] / r[1] >= 3.5 && r[1] / r[2] >= 3.5, "{r:?}");
}
