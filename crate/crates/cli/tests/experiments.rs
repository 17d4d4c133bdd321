use sinkflow_cli::config::{DensityConfig, PotentialConfig};
use sinkflow_cli::experiments::{self, execute, flow_by_name, tabulate};
use sinkflow_cli::{CliError, Experiment, ExperimentConfig, RunManifest};

fn small(experiment: Experiment) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(experiment);
    c.numerics.n = 256;
    c
}

#[test]
fn eps_limit_with_one_eps_has_no_slope() {
    let mut c = small(Experiment::EpsLimit);
    c.numerics.eps_list = vec![0.2];
    let out = execute(&c).unwrap();
    assert_eq!(out.report.table.rows.len(), 1);
    assert!(out.report.verdicts.is_empty());
    assert!(out.report.notes.iter().all(|n| !n.contains("slope")));
}

/// With e^{-f} = e^{-g} = rho0 the PMA flow is at rest, but Sinkhorn started
/// from the same (identity) potential relaxes to its entropic fixed point,
/// whose marginal is O(eps) away in W2. The errors are O(eps^2), not zero.
#[test]
fn eps_limit_at_the_stationary_point() {
    let mut c = small(Experiment::EpsLimit);
    let n01 = DensityConfig::gaussian(0.0, 1.0);
    c.problem.mu = n01;
    c.problem.nu = n01;
    let out = execute(&c).unwrap();
    let eps = out.report.table.column("eps").unwrap();
    let err = out.report.table.column("w2_squared").unwrap();
    for (e, w) in eps.iter().zip(&err) {
        assert!(*w <= 1e-2 * e * e, "eps = {e}: {w}");
    }
    for w in err.windows(2) {
        assert!((0.2..0.3).contains(&(w[1] / w[0])), "{err:?}");
    }
}

#[test]
fn laplace_report() {
    let mut c = small(Experiment::LaplaceEstimate);
    c.problem.u0 = PotentialConfig::Quadratic { a: 1.0, b: 0.0 };
    c.numerics.eps_list = vec![0.2, 0.1, 0.05, 0.025];
    let out = execute(&c).unwrap();
    let r = &out.report;
    assert!(r.passed(), "{:?}", r.verdicts);
    assert_eq!(r.verdicts[0].name, "slope");
    assert!(r.verdicts[0].value >= 1.7);
    assert!(r.notes.is_empty());

    // A potential close to the convexity floor is flagged.
    c.problem.u0 = PotentialConfig::Quadratic { a: 5e-3, b: 0.0 };
    c.numerics.eps_list = vec![0.2, 0.1];
    let out = execute(&c).unwrap();
    assert!(out.report.notes.iter().any(|n| n.contains("floor")), "{:?}", out.report.notes);
}

#[test]
fn runs_are_reproducible() {
    let mut c = small(Experiment::SinkhornRun);
    c.numerics.eps_list = vec![0.25];
    let dir = tempfile::tempdir().unwrap();
    let (r1, m1) = experiments::run(&c, &dir.path().join("a")).unwrap();
    let (_, m2) = experiments::run(&c, &dir.path().join("b")).unwrap();
    assert!(r1.passed());
    assert!(m1.differences(&m2).is_empty());
    assert_eq!(m1.config_hash, c.hash());
    for f in ["config.json", "report.json", "report.csv", "plot.svg", "potential.csv", "dual.csv"] {
        assert!(m1.checksums.contains_key(f), "{f}");
    }
    assert_eq!(RunManifest::load(&dir.path().join("a")).unwrap(), m1);

    // The written config carries every default and reproduces the hash.
    let text = std::fs::read_to_string(dir.path().join("a/config.json")).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap().hash(), c.hash());

    let mut other = c.clone();
    other.numerics.eps_list = vec![0.5];
    let (_, m3) = experiments::run(&other, &dir.path().join("c")).unwrap();
    assert!(m1.differences(&m3).contains(&"report.json".to_string()));
}

#[test]
fn stochastic_runs_repeat_with_the_seed() {
    let mut c = small(Experiment::MarkovChainRun);
    c.numerics.eps_list = vec![0.2];
    c.numerics.particles = 5_000;
    let a = execute(&c).unwrap().report;
    let b = execute(&c).unwrap().report;
    assert_eq!(a.to_json(), b.to_json());
    c.numerics.seed += 1;
    assert_ne!(execute(&c).unwrap().report.to_json(), a.to_json());
}

#[test]
fn fokker_planck_against_ornstein_uhlenbeck() {
    let mut c = small(Experiment::FokkerPlanckRun);
    c.problem.rho0 = Some(DensityConfig::gaussian(0.5, 0.25));
    c.numerics.dt = 1e-2;
    c.output.snapshot_stride = 10;
    let r = execute(&c).unwrap().report;
    assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
    assert_eq!(r.table.rows.len(), 11);
}

#[test]
fn tolerances_are_embedded_and_overridable() {
    let mut c = small(Experiment::SinkhornRun);
    c.numerics.eps_list = vec![0.5];
    c.numerics.tolerances.insert("normalization".into(), 0.0);
    let r = execute(&c).unwrap().report;
    let v = r.verdicts.iter().find(|v| v.name == "normalization_error").unwrap();
    assert_eq!(v.tolerance, sinkflow_cli::Check::AtMost { bound: 0.0 });

    c.numerics.tolerances.insert("no_such_tolerance".into(), 1.0);
    assert!(matches!(execute(&c), Err(CliError::Unknown { .. })));
}

#[test]
fn tabulated_flows() {
    let q = flow_by_name("euclid_quartic", None).unwrap();
    let csv = tabulate(&q, 6.0, 4).unwrap();
    assert_eq!(csv.lines().next(), Some("t,value"));
    assert_eq!(csv.lines().last(), Some("6,0"));
    assert!(tabulate(&q, 7.0, 4).is_err());

    let s = flow_by_name("sinkhorn_location", Some(0.5)).unwrap();
    let csv = tabulate(&s, 1.0, 2).unwrap();
    assert_eq!(csv, format!("t,value\n0,0.5\n1,{}\n", 0.5 * (-1.0f64).exp()));

    assert!(flow_by_name("sinkhorn_scale", Some(1.5)).is_err());
    assert!(flow_by_name("nonsense", None).is_err());
}
