//! The acceptance suite: twelve criteria, each backed by one or more reports
//! written below a suite directory. `verify` runs the suite twice and compares
//! the manifests as the determinism criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use sinkflow::diffusion::noise;
use sinkflow::grid::sup_norm;
use sinkflow::measures::discretize;
use sinkflow::pma::{
    brenier_potential, continuity_residual, dual_pma_residual, step, PmaConfig, PmaProblem, PmaState,
};
use sinkflow::sinkhorn::{coupling, marginal_mass, u_operator, v_operator, SinkhornState};
use sinkflow::transport::{change_of_measure_residual, log_det_hessian_gradient_residual};
use sinkflow::{ConvexPotential, DensitySpec, Grid, GridDensity};

use crate::config::{hex_digest, DensityConfig, Experiment, ExperimentConfig, PotentialConfig, ProblemConfig};
use crate::experiments;
use crate::manifest::{now, RunManifest};
use crate::report::{Report, Table, Verdict};
use crate::{write_file, Result};

pub const SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    /// Failing verdicts, or the headline values when everything passed.
    pub detail: String,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] criterion {:>2}: {} | {}", self.id, self.title, self.detail)
    }
}

pub struct SuiteRun {
    pub criteria: Vec<CriterionResult>,
    pub manifest: RunManifest,
}

fn gaussian(m: f64, v: f64) -> DensityConfig {
    DensityConfig::gaussian(m, v)
}

fn problem(mu: DensityConfig, nu: DensityConfig) -> ProblemConfig {
    ProblemConfig {
        mu,
        nu,
        rho0: None,
        u0: PotentialConfig::Brenier,
    }
}

fn location() -> ProblemConfig {
    problem(gaussian(0.0, 1.0), gaussian(0.5, 1.0))
}

fn scale() -> ProblemConfig {
    problem(gaussian(0.0, 1.0), gaussian(0.0, 0.25))
}

fn config(experiment: Experiment, problem: ProblemConfig, horizon: f64, stride: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(experiment);
    c.problem = problem;
    c.numerics.half_width = 8.0;
    c.numerics.n = 512;
    c.numerics.dt = 1e-3;
    c.numerics.horizon = horizon;
    c.numerics.seed = SEED;
    c.output.snapshot_stride = stride;
    c
}

/// The configured experiments of the suite: `(criterion, directory, config)`.
pub fn suite_configs() -> Vec<(u32, &'static str, ExperimentConfig)> {
    let mut out = Vec::new();
    out.push((1, "c01_location", config(Experiment::PmaRun, location(), 1.0, 500)));
    out.push((2, "c02_scale", config(Experiment::PmaRun, scale(), 2.0, 500)));

    let mut c = config(Experiment::EpsLimit, location(), 1.0, 100);
    c.numerics.eps_list = vec![0.2, 0.1, 0.05];
    out.push((3, "c03_eps_limit", c));

    let mut p = location();
    p.u0 = PotentialConfig::Quadratic { a: 1.0, b: 0.0 };
    let mut c = config(Experiment::LaplaceEstimate, p, 1.0, 100);
    c.numerics.eps_list = vec![0.2, 0.1, 0.05, 0.025];
    out.push((5, "c05_laplace", c));

    out.push((6, "c06_metric_derivative", config(Experiment::MetricDerivative, location(), 0.5, 100)));
    out.push((7, "c07_kl_decay", config(Experiment::KlDecay, location(), 1.0, 100)));

    let mut c = config(Experiment::DiffusionRun, location(), 1.0, 100);
    c.numerics.particles = 100_000;
    out.push((9, "c09_diffusion", c));
    let mut c = config(Experiment::MarkovChainRun, location(), 1.0, 100);
    c.numerics.eps_list = vec![0.1];
    c.numerics.particles = 100_000;
    out.push((9, "c09_markov_chain", c));

    out.push((10, "c10_c11_closed_forms", config(Experiment::GaussianClosedForm, location(), 1.0, 100)));
    out
}

const TITLES: [&str; 12] = [
    "Gaussian location oracle",
    "Gaussian scale oracle and Fokker-Planck deficit",
    "eps-scaling limit",
    "Sinkhorn operator properties",
    "Laplace estimate slope",
    "LOT metric derivative",
    "KL decay envelope",
    "PDE identity residuals",
    "diffusion marginals",
    "Euclidean mirror ODEs",
    "mirror-flow examples",
    "determinism of verify",
];

/// Verdicts of a report that belong to a criterion. The closed-form report
/// serves two criteria: the ODE checks and the mirror-flow checks.
fn belongs(id: u32, v: &Verdict) -> bool {
    match id {
        10 => v.name.starts_with("euclid_"),
        11 => v.name.starts_with("mirror_"),
        _ => true,
    }
}

fn summarize(id: u32, reports: &[&Report]) -> CriterionResult {
    let verdicts: Vec<&Verdict> = reports
        .iter()
        .flat_map(|r| r.verdicts.iter())
        .filter(|v| belongs(id, v))
        .collect();
    let passed = !verdicts.is_empty() && verdicts.iter().all(|v| v.passed);
    let shown: Vec<String> = verdicts
        .iter()
        .filter(|v| passed || !v.passed)
        .map(|v| format!("{}={:.4e}", v.name, v.value))
        .collect();
    CriterionResult {
        id,
        title: TITLES[id as usize - 1],
        passed,
        detail: shown.join(", "),
    }
}

fn write_report(dir: &Path, name: &str, r: &Report, files: &mut BTreeMap<String, String>) -> Result<()> {
    for (file, bytes) in [("report.json", r.to_json()), ("report.csv", r.table.to_csv())] {
        let rel = format!("{name}/{file}");
        write_file(&dir.join(&rel), bytes.as_bytes())?;
        files.insert(rel, hex_digest(bytes.as_bytes()));
    }
    Ok(())
}

/// Runs criteria 1 to 11 into `dir` and writes a suite manifest covering
/// every output file.
pub fn run_suite(dir: &Path) -> Result<SuiteRun> {
    let started = now();
    let mut files = BTreeMap::new();
    let mut hashes = String::new();
    let mut reports: BTreeMap<u32, Vec<Report>> = BTreeMap::new();
    for (id, name, cfg) in suite_configs() {
        let (report, m) = experiments::run(&cfg, &dir.join(name))?;
        hashes.push_str(&m.config_hash);
        for (k, v) in m.checksums {
            files.insert(format!("{name}/{k}"), v);
        }
        reports.entry(id).or_default().push(report);
    }
    let r4 = operator_properties(SEED)?;
    write_report(dir, "c04_operators", &r4, &mut files)?;
    let r8 = pde_identities()?;
    write_report(dir, "c08_pde_identities", &r8, &mut files)?;

    let mut criteria = Vec::new();
    for id in 1..=11u32 {
        let rs: Vec<&Report> = match id {
            4 => vec![&r4],
            8 => vec![&r8],
            11 => reports[&10].iter().collect(),
            _ => reports[&id].iter().collect(),
        };
        criteria.push(summarize(id, &rs));
    }
    let manifest = RunManifest {
        config_hash: hex_digest(hashes.as_bytes()),
        started,
        finished: now(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        checksums: files,
    };
    manifest.write(dir)?;
    Ok(SuiteRun { criteria, manifest })
}

/// Runs the suite twice (into `root/run_a` and `root/run_b`) and adds the
/// determinism criterion: identical checksums for every file.
pub fn verify(root: &Path) -> Result<Vec<CriterionResult>> {
    let a = run_suite(&root.join("run_a"))?;
    let b = run_suite(&root.join("run_b"))?;
    let diff = a.manifest.differences(&b.manifest);
    let same_config = a.manifest.config_hash == b.manifest.config_hash;
    let mut out = a.criteria;
    out.push(CriterionResult {
        id: 12,
        title: TITLES[11],
        passed: diff.is_empty() && same_config && !a.manifest.checksums.is_empty(),
        detail: if diff.is_empty() {
            format!("{} files with identical checksums", a.manifest.checksums.len())
        } else {
            format!("differing files: {}", diff.join(" "))
        },
    });
    Ok(out)
}

/// Contraction of both operators, normalization and the coupling's
/// Y-marginal on 100 random cases each.
pub fn operator_properties(seed: u64) -> Result<Report> {
    let g = Grid::symmetric(8.0, 256)?;
    let mu = discretize(&DensitySpec::gaussian(0.0, 1.0)?, &g)?;
    let nu = discretize(&DensitySpec::gaussian(0.5, 1.0)?, &g)?;
    let x = g.nodes();
    let draw = |trial: u64, lane: u64| noise::uniform(seed, trial, 0, lane);
    // x^2/2 plus five Fourier modes with coefficients in [-1, 1).
    let potential = |trial: u64, lane0: u64| -> Vec<f64> {
        x.iter()
            .map(|&x| {
                0.5 * x * x
                    + (0..5u64)
                        .map(|k| (2.0 * draw(trial, lane0 + k) - 1.0) * ((k as f64 + 1.0) * 0.4 * x).sin())
                        .sum::<f64>()
            })
            .collect()
    };
    let gap = |a: &[f64], b: &[f64]| sup_norm(a.iter().zip(b).map(|(p, q)| p - q));

    let mut table = Table::new(&["trial", "eps", "v_ratio", "u_ratio", "normalization_error", "y_marginal_error"]);
    for trial in 0..100u64 {
        let eps = 0.05 + 0.95 * draw(trial, 10);
        let (p1, p2) = (potential(trial, 0), potential(trial, 5));
        let d = gap(&p1, &p2);
        let v_ratio = gap(&v_operator(&p1, &mu, &g, eps)?, &v_operator(&p2, &mu, &g, eps)?) / d;
        let u_ratio = gap(&u_operator(&p1, &nu, &g, eps)?, &u_operator(&p2, &nu, &g, eps)?) / d;
        let norm = (marginal_mass(&p1, &mu, &nu, eps)? - 1.0).abs();

        let theta = 2.0 * draw(trial, 11) - 1.0;
        let target = discretize(&DensitySpec::gaussian(theta, 1.0)?, &g)?;
        let mut sk = SinkhornState::new(p1.clone(), mu.clone(), target.clone(), eps.max(0.1), target.clone())?;
        for _ in 0..(draw(trial, 12) * 5.0) as usize {
            sk = sk.s_step()?;
        }
        let ymarg = gap(&coupling(&sk).y_marginal(), target.values());
        table.push(vec![trial as f64, eps, v_ratio, u_ratio, norm, ymarg]);
    }
    let max = |c: &str| table.column(c).unwrap().into_iter().fold(0.0, f64::max);
    let (v, u, n, y) = (max("v_ratio"), max("u_ratio"), max("normalization_error"), max("y_marginal_error"));
    let mut r = Report::new("operator_properties", &format!("seed-{seed}"), table);
    r.verdict(Verdict::at_most("max_v_contraction_ratio", v, 1.0 + 1e-9));
    r.verdict(Verdict::at_most("max_u_contraction_ratio", u, 1.0 + 1e-9));
    r.verdict(Verdict::at_most("max_normalization_error", n, 1e-8));
    r.verdict(Verdict::at_most("max_y_marginal_error", y, 1e-5));
    Ok(r)
}

fn pma_start(f: (f64, f64), g: (f64, f64), n: usize) -> Result<PmaState> {
    let grid = Grid::symmetric(8.0, n)?;
    let (f, g) = (DensitySpec::gaussian(f.0, f.1)?, DensitySpec::gaussian(g.0, g.1)?);
    let mu = discretize(&f, &grid)?;
    let nu = discretize(&g, &grid)?;
    let cfg = PmaConfig::default();
    let u0 = brenier_potential(&nu, &nu, cfg.a_floor)?;
    Ok(PmaState::new(Arc::new(PmaProblem::new(f, g, mu, nu, cfg)), u0)?)
}

fn tanh_mirror(grid: Grid) -> Result<ConvexPotential> {
    Ok(ConvexPotential::from_fn(
        grid,
        |x: f64| 0.5 * x * x + 0.3 * x.cosh().ln(),
        |x: f64| x + 0.3 * x.tanh(),
        |x: f64| 1.0 + 0.3 / x.cosh().powi(2),
        1e-3,
    )?)
}

fn cosh_potential(n: usize) -> Result<ConvexPotential> {
    Ok(ConvexPotential::from_fn(Grid::symmetric(2.0, n)?, f64::cosh, f64::sinh, f64::cosh, 1e-3)?)
}

fn com_residual(n: usize, identity: bool) -> Result<f64> {
    let g = Grid::symmetric(6.0, n)?;
    let src: GridDensity = discretize(&DensitySpec::gaussian(0.2, 0.5)?, &g)?;
    let phi = if identity {
        ConvexPotential::quadratic(g, 1.0, 0.0)?
    } else {
        tanh_mirror(g)?
    };
    Ok(change_of_measure_residual(&src, &phi)?)
}

/// Refinement ratios and stationary values of the four PDE residuals.
///
/// Rows: `identity` (1 dual PMA, 2 continuity, 3 log-det tensor, 4 change of
/// measure), `problem` (1 location, 2 scale, 0 non-Gaussian), residuals on
/// the coarse and fine levels and their ratio.
pub fn pde_identities() -> Result<Report> {
    let mut table = Table::new(&["identity", "problem", "coarse", "fine", "ratio"]);
    let mut verdicts = Vec::new();
    // Coarse (n, dt) = (1024, 1e-3), fine (2048, 5e-4), both at t = 0.2.
    for (p, g) in [(1.0, (0.5, 1.0)), (2.0, (0.0, 0.25))] {
        let mut res = [[0.0; 2]; 2];
        for (level, (n, dt)) in [(1024usize, 1e-3), (2048, 5e-4)].into_iter().enumerate() {
            let s = pma_start((0.0, 1.0), g, n)?.advance_to(0.2, dt)?;
            res[0][level] = dual_pma_residual(&s, dt)?;
            res[1][level] = continuity_residual(&s, &step(&s, dt)?)?;
        }
        for (k, name) in ["dual_pma", "continuity"].iter().enumerate() {
            let ratio = res[k][0] / res[k][1];
            table.push(vec![k as f64 + 1.0, p, res[k][0], res[k][1], ratio]);
            let label = if p == 1.0 { "location" } else { "scale" };
            verdicts.push(Verdict::at_least(format!("{name}_{label}_refinement_ratio"), ratio, 1.8));
        }
    }
    let (tc, tf) = (
        log_det_hessian_gradient_residual(&cosh_potential(256)?),
        log_det_hessian_gradient_residual(&cosh_potential(512)?),
    );
    table.push(vec![3.0, 0.0, tc, tf, tc / tf]);
    verdicts.push(Verdict::at_least("tensor_refinement_ratio", tc / tf, 1.8));
    let (cc, cf) = (com_residual(256, false)?, com_residual(512, false)?);
    table.push(vec![4.0, 0.0, cc, cf, cc / cf]);
    verdicts.push(Verdict::at_least("change_of_measure_refinement_ratio", cc / cf, 1.8));

    // Stationary point: e^{-f} = e^{-g} = rho0 and the identity mirror.
    let s = pma_start((0.0, 1.0), (0.0, 1.0), 256)?;
    let quad = ConvexPotential::quadratic(Grid::symmetric(2.0, 64)?, 1.0, 0.0)?;
    let stationary = [
        ("dual_pma_stationary", dual_pma_residual(&s, 1e-3)?),
        ("continuity_stationary", continuity_residual(&s, &step(&s, 1e-3)?)?),
        ("tensor_stationary", log_det_hessian_gradient_residual(&quad)),
        ("change_of_measure_stationary", com_residual(256, true)?),
    ];
    let mut r = Report::new("pde_identities", "fixed", table);
    for v in verdicts {
        r.verdict(v);
    }
    for (name, value) in stationary {
        r.verdict(Verdict::at_most(name, value, 1e-3));
    }
    Ok(r)
}
