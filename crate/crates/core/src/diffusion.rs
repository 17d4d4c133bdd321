//! Particle simulators for the Sinkhorn diffusion, its dual, the
//! mirror-Langevin diffusion and the Sinkhorn Markov chain.
//!
//! Noise is counter-based: the draw for particle `i` at step `k` depends only
//! on `(seed, k, i)`, so results do not depend on the particle count or on how
//! the work is split across threads.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{derivative, Grid};
use crate::interp::{linear_nonuniform, Cubic};
use crate::measures::{sample, DensitySpec, GridDensity};
use crate::pma::PmaState;
use crate::sinkhorn::SinkhornState;
use crate::transport::{legendre_transform, ConvexPotential};

pub mod noise {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    use rand_xoshiro::Xoshiro256PlusPlus;

    /// SplitMix64 finalizer.
    #[inline]
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    #[inline]
    fn stream(seed: u64, step: u64, particle: u64, lane: u64) -> Xoshiro256PlusPlus {
        let key = mix(mix(mix(mix(seed) ^ step) ^ particle) ^ lane);
        Xoshiro256PlusPlus::seed_from_u64(key)
    }

    /// Standard normal draw for `(seed, step, particle)`.
    #[inline]
    pub fn normal(seed: u64, step: u64, particle: u64) -> f64 {
        stream(seed, step, particle, 0).sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)` for `(seed, step, particle, lane)`.
    #[inline]
    pub fn uniform(seed: u64, step: u64, particle: u64, lane: u64) -> f64 {
        stream(seed, step, particle, 1 + lane).random::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub t: f64,
    pub seed: u64,
    pub step_count: u64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, seed: u64) -> Self {
        ParticleEnsemble {
            positions,
            t: 0.0,
            seed,
            step_count: 0,
        }
    }

    /// `count` inverse-CDF samples of `d`.
    pub fn from_density(d: &GridDensity, count: usize, seed: u64) -> Self {
        Self::new(sample(d, count, seed ^ 0x5EED_0000), seed)
    }

    /// `count` particles on the nodes of `d`'s grid, node `i` drawn with
    /// probability equal to its trapezoid mass.
    pub fn on_nodes(d: &GridDensity, count: usize, seed: u64) -> Self {
        let g = *d.grid();
        let cum = node_cdf(d);
        let positions = (0..count)
            .map(|p| {
                let u = noise::uniform(seed, u64::MAX, p as u64, 0);
                g.node(draw(&cum, u))
            })
            .collect();
        Self::new(positions, seed)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.positions.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (self.len() as f64 - 1.0)
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.len() as f64).sqrt()
    }

    /// Writes `particle_id,x` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "particle_id,x")?;
        for (i, x) in self.positions.iter().enumerate() {
            writeln!(w, "{i},{x:.16e}")?;
        }
        Ok(())
    }
}

/// Normalized cumulative node masses `w_i rho_i`.
pub fn node_cdf(d: &GridDensity) -> Vec<f64> {
    let g = d.grid();
    let mut acc = 0.0;
    let mut cum: Vec<f64> = d
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            acc += g.weight(i) * v;
            acc
        })
        .collect();
    let total = acc;
    cum.iter_mut().for_each(|c| *c /= total);
    cum
}

#[inline]
fn draw(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Drift `b` and diffusion `sigma` of `dX = b dt + sigma dB`, tabulated at
/// increasing abscissae. On a uniform grid they are interpolated by cubic
/// Hermite splines, otherwise linearly.
#[derive(Debug, Clone)]
pub struct SdeCoefficients {
    nodes: Vec<f64>,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    cubic: Option<(Cubic, Cubic)>,
}

impl SdeCoefficients {
    pub fn on_grid(grid: Grid, drift: Vec<f64>, diffusion: Vec<f64>) -> Self {
        let cubic = Some((Cubic::new(grid, drift.clone()), Cubic::new(grid, diffusion.clone())));
        SdeCoefficients {
            nodes: grid.nodes(),
            drift,
            diffusion,
            cubic,
        }
    }

    pub fn on_nodes(nodes: Vec<f64>, drift: Vec<f64>, diffusion: Vec<f64>) -> Self {
        SdeCoefficients {
            nodes,
            drift,
            diffusion,
            cubic: None,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match &self.cubic {
            Some((b, s)) => (b.eval(x), s.eval(x).max(0.0)),
            None => (
                linear_nonuniform(&self.nodes, &self.drift, x),
                linear_nonuniform(&self.nodes, &self.diffusion, x).max(0.0),
            ),
        }
    }
}

/// Coefficients of the Sinkhorn diffusion at the state's time:
/// `b = -f'/u'' - g'(u') + h'/u''`, `sigma = sqrt(2/u'')`.
pub fn sinkhorn_sde_coefficients(pma: &PmaState) -> SdeCoefficients {
    let g = *pma.grid();
    let p = pma.problem();
    let dh = derivative(&pma.h, g.spacing());
    let x = g.nodes();
    let (du, d2u) = (pma.u.du(), pma.u.d2u());
    let drift = (0..g.len())
        .map(|i| -p.f.grad(x[i]) / d2u[i] - p.g.grad(du[i]) + dh[i] / d2u[i])
        .collect();
    let diffusion = d2u.iter().map(|a| (2.0 / a).sqrt()).collect();
    SdeCoefficients::on_grid(g, drift, diffusion)
}

/// Coefficients of the dual diffusion, `b = -h'(w'(y))`,
/// `sigma = sqrt(2 / w''(y))`, tabulated at `y_i = u'(x_i)` where
/// `w'(y_i) = x_i` and `w''(y_i) = 1 / u''(x_i)`.
pub fn dual_sde_coefficients(pma: &PmaState) -> SdeCoefficients {
    let g = *pma.grid();
    let dh = derivative(&pma.h, g.spacing());
    let drift = dh.iter().map(|d| -d).collect();
    let diffusion = pma.u.d2u().iter().map(|a| (2.0 * a).sqrt()).collect();
    SdeCoefficients::on_nodes(pma.u.du().to_vec(), drift, diffusion)
}

/// One Euler-Maruyama step with the given coefficients. `noise_scale`
/// multiplies the Brownian increment (0 gives the deterministic flow).
/// Particles leaving `[lower - 1, upper + 1]` of `domain` are an error.
pub fn euler_maruyama_step(
    e: &ParticleEnsemble,
    coeffs: &SdeCoefficients,
    dt: f64,
    noise_scale: f64,
    domain: &Grid,
    exec: Execution,
) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt = {dt} must be positive")));
    }
    let (lo, hi) = (domain.lower() - 1.0, domain.upper() + 1.0);
    let sq = dt.sqrt();
    let (seed, k) = (e.seed, e.step_count);
    let positions = exec.try_map(e.len(), |i| {
        let x = e.positions[i];
        let (b, s) = coeffs.eval(x);
        let xi = noise::normal(seed, k, i as u64);
        let next = x + b * dt + noise_scale * s * sq * xi;
        if next.is_finite() && next >= lo && next <= hi {
            Ok(next)
        } else {
            Err(Error::ParticleEscape { index: i, x: next })
        }
    })?;
    Ok(ParticleEnsemble {
        positions,
        t: e.t + dt,
        seed,
        step_count: k + 1,
    })
}

fn check_time(e: &ParticleEnsemble, pma: &PmaState) -> Result<()> {
    if (e.t - pma.t).abs() > 1e-9 * (1.0 + e.t.abs()) {
        return Err(Error::Domain(format!(
            "ensemble at t = {} but flow state at t = {}",
            e.t, pma.t
        )));
    }
    Ok(())
}

/// One step of the Sinkhorn diffusion driven by the flow state `pma`.
pub fn sinkhorn_sde_step(e: &ParticleEnsemble, pma: &PmaState, dt: f64) -> Result<ParticleEnsemble> {
    check_time(e, pma)?;
    let c = sinkhorn_sde_coefficients(pma);
    euler_maruyama_step(e, &c, dt, 1.0, pma.grid(), Execution::default())
}

/// One step of the dual diffusion driven by the flow state `pma`.
pub fn dual_sde_step(e: &ParticleEnsemble, pma: &PmaState, dt: f64) -> Result<ParticleEnsemble> {
    check_time(e, pma)?;
    let c = dual_sde_coefficients(pma);
    euler_maruyama_step(e, &c, dt, 1.0, pma.problem().nu.grid(), Execution::default())
}

/// One step of the mirror-Langevin diffusion with frozen mirror `u`:
/// `b = -g'(u'(x))`, `sigma = sqrt(2/u''(x))`. With `u = x^2/2` (given in
/// closed form) this is exactly the classical Langevin step.
pub fn mirror_langevin_step(
    e: &ParticleEnsemble,
    u: &ConvexPotential,
    target: &DensitySpec,
    dt: f64,
) -> Result<ParticleEnsemble> {
    let du = if u.is_analytic() {
        None
    } else {
        Some(u.du_interpolant())
    };
    let eval_du = |x: f64| match &du {
        Some(c) => c.eval(x),
        None => u.eval_du(x),
    };
    let (lo, hi) = (u.grid().lower() - 1.0, u.grid().upper() + 1.0);
    let sq = dt.sqrt();
    let (seed, k) = (e.seed, e.step_count);
    let positions = Execution::default().try_map(e.len(), |i| {
        let x = e.positions[i];
        let drift = -target.grad(eval_du(x));
        let sigma = (2.0 / u.eval_d2u(x)).sqrt();
        let xi = noise::normal(seed, k, i as u64);
        let next = x + drift * dt + sigma * sq * xi;
        if next.is_finite() && next >= lo && next <= hi {
            Ok(next)
        } else {
            Err(Error::ParticleEscape { index: i, x: next })
        }
    })?;
    Ok(ParticleEnsemble {
        positions,
        t: e.t + dt,
        seed,
        step_count: k + 1,
    })
}

/// Row-wise cumulative distributions from log-weights `logw(row, col)`.
fn conditional_tables(rows: usize, cols: usize, logw: impl Fn(usize, usize) -> f64 + Sync) -> Vec<Vec<f64>> {
    Execution::default().map(rows, |r| {
        let l: Vec<f64> = (0..cols).map(|c| logw(r, c)).collect();
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cum: Vec<f64> = l
            .iter()
            .map(|v| {
                acc += (v - m).exp();
                acc
            })
            .collect();
        cum.iter_mut().for_each(|c| *c /= acc);
        cum
    })
}

/// One transition of the Sinkhorn Markov chain at iteration `sk.k`.
///
/// Particles sit on grid nodes. Each draws `Y` from the discrete conditional
/// of `gamma_k` given its node (at `k = 0` simply `Y ~ nu`), then a new node
/// from the conditional of `gamma_{k+1}` given `Y`.
pub fn markov_chain_step(e: &ParticleEnsemble, sk: &SinkhornState) -> Result<ParticleEnsemble> {
    if e.step_count != sk.k as u64 {
        return Err(Error::Domain(format!(
            "ensemble at step {} but Sinkhorn state at k = {}",
            e.step_count, sk.k
        )));
    }
    let xg = *sk.x_grid();
    let yg = *sk.y_grid();
    let (nx, ny) = (xg.len(), yg.len());
    let eps = sk.eps;
    let lnu: Vec<f64> = sk
        .nu
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| (yg.weight(j) * v).ln())
        .collect();
    let lmu: Vec<f64> = sk
        .mu
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| (xg.weight(i) * v).ln())
        .collect();
    let y_given_x: Vec<Vec<f64>> = match &sk.v_prev {
        Some(vp) => conditional_tables(nx, ny, |i, j| {
            (xg.node(i) * yg.node(j) - vp[j]) / eps + lnu[j]
        }),
        None => conditional_tables(1, ny, |_, j| lnu[j]),
    };
    let x_given_y = conditional_tables(ny, nx, |j, i| {
        (xg.node(i) * yg.node(j) - sk.u[i]) / eps + lmu[i]
    });
    let (seed, k) = (e.seed, e.step_count);
    let positions = Execution::default().map(e.len(), |p| {
        let i = xg.nearest(e.positions[p]);
        let row = if y_given_x.len() == 1 { &y_given_x[0] } else { &y_given_x[i] };
        let j = draw(row, noise::uniform(seed, k, p as u64, 0));
        let i2 = draw(&x_given_y[j], noise::uniform(seed, k, p as u64, 1));
        xg.node(i2)
    });
    Ok(ParticleEnsemble {
        positions,
        t: e.t + eps,
        seed,
        step_count: k + 1,
    })
}

/// Gaussian kernel density estimate on `grid`.
///
/// Particles are first spread onto the nodes by linear binning (which keeps
/// the mean), then the node masses are convolved with the kernel in log
/// space. Values that underflow are clamped to the smallest positive double so
/// the result is a valid density.
pub fn empirical_density(e: &ParticleEnsemble, grid: &Grid, bandwidth: f64) -> Result<GridDensity> {
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth {bandwidth} must be positive")));
    }
    if e.is_empty() {
        return Err(Error::Domain("empty ensemble".into()));
    }
    let n = grid.len();
    let mut counts = vec![0.0; n];
    for &x in &e.positions {
        let (i, s) = grid.locate(x);
        let s = s.clamp(0.0, 1.0);
        counts[i] += 1.0 - s;
        counts[i + 1] += s;
    }
    let occupied: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0.0)
        .map(|(i, c)| (grid.node(i), c.ln()))
        .collect();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let logs = Execution::default().map(n, |j| {
        let y = grid.node(j);
        let terms: Vec<f64> = occupied
            .iter()
            .map(|(x, lc)| lc - (y - x) * (y - x) * inv)
            .collect();
        crate::grid::logsumexp(&terms)
    });
    GridDensity::from_log(*grid, &logs)
}

/// Kolmogorov-Smirnov distance between samples and a grid density.
pub fn ks_distance(samples: &[f64], d: &GridDensity) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let p = s.len() as f64;
    s.iter().enumerate().fold(0.0, |m, (i, &x)| {
        let f = d.cdf(x);
        m.max((f - i as f64 / p).abs()).max(((i + 1) as f64 / p - f).abs())
    })
}

/// Kolmogorov-Smirnov distance between particles on the nodes of `d`'s grid
/// and the node masses of `d`.
pub fn ks_distance_nodes(positions: &[f64], d: &GridDensity) -> f64 {
    let g = d.grid();
    let mut counts = vec![0usize; g.len()];
    for &x in positions {
        counts[g.nearest(x)] += 1;
    }
    let cum = node_cdf(d);
    let p = positions.len() as f64;
    let mut acc = 0usize;
    let mut worst: f64 = 0.0;
    for (i, c) in counts.iter().enumerate() {
        acc += c;
        worst = worst.max((acc as f64 / p - cum[i]).abs());
    }
    worst
}

/// Test function for generator checks, with its first two derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dphi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d2phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl TestFunction {
    /// `(1 - ((y - c)/r)^2)^4` on `|y - c| < r`, zero outside.
    pub fn bump(center: f64, radius: f64) -> Self {
        let s = move |y: f64| (y - center) / radius;
        TestFunction {
            phi: Arc::new(move |y| {
                let z = s(y);
                if z.abs() < 1.0 {
                    (1.0 - z * z).powi(4)
                } else {
                    0.0
                }
            }),
            dphi: Arc::new(move |y| {
                let z = s(y);
                if z.abs() < 1.0 {
                    -8.0 * z * (1.0 - z * z).powi(3) / radius
                } else {
                    0.0
                }
            }),
            d2phi: Arc::new(move |y| {
                let z = s(y);
                if z.abs() < 1.0 {
                    let q = 1.0 - z * z;
                    (-8.0 * q.powi(3) + 48.0 * z * z * q * q) / (radius * radius)
                } else {
                    0.0
                }
            }),
        }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction {
            phi: Arc::new(move |_| c),
            dphi: Arc::new(|_| 0.0),
            d2phi: Arc::new(|_| 0.0),
        }
    }
}

/// `|∫ L phi e^{-g} dy|` on `y_grid`, where the dual generator is
/// `L phi = e^{g} (e^{-g} phi' / w'')'`, expanded as
/// `phi''/w'' + phi' ((1/w'')' - g'/w'')` with `(1/w'')'` by central
/// differences; `w` is the conjugate of `u`. Vanishes up to O(h^2) because
/// `e^{-g}` is stationary for the dual diffusion.
pub fn generator_stationarity_residual(
    u: &ConvexPotential,
    target: &DensitySpec,
    test_fn: &TestFunction,
    y_grid: &Grid,
) -> Result<f64> {
    let w = legendre_transform(u, y_grid)?;
    let inv_w2: Vec<f64> = w.d2u().iter().map(|a| 1.0 / a).collect();
    let d_inv = derivative(&inv_w2, y_grid.spacing());
    let integrand: Vec<f64> = (0..y_grid.len())
        .map(|j| {
            let y = y_grid.node(j);
            let (d1, d2) = ((test_fn.dphi)(y), (test_fn.d2phi)(y));
            let l = d2 * inv_w2[j] + d1 * (d_inv[j] - target.grad(y) * inv_w2[j]);
            l * target.density(y)
        })
        .collect();
    Ok(y_grid.integrate(&integrand).abs())
}
