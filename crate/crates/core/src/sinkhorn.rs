//! Log-domain Sinkhorn operators and the two-step iteration on potentials.
//!
//! With `mu = e^{-f}` on the X grid and `nu = e^{-g}` on the Y grid,
//!
//! ```text
//! V[u](y) = eps log ∫ exp((x y - u(x)) / eps) mu(x) dx
//! U[v](x) = eps log ∫ exp((x y - v(y)) / eps) nu(y) dy
//! S = U ∘ V,   rho[u] = exp((S[u] - u) / eps) mu
//! ```
//!
//! Integrals are trapezoid sums with the weights folded into the log-sum-exp,
//! so normalization of `rho[u]` is exact for the discrete measures.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{sup_norm, Grid};
use crate::measures::{DensitySpec, GridDensity};
use crate::transport::{legendre_transform, ConvexPotential};

fn log_weights(d: &GridDensity) -> Vec<f64> {
    let g = d.grid();
    d.values()
        .iter()
        .enumerate()
        .map(|(i, v)| (g.weight(i) * v).ln())
        .collect()
}

/// `out(t_j) = eps * log Σ_i exp((s_i t_j - phi_i) / eps + lw_i)`.
fn soft_transform(
    exec: Execution,
    phi: &[f64],
    src: &GridDensity,
    dst: &Grid,
    eps: f64,
    what: &'static str,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps = {eps} must be positive")));
    }
    if phi.len() != src.grid().len() {
        return Err(Error::GridMismatch(format!("{what}: potential length")));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(what));
    }
    let lw = log_weights(src);
    let s = src.grid().nodes();
    let inv = 1.0 / eps;
    let a: Vec<f64> = phi.iter().zip(&lw).map(|(p, l)| l - p * inv).collect();
    let out = exec.map(dst.len(), |j| {
        let t = dst.node(j) * inv;
        let mut m = f64::NEG_INFINITY;
        for (si, ai) in s.iter().zip(&a) {
            m = m.max(si * t + ai);
        }
        let mut acc = 0.0;
        for (si, ai) in s.iter().zip(&a) {
            acc += (si * t + ai - m).exp();
        }
        eps * (m + acc.ln())
    });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(what));
    }
    Ok(out)
}

/// `V[u]` on the nodes of `y`.
pub fn v_operator(u: &[f64], mu: &GridDensity, y: &Grid, eps: f64) -> Result<Vec<f64>> {
    v_operator_with(Execution::default(), u, mu, y, eps)
}

pub fn v_operator_with(
    exec: Execution,
    u: &[f64],
    mu: &GridDensity,
    y: &Grid,
    eps: f64,
) -> Result<Vec<f64>> {
    soft_transform(exec, u, mu, y, eps, "V operator")
}

/// `U[v]` on the nodes of `x`.
pub fn u_operator(v: &[f64], nu: &GridDensity, x: &Grid, eps: f64) -> Result<Vec<f64>> {
    u_operator_with(Execution::default(), v, nu, x, eps)
}

pub fn u_operator_with(
    exec: Execution,
    v: &[f64],
    nu: &GridDensity,
    x: &Grid,
    eps: f64,
) -> Result<Vec<f64>> {
    soft_transform(exec, v, nu, x, eps, "U operator")
}

fn gauge(mut u: Vec<f64>) -> Vec<f64> {
    let c = u[u.len() / 2];
    u.iter_mut().for_each(|v| *v -= c);
    u
}

/// Iterate `k` of the Sinkhorn recursion.
///
/// `u` is `u_k` (gauge-fixed to vanish at the middle node), `v = V[u_k]`,
/// `rho` is the X-marginal `rho_k` and `v_prev = V[u_{k-1}]` (absent at
/// `k = 0`).
#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub eps: f64,
    pub k: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub v_prev: Option<Vec<f64>>,
    pub rho: GridDensity,
    pub mu: GridDensity,
    pub nu: GridDensity,
    exec: Execution,
}

impl SinkhornState {
    pub fn new(u0: Vec<f64>, mu: GridDensity, nu: GridDensity, eps: f64, rho0: GridDensity) -> Result<Self> {
        mu.grid().ensure_matches(rho0.grid())?;
        let exec = Execution::default();
        let u = gauge(u0);
        let v = v_operator_with(exec, &u, &mu, nu.grid(), eps)?;
        Ok(SinkhornState {
            eps,
            k: 0,
            u,
            v,
            v_prev: None,
            rho: rho0,
            mu,
            nu,
            exec,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn x_grid(&self) -> &Grid {
        self.mu.grid()
    }

    pub fn y_grid(&self) -> &Grid {
        self.nu.grid()
    }

    /// One application of `S`: `u_{k+1} = U[V[u_k]]` and
    /// `rho_{k+1} = exp((u_{k+1} - u_k) / eps) mu`.
    pub fn s_step(&self) -> Result<SinkhornState> {
        let next = u_operator_with(self.exec, &self.v, &self.nu, self.x_grid(), self.eps)?;
        let logs: Vec<f64> = next
            .iter()
            .zip(&self.u)
            .zip(self.mu.values())
            .map(|((a, b), m)| (a - b) / self.eps + m.ln())
            .collect();
        let rho = GridDensity::from_log(*self.x_grid(), &logs)?;
        let u = gauge(next);
        let v = v_operator_with(self.exec, &u, &self.mu, self.y_grid(), self.eps)?;
        Ok(SinkhornState {
            eps: self.eps,
            k: self.k + 1,
            u,
            v,
            v_prev: Some(self.v.clone()),
            rho,
            mu: self.mu.clone(),
            nu: self.nu.clone(),
            exec: self.exec,
        })
    }

    /// `u` shifted by a constant (for gauge tests).
    pub fn shifted(&self, c: f64) -> SinkhornState {
        let mut s = self.clone();
        s.u.iter_mut().for_each(|v| *v += c);
        s.v.iter_mut().for_each(|v| *v -= c);
        s
    }

    /// Writes `x,u,rho` CSV.
    pub fn write_potential_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,u,rho")?;
        for (i, x) in self.x_grid().nodes().iter().enumerate() {
            writeln!(w, "{x:.16e},{:.16e},{:.16e}", self.u[i], self.rho.values()[i])?;
        }
        Ok(())
    }

    /// Writes `y,v` CSV.
    pub fn write_dual_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "y,v")?;
        for (j, y) in self.y_grid().nodes().iter().enumerate() {
            writeln!(w, "{y:.16e},{:.16e}", self.v[j])?;
        }
        Ok(())
    }
}

/// `∫ exp((S[u] - u) / eps) mu` before any renormalization (it is 1 for every
/// `u`, up to roundoff).
pub fn marginal_mass(u: &[f64], mu: &GridDensity, nu: &GridDensity, eps: f64) -> Result<f64> {
    let v = v_operator(u, mu, nu.grid(), eps)?;
    let s = u_operator(&v, nu, mu.grid(), eps)?;
    let vals: Vec<f64> = s
        .iter()
        .zip(u)
        .zip(mu.values())
        .map(|((a, b), m)| ((a - b) / eps).exp() * m)
        .collect();
    Ok(mu.grid().integrate(&vals))
}

/// Joint density on the product grid, stored as `log_gamma[i * ny + j]`.
#[derive(Debug, Clone)]
pub struct EntropicCoupling {
    pub x_grid: Grid,
    pub y_grid: Grid,
    pub log_gamma: Vec<f64>,
}

impl EntropicCoupling {
    fn from_log(x_grid: Grid, y_grid: Grid, log_gamma: Vec<f64>) -> Self {
        let mut c = EntropicCoupling {
            x_grid,
            y_grid,
            log_gamma,
        };
        let lm = c.mass().ln();
        c.log_gamma.iter_mut().for_each(|v| *v -= lm);
        c
    }

    #[inline]
    pub fn log_at(&self, i: usize, j: usize) -> f64 {
        self.log_gamma[i * self.y_grid.len() + j]
    }

    pub fn mass(&self) -> f64 {
        let ny = self.y_grid.len();
        let mut acc = 0.0;
        for i in 0..self.x_grid.len() {
            let wi = self.x_grid.weight(i);
            for j in 0..ny {
                acc += wi * self.y_grid.weight(j) * self.log_gamma[i * ny + j].exp();
            }
        }
        acc
    }

    /// `∫ gamma(x, y) dy` at the X nodes.
    pub fn x_marginal(&self) -> Vec<f64> {
        let ny = self.y_grid.len();
        (0..self.x_grid.len())
            .map(|i| {
                (0..ny)
                    .map(|j| self.y_grid.weight(j) * self.log_gamma[i * ny + j].exp())
                    .sum()
            })
            .collect()
    }

    /// `∫ gamma(x, y) dx` at the Y nodes.
    pub fn y_marginal(&self) -> Vec<f64> {
        let ny = self.y_grid.len();
        (0..ny)
            .map(|j| {
                (0..self.x_grid.len())
                    .map(|i| self.x_grid.weight(i) * self.log_gamma[i * ny + j].exp())
                    .sum()
            })
            .collect()
    }

    /// Writes the dense matrix of `gamma` values, one X node per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let ny = self.y_grid.len();
        for i in 0..self.x_grid.len() {
            let row: Vec<String> = (0..ny)
                .map(|j| format!("{:.16e}", self.log_gamma[i * ny + j].exp()))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `gamma_{k+1}` built from `u_k` and `V[u_k]`: its X-marginal is
/// `rho_{k+1}` and its Y-marginal is `nu`.
pub fn coupling(state: &SinkhornState) -> EntropicCoupling {
    coupling_from(state.x_grid(), &state.u, &state.v, &state.mu, &state.nu, state.eps)
}

fn coupling_from(
    xg: &Grid,
    u: &[f64],
    v: &[f64],
    mu: &GridDensity,
    nu: &GridDensity,
    eps: f64,
) -> EntropicCoupling {
    let yg = nu.grid();
    let (nx, ny) = (xg.len(), yg.len());
    let lmu = mu.log_values();
    let lnu = nu.log_values();
    let mut lg = vec![0.0; nx * ny];
    for i in 0..nx {
        let x = xg.node(i);
        for j in 0..ny {
            lg[i * ny + j] = (x * yg.node(j) - u[i] - v[j]) / eps + lmu[i] + lnu[j];
        }
    }
    EntropicCoupling::from_log(*xg, *yg, lg)
}

/// `(1/2) ∬ (x - y)^2 dpi + eps KL(pi || mu ⊗ nu)` by trapezoid quadrature.
pub fn eot_cost(pi: &EntropicCoupling, mu: &GridDensity, nu: &GridDensity, eps: f64) -> Result<f64> {
    pi.x_grid.ensure_matches(mu.grid())?;
    pi.y_grid.ensure_matches(nu.grid())?;
    let lmu = mu.log_values();
    let lnu = nu.log_values();
    let ny = pi.y_grid.len();
    let mut transport = 0.0;
    let mut kl = 0.0;
    for i in 0..pi.x_grid.len() {
        let (x, wi) = (pi.x_grid.node(i), pi.x_grid.weight(i));
        for j in 0..ny {
            let y = pi.y_grid.node(j);
            let lg = pi.log_gamma[i * ny + j];
            let m = wi * pi.y_grid.weight(j) * lg.exp();
            transport += 0.5 * (x - y) * (x - y) * m;
            kl += m * (lg - lmu[i] - lnu[j]);
        }
    }
    Ok(transport + eps * kl)
}

/// The product coupling `mu ⊗ nu`.
pub fn product_coupling(mu: &GridDensity, nu: &GridDensity) -> EntropicCoupling {
    let lmu = mu.log_values();
    let lnu = nu.log_values();
    let ny = lnu.len();
    let mut lg = vec![0.0; lmu.len() * ny];
    for (i, a) in lmu.iter().enumerate() {
        for (j, b) in lnu.iter().enumerate() {
            lg[i * ny + j] = a + b;
        }
    }
    EntropicCoupling::from_log(*mu.grid(), *nu.grid(), lg)
}

/// Increment of the potential with its mean removed, in sup-norm.
pub fn increment_residual(prev: &[f64], next: &[f64]) -> f64 {
    let n = prev.len() as f64;
    let mean: f64 = prev.iter().zip(next).map(|(a, b)| b - a).sum::<f64>() / n;
    sup_norm(prev.iter().zip(next).map(|(a, b)| b - a - mean))
}

/// Iterates `S` until the mean-free increment drops below `tol * eps`.
/// Returns the converged state and the number of steps taken; a state that is
/// already converged is returned unchanged with zero steps.
pub fn run_to_tolerance(state: SinkhornState, tol: f64, max_iter: usize) -> Result<(SinkhornState, usize)> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let mut cur = state;
    let mut residual = f64::NAN;
    for it in 0..max_iter {
        let next = cur.s_step()?;
        residual = increment_residual(&cur.u, &next.u);
        if residual < tol * cur.eps {
            return Ok((cur, it));
        }
        cur = next;
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
        state: Box::new(cur),
    })
}

/// The classical marginal-fitting form of the iteration, run on the joint
/// density: starting from `exp((x y - u0(x)) / eps) mu ⊗ nu`, alternately fit
/// the Y-marginal to `nu` and the X-marginal to `mu`. Returns the X-marginals
/// seen right after each Y-fit, which are `rho_1, ..., rho_iterations`.
pub fn ipfp_marginals(
    mu: &GridDensity,
    nu: &GridDensity,
    u0: &[f64],
    eps: f64,
    iterations: usize,
) -> Result<Vec<GridDensity>> {
    let xg = *mu.grid();
    let yg = *nu.grid();
    let (nx, ny) = (xg.len(), yg.len());
    let lmu = mu.log_values();
    let lnu = nu.log_values();
    let mut lg = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            lg[i * ny + j] = (xg.node(i) * yg.node(j) - u0[i]) / eps + lmu[i] + lnu[j];
        }
    }
    let lse = |terms: &mut dyn Iterator<Item = f64>| {
        let t: Vec<f64> = terms.collect();
        crate::grid::logsumexp(&t)
    };
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        for j in 0..ny {
            let lp = lse(&mut (0..nx).map(|i| xg.weight(i).ln() + lg[i * ny + j]));
            for i in 0..nx {
                lg[i * ny + j] += lnu[j] - lp;
            }
        }
        let lpx: Vec<f64> = (0..nx)
            .map(|i| lse(&mut (0..ny).map(|j| yg.weight(j).ln() + lg[i * ny + j])))
            .collect();
        out.push(GridDensity::from_log(xg, &lpx)?);
        for i in 0..nx {
            for j in 0..ny {
                lg[i * ny + j] += lmu[i] - lpx[i];
            }
        }
    }
    Ok(out)
}

/// Sup over the nodes of `y` of the gap between `V[u]` and its Laplace
/// expansion `w(y) + (eps/2) log(2 pi eps) - eps f(w'(y)) + (eps/2) log w''(y)`
/// (`w` the conjugate of `u`). With `include_log_term = false` the
/// `log(2 pi eps)` term is dropped.
pub fn laplace_residual(
    u: &ConvexPotential,
    f: &DensitySpec,
    mu: &GridDensity,
    y: &Grid,
    eps: f64,
    include_log_term: bool,
) -> Result<f64> {
    let v = v_operator(u.u(), mu, y, eps)?;
    let w = legendre_transform(u, y)?;
    let log_term = if include_log_term {
        0.5 * eps * (2.0 * std::f64::consts::PI * eps).ln()
    } else {
        0.0
    };
    Ok(sup_norm((0..y.len()).map(|j| {
        v[j] - w.u()[j] - log_term + eps * f.neg_log_density(w.du()[j]) - 0.5 * eps * w.d2u()[j].ln()
    })))
}
