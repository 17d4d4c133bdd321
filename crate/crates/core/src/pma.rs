//! The parabolic Monge-Ampère flow
//!
//! ```text
//! ∂t u = f(x) - g(u'(x)) + log u''(x)
//! ```
//!
//! whose marginals `rho_t = exp(-h_t) = nu(u') u''` form the Sinkhorn flow,
//! together with its velocity field, the Fokker-Planck comparison flow, the
//! generic Wasserstein mirror flow and the diagnostics built on them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{derivative, second_derivative, sup_norm, Grid};
use crate::interp::Cubic;
use crate::measures::{kl_divergence, pushforward_monotone, DensitySpec, GridDensity};
use crate::transport::{
    brenier_map_1d, legendre_transform, lot_distance, map_l2_distance, ConvexPotential,
    HessianBoundsReport,
};

/// Guards for the stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmaConfig {
    /// Lower bound for `u''`.
    pub a_floor: f64,
    /// Upper bound for `u''`.
    pub b_cap: f64,
    /// Largest convexity projection (sup-norm change of `u`) tolerated per step.
    pub max_projection: f64,
    /// Tolerance of the pushforward check `(u')_# rho = nu` after each step;
    /// `None` disables the check.
    pub pushforward_tol: Option<f64>,
}

impl Default for PmaConfig {
    fn default() -> Self {
        PmaConfig {
            a_floor: 1e-3,
            b_cap: 1e3,
            max_projection: 1e-6,
            pushforward_tol: Some(5e-3),
        }
    }
}

/// The data shared by every state of a run: `f`, `g`, their discretizations
/// (`mu` on the X grid, `nu` on the Y grid) and the guards.
#[derive(Debug, Clone)]
pub struct PmaProblem {
    pub f: DensitySpec,
    pub g: DensitySpec,
    pub mu: GridDensity,
    pub nu: GridDensity,
    pub config: PmaConfig,
}

impl PmaProblem {
    pub fn new(f: DensitySpec, g: DensitySpec, mu: GridDensity, nu: GridDensity, config: PmaConfig) -> Self {
        PmaProblem {
            f,
            g,
            mu,
            nu,
            config,
        }
    }

    pub fn x_grid(&self) -> &Grid {
        self.mu.grid()
    }
}

#[derive(Debug, Clone)]
pub struct PmaState {
    pub t: f64,
    pub u: ConvexPotential,
    /// `h_t = g(u') - log u''`.
    pub h: Vec<f64>,
    pub rho: GridDensity,
    /// `∂t u` at this state (the right-hand side).
    pub dudt: Vec<f64>,
    pub bounds: HessianBoundsReport,
    /// Largest convexity projection applied so far.
    pub projection: f64,
    problem: Arc<PmaProblem>,
}

/// `log rho = -g(u') + log u''` at the nodes (unnormalized only by roundoff:
/// `g` is normalized).
fn log_marginal(u: &ConvexPotential, g: &DensitySpec) -> Vec<f64> {
    u.du()
        .iter()
        .zip(u.d2u())
        .map(|(d, a)| -g.neg_log_density(*d) + a.ln())
        .collect()
}

/// `rho = (u')^{-1}_# nu` on the grid of `u`, i.e. `nu(u') u''` normalized.
pub fn rho_from_potential(u: &ConvexPotential, g: &DensitySpec) -> Result<GridDensity> {
    GridDensity::from_log(*u.grid(), &log_marginal(u, g))
}

/// Potential whose gradient is the monotone map from `rho0` to `nu`.
pub fn brenier_potential(rho0: &GridDensity, nu: &GridDensity, a_min: f64) -> Result<ConvexPotential> {
    let t = brenier_map_1d(rho0, nu)?;
    let g = *rho0.grid();
    let du = t.values().to_vec();
    let u = crate::grid::cumulative(&du, g.spacing(), g.len() / 2);
    let d2u = derivative(&du, g.spacing());
    ConvexPotential::new(g, u, du, d2u, a_min)
}

fn check_window(u: &ConvexPotential, cfg: &PmaConfig) -> Result<()> {
    for (i, &a) in u.d2u().iter().enumerate() {
        if !(a >= cfg.a_floor) {
            return Err(Error::ConvexityLost {
                index: i,
                value: a,
                floor: cfg.a_floor,
            });
        }
        if a > cfg.b_cap {
            return Err(Error::ConvexityLost {
                index: i,
                value: a,
                floor: cfg.b_cap,
            });
        }
    }
    Ok(())
}

/// Rebuilds `u'` and `u''` from nodal `u`. At the two end nodes `u''` is
/// copied from the neighbour: the one-sided second difference feeds back
/// positively into the end value and would make the explicit scheme unstable.
/// Values of `u''` below `a_floor` are clamped and `u`, `u'` re-integrated from
/// the middle node; the sup-norm change of `u` is returned.
fn rebuild(grid: Grid, u: Vec<f64>, a_floor: f64) -> Result<(ConvexPotential, f64)> {
    let h = grid.spacing();
    let n = grid.len();
    let mut du = derivative(&u, h);
    let mut d2u = second_derivative(&u, h);
    d2u[0] = d2u[1];
    d2u[n - 1] = d2u[n - 2];
    let mut projection = 0.0;
    if d2u.iter().any(|&a| a < a_floor) {
        let mid = n / 2;
        d2u.iter_mut().for_each(|a| *a = a.max(a_floor));
        let c = crate::grid::cumulative(&d2u, h, mid);
        du = c.iter().map(|v| v + du[mid]).collect();
        let cu = crate::grid::cumulative(&du, h, mid);
        let rebuilt: Vec<f64> = cu.iter().map(|v| v + u[mid]).collect();
        projection = sup_norm(rebuilt.iter().zip(&u).map(|(a, b)| a - b));
        return Ok((ConvexPotential::new(grid, rebuilt, du, d2u, a_floor)?, projection));
    }
    Ok((ConvexPotential::new(grid, u, du, d2u, 0.0)?, projection))
}

/// Largest explicit substep for a flow whose linearization is advection with
/// speed `c = g'(u')` plus diffusion with coefficient `1 / u''`.
fn stable_substep(u: &ConvexPotential, g: &DensitySpec) -> f64 {
    let h = u.grid().spacing();
    let a_min = u.min_d2u();
    let a_max = u.max_d2u();
    let c_max = u.du().iter().fold(0.0_f64, |m, &d| m.max(g.grad(d).abs()));
    let parabolic = 0.25 * h * h * a_min;
    let advective = if c_max > 0.0 {
        1.0 / (a_max * c_max * c_max)
    } else {
        f64::INFINITY
    };
    parabolic.min(advective)
}

/// Advances `u` by `dt` under `∂t u = rhs(u)`, with `rhs` recomputed on every
/// stable substep. Returns the new potential and the largest projection.
fn advance(
    u: &ConvexPotential,
    g: &DensitySpec,
    dt: f64,
    a_floor: f64,
    rhs: &dyn Fn(&ConvexPotential) -> Result<Vec<f64>>,
) -> Result<(ConvexPotential, f64)> {
    let mut cur = u.clone();
    let mut remaining = dt;
    let mut projection: f64 = 0.0;
    while remaining > 0.0 {
        let limit = stable_substep(&cur, g);
        let n_sub = (remaining / limit).ceil().max(1.0);
        let tau = remaining / n_sub;
        let r = rhs(&cur)?;
        let next: Vec<f64> = cur.u().iter().zip(&r).map(|(a, b)| a + tau * b).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("potential update"));
        }
        let (p, proj) = rebuild(*cur.grid(), next, a_floor)?;
        projection = projection.max(proj);
        cur = p;
        remaining -= tau;
        if remaining < 1e-15 * dt {
            break;
        }
    }
    Ok((cur, projection))
}

impl PmaState {
    pub fn new(problem: Arc<PmaProblem>, u0: ConvexPotential) -> Result<Self> {
        problem.x_grid().ensure_matches(u0.grid())?;
        check_window(&u0, &problem.config)?;
        let dudt = rhs_values(&u0, &problem)?;
        let h: Vec<f64> = log_marginal(&u0, &problem.g).iter().map(|v| -v).collect();
        let rho = rho_from_potential(&u0, &problem.g)?;
        let bounds = HessianBoundsReport::of(&u0, 0.0);
        Ok(PmaState {
            t: 0.0,
            u: u0,
            h,
            rho,
            dudt,
            bounds,
            projection: 0.0,
            problem,
        })
    }

    pub fn problem(&self) -> &Arc<PmaProblem> {
        &self.problem
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Steps with `dt` until `t_end` (the last step is shortened to land on it).
    pub fn advance_to(&self, t_end: f64, dt: f64) -> Result<PmaState> {
        let mut s = self.clone();
        while t_end - s.t > 1e-12 * dt.max(1.0) {
            let tau = dt.min(t_end - s.t);
            let snap = if (t_end - s.t - tau).abs() < 1e-9 * dt {
                t_end - s.t
            } else {
                tau
            };
            s = step(&s, snap)?;
        }
        Ok(s)
    }

    /// States at each requested time (ascending), stepping with `dt`.
    pub fn run_to_times(&self, dt: f64, times: &[f64]) -> Result<Vec<PmaState>> {
        let mut out = Vec::with_capacity(times.len());
        let mut s = self.clone();
        for &t in times {
            s = s.advance_to(t, dt)?;
            out.push(s.clone());
        }
        Ok(out)
    }
}

fn rhs_values(u: &ConvexPotential, p: &PmaProblem) -> Result<Vec<f64>> {
    check_window(u, &p.config)?;
    Ok(u
        .grid()
        .nodes()
        .iter()
        .zip(u.du())
        .zip(u.d2u())
        .map(|((x, d), a)| p.f.neg_log_density(*x) - p.g.neg_log_density(*d) + a.ln())
        .collect())
}

/// `f(x) - g(u'(x)) + log u''(x)` at the nodes.
pub fn pma_rhs(state: &PmaState) -> Result<Vec<f64>> {
    rhs_values(&state.u, &state.problem)
}

/// Sup-norm gap between `(u')_# rho` and `nu` over the interior 80% of the Y
/// grid (where the image of `u'` reaches).
pub fn pushforward_residual(state: &PmaState) -> Result<f64> {
    let nu = &state.problem.nu;
    let yg = nu.grid();
    let push = pushforward_monotone(&state.rho, state.u.du(), yg)?;
    let du = state.u.du();
    let (lo, hi) = (du[0], du[du.len() - 1]);
    Ok(sup_norm(
        yg.interior(0.1)
            .filter(|&j| yg.node(j) >= lo && yg.node(j) <= hi)
            .map(|j| push.values()[j] - nu.values()[j]),
    ))
}

/// One explicit Euler step of size `dt`, taken as enough equal substeps to
/// respect the parabolic and advective stability limits of the current state.
pub fn step(state: &PmaState, dt: f64) -> Result<PmaState> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("dt = {dt}")));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let p = state.problem.clone();
    let (u, proj) = advance(&state.u, &p.g, dt, p.config.a_floor, &|u| rhs_values(u, &p))?;
    if proj > p.config.max_projection {
        let (i, v) = u
            .d2u()
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |m, (i, &v)| if v < m.1 { (i, v) } else { m });
        return Err(Error::ConvexityLost {
            index: i,
            value: v,
            floor: p.config.a_floor,
        });
    }
    let dudt = rhs_values(&u, &p)?;
    let before = sup_norm(state.dudt.iter().copied());
    let after = sup_norm(dudt.iter().copied());
    if after > 10.0 * before.max(1e-6) {
        return Err(Error::Stability(format!(
            "sup |rhs| grew from {before:e} to {after:e} at t = {}",
            state.t + dt
        )));
    }
    let h: Vec<f64> = log_marginal(&u, &p.g).iter().map(|v| -v).collect();
    let rho = rho_from_potential(&u, &p.g)?;
    let t = state.t + dt;
    let bounds = state.bounds.merge(&HessianBoundsReport::of(&u, t));
    let next = PmaState {
        t,
        u,
        h,
        rho,
        dudt,
        bounds,
        projection: state.projection.max(proj),
        problem: p.clone(),
    };
    if let Some(tol) = p.config.pushforward_tol {
        let r = pushforward_residual(&next)?;
        if r > tol {
            return Err(Error::Stability(format!(
                "pushforward residual {r:e} exceeds {tol:e} at t = {t}"
            )));
        }
    }
    Ok(next)
}

/// Sup-norm gap between `h` from `f - ∂t u` (forward difference over one
/// step) and the average of `g(u') - log u''` at both ends of the step, over
/// the interior 80% of the grid.
pub fn gauge_consistency(prev: &PmaState, next: &PmaState) -> f64 {
    let dt = next.t - prev.t;
    let x = prev.grid().nodes();
    let f = &prev.problem.f;
    sup_norm(prev.grid().interior(0.1).map(|i| {
        let from_time = f.neg_log_density(x[i]) - (next.u.u()[i] - prev.u.u()[i]) / dt;
        from_time - 0.5 * (prev.h[i] + next.h[i])
    }))
}

/// Velocity field at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl VelocityField {
    /// `‖v‖` in `L2(rho)`.
    pub fn l2_norm(&self, rho: &GridDensity) -> f64 {
        let w: Vec<f64> = self
            .values
            .iter()
            .zip(rho.values())
            .map(|(v, r)| v * v * r)
            .collect();
        self.grid.integrate(&w).max(0.0).sqrt()
    }

    pub fn interpolant(&self) -> Cubic {
        Cubic::new(self.grid, self.values.clone())
    }
}

/// `v_t = -(1/u'') (f + log rho_t)'`.
pub fn velocity(state: &PmaState) -> Result<VelocityField> {
    check_window(&state.u, &state.problem.config)?;
    let g = *state.grid();
    let dlog = derivative(&state.rho.log_values(), g.spacing());
    let f = &state.problem.f;
    let values = g
        .nodes()
        .iter()
        .zip(&dlog)
        .zip(state.u.d2u())
        .map(|((x, dl), a)| -(f.grad(*x) + dl) / a)
        .collect();
    Ok(VelocityField { grid: g, values })
}

/// The same field through the mirror chart: `-(1/u'') (∂t u)'`.
pub fn velocity_from_potential(state: &PmaState) -> VelocityField {
    let g = *state.grid();
    let d = derivative(&state.dudt, g.spacing());
    let values = d.iter().zip(state.u.d2u()).map(|(a, b)| -a / b).collect();
    VelocityField { grid: g, values }
}

/// `v = -(f + log rho)'` with `f = -log mu`.
pub fn fokker_planck_velocity(rho: &GridDensity, mu: &GridDensity) -> Result<VelocityField> {
    rho.grid().ensure_matches(mu.grid())?;
    let g = *rho.grid();
    let r: Vec<f64> = rho
        .values()
        .iter()
        .zip(mu.values())
        .map(|(a, b)| a.ln() - b.ln())
        .collect();
    let values = derivative(&r, g.spacing()).iter().map(|d| -d).collect();
    Ok(VelocityField { grid: g, values })
}

/// Conservative explicit step of `∂t rho = ∂x (mu ∂x (rho / mu))`, the
/// continuity equation with the Fokker-Planck velocity. Fluxes live on cell
/// midpoints with `mu` taken as the geometric mean of its neighbours, so
/// `rho = mu` is stationary to roundoff; the ends are zero-flux, so trapezoid
/// mass is conserved. Substeps keep every update a convex combination, which
/// also preserves positivity.
pub fn fokker_planck_step(rho: &GridDensity, mu: &GridDensity, dt: f64) -> Result<GridDensity> {
    rho.grid().ensure_matches(mu.grid())?;
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("dt = {dt}")));
    }
    if dt == 0.0 {
        return Ok(rho.clone());
    }
    let g = *rho.grid();
    let n = g.len();
    let h = g.spacing();
    let m = mu.values();
    let mid: Vec<f64> = (0..n - 1).map(|i| (m[i] * m[i + 1]).sqrt()).collect();
    let mut limit = f64::INFINITY;
    for i in 0..n {
        let left = if i > 0 { mid[i - 1] } else { 0.0 };
        let right = if i + 1 < n { mid[i] } else { 0.0 };
        limit = limit.min(h * m[i] * g.weight(i) / (left + right));
    }
    let limit = 0.9 * limit;
    let n_sub = (dt / limit).ceil().max(1.0) as usize;
    let tau = dt / n_sub as f64;
    let mut r = rho.values().to_vec();
    let mut flux = vec![0.0; n - 1];
    for _ in 0..n_sub {
        for i in 0..n - 1 {
            flux[i] = -mid[i] * (r[i + 1] / m[i + 1] - r[i] / m[i]) / h;
        }
        for i in 0..n {
            let fin = if i > 0 { flux[i - 1] } else { 0.0 };
            let fout = if i + 1 < n { flux[i] } else { 0.0 };
            r[i] += tau * (fin - fout) / g.weight(i);
        }
    }
    if r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Stability("Fokker-Planck step lost positivity".into()));
    }
    GridDensity::normalized(g, r)
}

/// Sup-norm of `(rho1 - rho0)/dt + (rho0 v0)'` over the interior 80% of the
/// grid.
pub fn continuity_residual_of(rho0: &GridDensity, rho1: &GridDensity, v0: &VelocityField, dt: f64) -> f64 {
    let g = *rho0.grid();
    let flux: Vec<f64> = rho0.values().iter().zip(&v0.values).map(|(r, v)| r * v).collect();
    let div = derivative(&flux, g.spacing());
    sup_norm(
        g.interior(0.1)
            .map(|i| (rho1.values()[i] - rho0.values()[i]) / dt + div[i]),
    )
}

/// Continuity-equation residual between consecutive PMA states.
pub fn continuity_residual(prev: &PmaState, next: &PmaState) -> Result<f64> {
    let dt = next.t - prev.t;
    if !(dt > 0.0) {
        return Err(Error::Domain("states must be in increasing time".into()));
    }
    let v = velocity(prev)?;
    Ok(continuity_residual_of(&prev.rho, &next.rho, &v, dt))
}

/// Grid for the dual potential: the interior 80% of the Y grid, shrunk to the
/// image of `u'` for every given potential.
fn dual_grid(yg: &Grid, potentials: &[&ConvexPotential]) -> Result<Grid> {
    let mut range = yg.interior(0.1);
    for u in potentials {
        let du = u.du();
        let (lo, hi) = (du[0], du[du.len() - 1]);
        while range.start < range.end && yg.node(range.start) < lo {
            range.start += 1;
        }
        while range.end > range.start && yg.node(range.end - 1) > hi {
            range.end -= 1;
        }
    }
    yg.subgrid(range)
}

/// Residual of the dual flow `∂t w = g(y) - f(w'(y)) + log w''(y)` for
/// `w = u*`, with `∂t w` a forward difference over one step of size `dt`
/// taken from `state`. O(dt + h^2).
pub fn dual_pma_residual(state: &PmaState, dt: f64) -> Result<f64> {
    let next = step(state, dt)?;
    let p = &state.problem;
    let yg = dual_grid(p.nu.grid(), &[&state.u, &next.u])?;
    let w0 = legendre_transform(&state.u, &yg)?;
    let w1 = legendre_transform(&next.u, &yg)?;
    Ok(sup_norm((0..yg.len()).map(|j| {
        let y = yg.node(j);
        let dwdt = (w1.u()[j] - w0.u()[j]) / dt;
        dwdt - (p.g.neg_log_density(y) - p.f.neg_log_density(w0.du()[j]) + w0.d2u()[j].ln())
    })))
}

/// State of `run` closest in time to `t`.
pub fn state_at(run: &[PmaState], t: f64) -> Result<&PmaState> {
    run.iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .filter(|s| (s.t - t).abs() <= 1e-9 * (1.0 + t.abs()))
        .ok_or_else(|| Error::Domain(format!("no state at t = {t}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDerivativeRow {
    pub delta: f64,
    /// `LOT(rho_{t+delta}, rho_t) / delta` with reference `nu`.
    pub lot_rate: f64,
    /// `‖v_t‖` in `L2(rho_t)`.
    pub speed: f64,
    /// `lot_rate / speed`; exactly 0 when both vanish.
    pub ratio: f64,
}

/// Rows `(delta, LOT(rho_{t+delta}, rho_t) / delta, ‖v_t‖)`; `run` must hold
/// states at `t` and each `t + delta`.
pub fn metric_derivative_lot(run: &[PmaState], t: f64, deltas: &[f64]) -> Result<Vec<MetricDerivativeRow>> {
    let s0 = state_at(run, t)?;
    let nu = &s0.problem.nu;
    let speed = velocity(s0)?.l2_norm(&s0.rho);
    deltas
        .iter()
        .map(|&d| {
            let s1 = state_at(run, t + d)?;
            let lot = lot_distance(nu, &s1.rho, &s0.rho)?;
            let lot_rate = lot / d;
            let ratio = if lot_rate <= 1e-12 && speed <= 1e-9 {
                0.0
            } else {
                lot_rate / speed
            };
            Ok(MetricDerivativeRow {
                delta: d,
                lot_rate,
                speed,
                ratio,
            })
        })
        .collect()
}

/// Second-order pushforward check: with `T_t` the Brenier map from `nu` to
/// `rho_t`, returns `(LOT(rho_{t+delta}, M_# nu), LOT(rho_{t+delta}, rho_t))`
/// for `M = T_t + delta v_t(T_t)`. Since `M` is monotone, the first is the
/// `L2(nu)` distance between `M` and `T_{t+delta}`.
pub fn linot_second_order(run: &[PmaState], t: f64, delta: f64) -> Result<(f64, f64)> {
    let s0 = state_at(run, t)?;
    let s1 = state_at(run, t + delta)?;
    let nu = &s0.problem.nu;
    let t0 = brenier_map_1d(nu, &s0.rho)?;
    let t1 = brenier_map_1d(nu, &s1.rho)?;
    let v = velocity(s0)?.interpolant();
    let m: Vec<f64> = t0.values().iter().map(|&x| x + delta * v.eval(x)).collect();
    let second = map_l2_distance(nu, t1.values(), &m);
    let first = map_l2_distance(nu, t1.values(), t0.values());
    Ok((second, first))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDecayRow {
    pub t: f64,
    pub kl: f64,
    pub bound: f64,
    /// `inf_x 1/u''_t(x)` over the nodes.
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlDecayTable {
    pub rows: Vec<KlDecayRow>,
    /// Every row has `kl <= 1.05 * bound`.
    pub within_bound: bool,
}

/// `KL(rho_t || mu)` against `KL(rho_0 || mu) exp(-2 c H(t))` with
/// `H(t) = ∫ h`, `h(t) = inf 1/u''_t`, integrated by the trapezoid rule over
/// the states of `run`.
pub fn kl_decay_series(run: &[PmaState], c_lsi: f64) -> Result<KlDecayTable> {
    let mut rows = Vec::with_capacity(run.len());
    let mut big_h = 0.0;
    let mut kl0 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (k, s) in run.iter().enumerate() {
        let kl = kl_divergence(&s.rho, &s.problem.mu)?;
        let h = 1.0 / s.u.max_d2u();
        if let Some((tp, hp)) = prev {
            big_h += 0.5 * (s.t - tp) * (h + hp);
        }
        prev = Some((s.t, h));
        if k == 0 {
            kl0 = kl;
        }
        rows.push(KlDecayRow {
            t: s.t,
            kl,
            bound: kl0 * (-2.0 * c_lsi * big_h).exp(),
            h,
        });
    }
    let within_bound = rows.iter().all(|r| r.kl <= 1.05 * r.bound + 1e-14);
    Ok(KlDecayTable { rows, within_bound })
}

/// Functionals for the generic mirror flow `∂t u = δF/δrho (rho_t)`,
/// `rho_t = (u_t')^{-1}_# nu`. First variations are taken up to additive
/// constants, which do not move `rho_t`.
#[derive(Clone)]
pub enum MirrorFunctional {
    /// `∫ rho log rho`.
    Entropy,
    /// `∫ V rho`.
    PotentialEnergy(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// `KL(rho || e^{-f})`; this is the Sinkhorn flow.
    RelativeEntropy(DensitySpec),
}

impl std::fmt::Debug for MirrorFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MirrorFunctional::Entropy => write!(f, "Entropy"),
            MirrorFunctional::PotentialEnergy(_) => write!(f, "PotentialEnergy"),
            MirrorFunctional::RelativeEntropy(s) => write!(f, "RelativeEntropy({})", s.label()),
        }
    }
}

impl MirrorFunctional {
    fn first_variation(&self, u: &ConvexPotential, g: &DensitySpec) -> Vec<f64> {
        let x = u.grid().nodes();
        match self {
            MirrorFunctional::Entropy => log_marginal(u, g),
            MirrorFunctional::PotentialEnergy(v) => x.iter().map(|&x| v(x)).collect(),
            MirrorFunctional::RelativeEntropy(f) => log_marginal(u, g)
                .iter()
                .zip(&x)
                .map(|(l, &x)| l + f.neg_log_density(x))
                .collect(),
        }
    }
}

/// State of a generic mirror flow with mirror `½ W2^2(·, e^{-g})`.
#[derive(Debug, Clone)]
pub struct MirrorFlowState {
    pub t: f64,
    pub u: ConvexPotential,
    pub rho: GridDensity,
    pub g: DensitySpec,
    pub a_floor: f64,
}

impl MirrorFlowState {
    pub fn new(u0: ConvexPotential, g: DensitySpec, a_floor: f64) -> Result<Self> {
        let rho = rho_from_potential(&u0, &g)?;
        Ok(MirrorFlowState {
            t: 0.0,
            u: u0,
            rho,
            g,
            a_floor,
        })
    }
}

/// One explicit step (with stable substeps) of `∂t u = δF/δrho`.
pub fn mirror_flow_step(state: &MirrorFlowState, functional: &MirrorFunctional, dt: f64) -> Result<MirrorFlowState> {
    let g = state.g.clone();
    let (u, _) = advance(&state.u, &g, dt, state.a_floor, &|u| {
        Ok(functional.first_variation(u, &g))
    })?;
    let rho = rho_from_potential(&u, &g)?;
    Ok(MirrorFlowState {
        t: state.t + dt,
        u,
        rho,
        g,
        a_floor: state.a_floor,
    })
}
