//! Optimal-transport primitives in one dimension: Brenier maps, W2 and LOT
//! distances, Legendre transforms, mirror coordinates and Bregman divergences.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{derivative, second_derivative, Grid};
use crate::interp::{linear, Cubic};
use crate::measures::{pushforward_monotone, GridDensity, TailCdf};

/// Default lower bound on `u''` accepted for a potential.
pub const DEFAULT_A_MIN: f64 = 1e-3;
/// Number of probability nodes in the quantile quadrature for W2.
pub const W2_NODES: usize = 1024;
/// Tail probability below which Brenier maps are extrapolated instead of
/// read off the truncated CDFs.
const TAIL_CUTOFF: f64 = 1e-10;

/// Strictly increasing nodal values `T(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    grid: Grid,
    values: Vec<f64>,
}

impl MonotoneMap {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch("map length".into()));
        }
        for i in 1..values.len() {
            if !(values[i] > values[i - 1]) {
                return Err(Error::NonMonotoneMap { index: i });
            }
        }
        Ok(MonotoneMap { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cubic interpolation between nodes.
    pub fn eval(&self, x: f64) -> f64 {
        Cubic::new(self.grid, self.values.clone()).eval(x)
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
struct Analytic {
    u: ScalarFn,
    du: ScalarFn,
    d2u: ScalarFn,
}

/// Nodal samples of a convex function with its first two derivatives.
///
/// A potential built with [`ConvexPotential::from_fn`] also keeps the closed
/// forms and uses them for off-grid evaluation.
#[derive(Clone)]
pub struct ConvexPotential {
    grid: Grid,
    u: Vec<f64>,
    du: Vec<f64>,
    d2u: Vec<f64>,
    analytic: Option<Analytic>,
}

impl fmt::Debug for ConvexPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexPotential")
            .field("grid", &self.grid)
            .field("min_d2u", &self.min_d2u())
            .field("max_d2u", &self.max_d2u())
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl ConvexPotential {
    pub fn new(grid: Grid, u: Vec<f64>, du: Vec<f64>, d2u: Vec<f64>, a_min: f64) -> Result<Self> {
        let n = grid.len();
        if u.len() != n || du.len() != n || d2u.len() != n {
            return Err(Error::GridMismatch("potential arrays".into()));
        }
        let p = ConvexPotential {
            grid,
            u,
            du,
            d2u,
            analytic: None,
        };
        p.validate(a_min)?;
        Ok(p)
    }

    /// Derivatives by finite differences of `u`.
    pub fn from_values(grid: Grid, u: Vec<f64>, a_min: f64) -> Result<Self> {
        let h = grid.spacing();
        let du = derivative(&u, h);
        let d2u = second_derivative(&u, h);
        Self::new(grid, u, du, d2u, a_min)
    }

    pub fn from_fn(
        grid: Grid,
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        du: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a_min: f64,
    ) -> Result<Self> {
        let x = grid.nodes();
        let mut p = Self::new(
            grid,
            x.iter().map(|&x| u(x)).collect(),
            x.iter().map(|&x| du(x)).collect(),
            x.iter().map(|&x| d2u(x)).collect(),
            a_min,
        )?;
        p.analytic = Some(Analytic {
            u: Arc::new(u),
            du: Arc::new(du),
            d2u: Arc::new(d2u),
        });
        Ok(p)
    }

    /// `u(x) = a x^2 / 2 + b x`.
    pub fn quadratic(grid: Grid, a: f64, b: f64) -> Result<Self> {
        Self::from_fn(
            grid,
            move |x| 0.5 * a * x * x + b * x,
            move |x| a * x + b,
            move |_| a,
            DEFAULT_A_MIN.min(a),
        )
    }

    fn validate(&self, a_min: f64) -> Result<()> {
        for (i, &v) in self.d2u.iter().enumerate() {
            if !(v >= a_min) {
                return Err(Error::ConvexityLost {
                    index: i,
                    value: v,
                    floor: a_min,
                });
            }
        }
        for i in 1..self.du.len() {
            if !(self.du[i] > self.du[i - 1]) {
                return Err(Error::NonMonotoneMap { index: i });
            }
        }
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("potential values"));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn du(&self) -> &[f64] {
        &self.du
    }

    pub fn d2u(&self) -> &[f64] {
        &self.d2u
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    pub fn min_d2u(&self) -> f64 {
        self.d2u.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_d2u(&self) -> f64 {
        self.d2u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `u(x)`: closed form if available, else cubic Hermite with slopes `u'`.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.analytic {
            Some(a) => (a.u)(x),
            None => Cubic::with_slopes(self.grid, self.u.clone(), self.du.clone()).eval(x),
        }
    }

    /// `u'(x)`: closed form if available, else cubic Hermite with slopes `u''`.
    pub fn eval_du(&self, x: f64) -> f64 {
        match &self.analytic {
            Some(a) => (a.du)(x),
            None => self.du_interpolant().eval(x),
        }
    }

    /// `u''(x)`: closed form if available, else linear interpolation.
    pub fn eval_d2u(&self, x: f64) -> f64 {
        match &self.analytic {
            Some(a) => (a.d2u)(x),
            None => linear(&self.grid, &self.d2u, x),
        }
    }

    pub(crate) fn du_interpolant(&self) -> Cubic {
        Cubic::with_slopes(self.grid, self.du.clone(), self.d2u.clone())
    }

    /// Writes `x,u,du,d2u` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,u,du,d2u")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.grid.node(i),
                self.u[i],
                self.du[i],
                self.d2u[i]
            )?;
        }
        Ok(())
    }
}

/// Observed Hessian window of a potential over a time interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianBoundsReport {
    pub a_min_observed: f64,
    pub b_max_observed: f64,
    pub time_window: [f64; 2],
}

impl HessianBoundsReport {
    pub fn of(u: &ConvexPotential, t: f64) -> Self {
        HessianBoundsReport {
            a_min_observed: u.min_d2u(),
            b_max_observed: u.max_d2u(),
            time_window: [t, t],
        }
    }

    pub fn merge(&self, other: &HessianBoundsReport) -> Self {
        HessianBoundsReport {
            a_min_observed: self.a_min_observed.min(other.a_min_observed),
            b_max_observed: self.b_max_observed.max(other.b_max_observed),
            time_window: [
                self.time_window[0].min(other.time_window[0]),
                self.time_window[1].max(other.time_window[1]),
            ],
        }
    }
}

/// Monotone rearrangement `T = Q_dst ∘ F_src` at the nodes of `src`.
///
/// Each tail is read from the CDF accumulated from its own end. Where a tail
/// probability drops below 1e-10 the truncated CDFs stop resolving the map and
/// it is continued linearly from the resolved part.
pub fn brenier_map_1d(src: &GridDensity, dst: &GridDensity) -> Result<MonotoneMap> {
    let fs = TailCdf::new(src);
    let qd = TailCdf::new(dst);
    let n = src.grid().len();
    let mut t = vec![f64::NAN; n];
    for i in 0..n {
        let (pl, pr) = (fs.left[i], fs.right[i]);
        if pl <= pr {
            if pl >= TAIL_CUTOFF {
                t[i] = qd.quantile_lower(pl);
            }
        } else if pr >= TAIL_CUTOFF {
            t[i] = qd.quantile_upper(pr);
        }
    }
    let first = t.iter().position(|v| v.is_finite());
    let last = t.iter().rposition(|v| v.is_finite());
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => return Err(Error::Domain("source density has no resolvable bulk".into())),
    };
    let lo_slope = t[first + 1] - t[first];
    for i in (0..first).rev() {
        t[i] = t[i + 1] - lo_slope;
    }
    let hi_slope = t[last] - t[last - 1];
    for i in last + 1..n {
        t[i] = t[i - 1] + hi_slope;
    }
    MonotoneMap::new(*src.grid(), t)
}

/// `∫_0^1 f(p) dp` by the midpoint rule on `W2_NODES` cells. The integrands
/// used here blow up (mildly) at 0 and 1, so the two end cells are split
/// geometrically: `[p/2, p]` for `p = 1/m, 1/(2m), ...` down to 1e-14.
fn probability_quadrature(f: impl Fn(f64) -> f64) -> f64 {
    let m = W2_NODES;
    let mut acc = 0.0;
    for k in 1..m - 1 {
        acc += f((k as f64 + 0.5) / m as f64) / m as f64;
    }
    let mut p = 1.0 / m as f64;
    while p > 1e-14 {
        let q = 0.75 * p;
        acc += 0.5 * p * (f(q) + f(1.0 - q));
        p *= 0.5;
    }
    acc
}

/// `W2(a, b)` from the quantile functions, integrated over probability.
pub fn w2_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    let ca = TailCdf::new(a);
    let cb = TailCdf::new(b);
    Ok(probability_quadrature(|p| {
        let d = ca.quantile(p) - cb.quantile(p);
        d * d
    })
    .sqrt())
}

/// Linearized OT distance: `L2(reference)` distance between the Brenier maps
/// `T_a = Q_a ∘ F_ref` and `T_b = Q_b ∘ F_ref` from `reference`.
///
/// The integral over `reference` is taken in its probability variable, at
/// the points `Q_ref(p)`, with the maps evaluated exactly there rather than
/// interpolated from the nodes.
pub fn lot_distance(reference: &GridDensity, a: &GridDensity, b: &GridDensity) -> Result<f64> {
    let cr = TailCdf::new(reference);
    let ca = TailCdf::new(a);
    let cb = TailCdf::new(b);
    Ok(probability_quadrature(|p| {
        let d = if p <= 0.5 {
            let f = cr.tail_at(cr.quantile_lower(p), true);
            ca.quantile_lower(f) - cb.quantile_lower(f)
        } else {
            let s = cr.tail_at(cr.quantile_upper(1.0 - p), false);
            ca.quantile_upper(s) - cb.quantile_upper(s)
        };
        d * d
    })
    .sqrt())
}

/// `L2(weight)` distance between two nodal maps on the grid of `weight`.
pub fn map_l2_distance(weight: &GridDensity, ta: &[f64], tb: &[f64]) -> f64 {
    let integrand: Vec<f64> = ta
        .iter()
        .zip(tb)
        .zip(weight.values())
        .map(|((x, y), r)| (x - y) * (x - y) * r)
        .collect();
    weight.grid().integrate(&integrand).max(0.0).sqrt()
}

/// Convex conjugate `w(y) = max_x (x y - u(x))` on `target`.
///
/// For each `y` the maximizer solves `u'(x) = y`; it is bracketed by a binary
/// search on the increasing nodal `u'` and refined on the cubic Hermite
/// interpolant of `u` (Newton on the closed form when available). Then
/// `w' = x`, `w'' = 1 / u''(x)`.
pub fn legendre_transform(u: &ConvexPotential, target: &Grid) -> Result<ConvexPotential> {
    let du = u.du();
    let n = du.len();
    let (dmin, dmax) = (du[0], du[n - 1]);
    let slack = 1e-9 * (dmax - dmin);
    if target.lower() < dmin - slack || target.upper() > dmax + slack {
        return Err(Error::Range {
            lo: target.lower(),
            hi: target.upper(),
            min: dmin,
            max: dmax,
        });
    }
    let g = *u.grid();
    let h = g.spacing();
    let uval = Cubic::with_slopes(g, u.u().to_vec(), du.to_vec());
    let duval = u.du_interpolant();
    let m = target.len();
    let mut w = vec![0.0; m];
    let mut dw = vec![0.0; m];
    let mut d2w = vec![0.0; m];
    for j in 0..m {
        let y = target.node(j).clamp(dmin, dmax);
        let k = du.partition_point(|&v| v <= y).clamp(1, n - 1);
        let i = k - 1;
        let (mut lo, mut hi) = (g.node(i), g.node(i + 1));
        let mut x = if du[i + 1] > du[i] {
            lo + (y - du[i]) / (du[i + 1] - du[i]) * h
        } else {
            lo
        };
        for _ in 0..60 {
            let r = duval.eval(x) - y;
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = duval.deriv(x);
            let mut next = if slope > 0.0 { x - r / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - x).abs() <= 1e-15 * (1.0 + x.abs());
            x = next;
            if done {
                break;
            }
        }
        let uy = match &u.analytic {
            Some(a) => {
                for _ in 0..3 {
                    let step = ((a.du)(x) - y) / (a.d2u)(x);
                    if step.is_finite() {
                        x -= step;
                    }
                }
                (a.u)(x)
            }
            None => uval.eval(x),
        };
        w[j] = x * target.node(j) - uy;
        dw[j] = x;
        d2w[j] = 1.0 / u.eval_d2u(x);
    }
    ConvexPotential::new(*target, w, dw, d2w, 0.0)
}

/// Mirror coordinate `x^u = u'(x)`, linearly interpolated between nodes (or
/// the closed form when available).
pub fn mirror_coordinate(u: &ConvexPotential, x: f64) -> Result<f64> {
    if !u.grid().contains(x) {
        return Err(Error::Domain(format!("x = {x} outside the grid")));
    }
    Ok(match &u.analytic {
        Some(a) => (a.du)(x),
        None => linear(u.grid(), u.du(), x),
    })
}

/// Bregman divergence `u(x) + w(y) - x y` with `w` the conjugate of `u`.
pub fn bregman_divergence(u: &ConvexPotential, w: &ConvexPotential, x: f64, y: f64) -> Result<f64> {
    if !u.grid().contains(x) {
        return Err(Error::Domain(format!("x = {x} outside the grid")));
    }
    if !w.grid().contains(y) {
        return Err(Error::Domain(format!("y = {y} outside the dual grid")));
    }
    Ok(u.eval(x) + w.eval(y) - x * y)
}

/// Sup-norm gap between the two sides of the log-det-Hessian identity,
/// which in one dimension reads `(1/u'') (log u'')' = -(1/u'')'`. Both sides
/// use central differences of the nodal `u''`, so the gap is O(h^2).
pub fn log_det_hessian_gradient_residual(u: &ConvexPotential) -> f64 {
    let d2 = u.d2u();
    let h = u.grid().spacing();
    let n = d2.len();
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        let dlog = (d2[i + 1].ln() - d2[i - 1].ln()) / (2.0 * h);
        let dinv = (1.0 / d2[i + 1] - 1.0 / d2[i - 1]) / (2.0 * h);
        worst = worst.max((dlog / d2[i] + dinv).abs());
    }
    worst
}

/// Sup-norm gap in the change-of-measure identity `b(phi'(x)) = a(x) + log phi''(x)`
/// where `e^{-a} = src` and `e^{-b} = (phi')_# src`, over the interior 40% of
/// the grid. The pushforward is taken onto a grid of twice the resolution
/// spanning the image of `phi'`.
pub fn change_of_measure_residual(src: &GridDensity, phi: &ConvexPotential) -> Result<f64> {
    src.grid().ensure_matches(phi.grid())?;
    let g = *phi.grid();
    let du = phi.du();
    let image = Grid::new(du[0], du[du.len() - 1], 2 * g.len())?;
    let push = pushforward_monotone(src, du, &image)?;
    let b = Cubic::new(image, push.values().iter().map(|v| -v.ln()).collect());
    let mut worst: f64 = 0.0;
    for i in g.interior(0.3) {
        let lhs = b.eval(du[i]);
        let rhs = -src.values()[i].ln() + phi.d2u()[i].ln();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
