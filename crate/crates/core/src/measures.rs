//! Probability measures on a truncated 1-D grid and in closed Gaussian form.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::interp::Cubic;

/// Mass that may be lost to domain truncation.
pub const TRUNCATION_LIMIT: f64 = 1e-8;
/// Tolerance on the trapezoid mass of a [`GridDensity`].
pub const MASS_TOLERANCE: f64 = 1e-10;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A density `exp(-f)` given analytically through `f`, `f'` and `f''`.
///
/// `f` is stored unnormalized together with `log_z = log ∫ exp(-f)`, so
/// [`DensitySpec::neg_log_density`] is the normalized `f`.
#[derive(Clone)]
pub struct DensitySpec {
    f: ScalarFn,
    grad: ScalarFn,
    hess: ScalarFn,
    log_z: f64,
    label: String,
}

impl fmt::Debug for DensitySpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("DensitySpec")
            .field("label", &self.label)
            .field("log_z", &self.log_z)
            .finish()
    }
}

impl DensitySpec {
    pub fn from_fns(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64) -> f64 + Send + Sync + 'static,
        hess: impl Fn(f64) -> f64 + Send + Sync + 'static,
        log_z: f64,
    ) -> Self {
        DensitySpec {
            f: Arc::new(f),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            log_z,
            label: "custom".into(),
        }
    }

    /// Normal density with the given mean and variance.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        let g = GaussianMeasure::new(mean, variance)?;
        Ok(g.spec())
    }

    /// Uniform density on `[lower, upper]` (`f` constant).
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if !(upper > lower) {
            return Err(Error::Domain(format!("uniform on [{lower}, {upper}]")));
        }
        let mut s = Self::from_fns(|_| 0.0, |_| 0.0, |_| 0.0, (upper - lower).ln());
        s.label = format!("uniform[{lower},{upper}]");
        Ok(s)
    }

    /// Replaces `log_z` by a trapezoid estimate on `grid` (use a generous grid).
    pub fn normalized_on(mut self, grid: &Grid) -> Self {
        let vals: Vec<f64> = grid.nodes().iter().map(|&x| (-(self.f)(x)).exp()).collect();
        self.log_z = grid.integrate(&vals).ln();
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Normalized `f(x) = -log density(x)`.
    #[inline]
    pub fn neg_log_density(&self, x: f64) -> f64 {
        (self.f)(x) + self.log_z
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        (-self.neg_log_density(x)).exp()
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        (self.grad)(x)
    }

    #[inline]
    pub fn hess(&self, x: f64) -> f64 {
        (self.hess)(x)
    }

    /// `(min f'', max f'')` over the nodes; also checks that `f'` and `f''`
    /// are finite there.
    pub fn hessian_bounds(&self, grid: &Grid) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in grid.nodes() {
            let (g, h) = (self.grad(x), self.hess(x));
            if !g.is_finite() || !h.is_finite() {
                return Err(Error::NumericOverflow("density derivatives"));
            }
            lo = lo.min(h);
            hi = hi.max(h);
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeasure {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMeasure {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() || !variance.is_finite() {
            return Err(Error::Domain(format!("gaussian N({mean}, {variance})")));
        }
        Ok(GaussianMeasure { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn spec(&self) -> DensitySpec {
        let (m, v) = (self.mean, self.variance);
        DensitySpec::from_fns(
            move |x| (x - m) * (x - m) / (2.0 * v),
            move |x| (x - m) / v,
            move |_| 1.0 / v,
            0.5 * (2.0 * PI * v).ln(),
        )
        .with_label(format!("N({m},{v})"))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = x - self.mean;
        (-z * z / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &GaussianMeasure) -> f64 {
        let r = self.variance / other.variance;
        let dm = self.mean - other.mean;
        0.5 * (r + dm * dm / other.variance - 1.0 - r.ln())
    }

    pub fn w2(&self, other: &GaussianMeasure) -> f64 {
        let dm = self.mean - other.mean;
        let ds = self.std_dev() - other.std_dev();
        (dm * dm + ds * ds).sqrt()
    }
}

/// A strictly positive density on a uniform grid with unit trapezoid mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates positivity and unit mass.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_positive(&grid, &values)?;
        let mass = grid.integrate(&values);
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("density mass {mass} is not 1")));
        }
        Ok(GridDensity { grid, values })
    }

    /// Validates positivity and rescales to unit mass.
    pub fn normalized(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        check_positive(&grid, &values)?;
        let mass = grid.integrate(&values);
        if !mass.is_finite() {
            return Err(Error::NumericOverflow("density mass"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(GridDensity { grid, values })
    }

    /// From log-density values (any additive constant), normalized. Values
    /// that underflow are clamped to the smallest positive double.
    pub fn from_log(grid: Grid, log_values: &[f64]) -> Result<Self> {
        let m = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NumericOverflow("log density"));
        }
        let vals = log_values
            .iter()
            .map(|l| (l - m).exp().max(f64::MIN_POSITIVE))
            .collect();
        Self::normalized(grid, vals)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn moment(&self, k: i32) -> f64 {
        let w: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(x, v)| x.powi(k) * v)
            .collect();
        self.grid.integrate(&w)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let w: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(x, v)| (x - m) * (x - m) * v)
            .collect();
        self.grid.integrate(&w)
    }

    /// Trapezoid CDF at the nodes: starts at 0, nondecreasing, clamped to 1.
    pub fn cdf_values(&self) -> Vec<f64> {
        let c = TailCdf::new(self);
        c.left.iter().map(|v| v.min(1.0)).collect()
    }

    /// CDF at an arbitrary point (exact for the piecewise-linear density).
    pub fn cdf(&self, x: f64) -> f64 {
        cdf_at(&TailCdf::new(self), self, x, true).clamp(0.0, 1.0)
    }

    /// Left-continuous generalized inverse of the CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        Ok(TailCdf::new(self).quantile(p))
    }

    /// Quantiles at many probabilities (the CDF is built once).
    pub fn quantiles(&self, ps: &[f64]) -> Result<Vec<f64>> {
        if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        let c = TailCdf::new(self);
        Ok(ps.iter().map(|&p| c.quantile(p)).collect())
    }

    /// Writes `x,density` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,density")?;
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(w, "{x:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

fn check_positive(grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} values for {} nodes",
            values.len(),
            grid.len()
        )));
    }
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositive { index: i, value: v });
        }
    }
    Ok(())
}

/// CDF and survival function of a grid density, each accumulated from its own
/// end so that both tails keep full relative precision. Inside a cell the
/// density is linear and the CDF the matching quadratic.
pub(crate) struct TailCdf<'a> {
    d: &'a GridDensity,
    pub(crate) left: Vec<f64>,
    pub(crate) right: Vec<f64>,
}

impl<'a> TailCdf<'a> {
    pub(crate) fn new(d: &'a GridDensity) -> Self {
        let n = d.grid.len();
        let h = d.grid.spacing();
        let v = &d.values;
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        for i in 1..n {
            left[i] = left[i - 1] + 0.5 * h * (v[i - 1] + v[i]);
        }
        for i in (0..n - 1).rev() {
            right[i] = right[i + 1] + 0.5 * h * (v[i] + v[i + 1]);
        }
        let (ml, mr) = (left[n - 1], right[0]);
        left.iter_mut().for_each(|c| *c /= ml);
        right.iter_mut().for_each(|c| *c /= mr);
        TailCdf { d, left, right }
    }

    /// Solves `a s^2 + b s = target` for `s` in `[0, 1]`, with `a` possibly 0.
    fn solve_cell(a: f64, b: f64, target: f64) -> f64 {
        let disc = (b * b + 4.0 * a * target).max(0.0);
        let s = 2.0 * target / (b + disc.sqrt());
        s.clamp(0.0, 1.0)
    }

    /// Quantile at lower-tail probability `p` (`F(x) = p`).
    pub(crate) fn quantile_lower(&self, p: f64) -> f64 {
        let g = &self.d.grid;
        let n = g.len();
        if p <= 0.0 {
            return g.lower();
        }
        // First node with F >= p; the answer lies in the cell before it.
        let j = self.left.partition_point(|&c| c < p);
        if j >= n {
            return g.upper();
        }
        if j == 0 {
            return g.lower();
        }
        let i = j - 1;
        let h = g.spacing();
        let (r0, r1) = (self.d.values[i], self.d.values[i + 1]);
        let scale = h / (self.left_mass());
        let a = 0.5 * (r1 - r0) * scale;
        let b = r0 * scale;
        g.node(i) + h * Self::solve_cell(a, b, p - self.left[i])
    }

    /// Quantile at upper-tail probability `q` (`1 - F(x) = q`).
    pub(crate) fn quantile_upper(&self, q: f64) -> f64 {
        let g = &self.d.grid;
        let n = g.len();
        if q <= 0.0 {
            return g.upper();
        }
        // Survival is decreasing; last node with S >= q.
        let j = self.right.partition_point(|&c| c >= q);
        if j == 0 {
            return g.lower();
        }
        if j >= n {
            return g.upper();
        }
        // Cell [x_{j-1}, x_j]; integrate from the right end.
        let i = j - 1;
        let h = g.spacing();
        let (r0, r1) = (self.d.values[i + 1], self.d.values[i]);
        let scale = h / self.right_mass();
        let a = 0.5 * (r1 - r0) * scale;
        let b = r0 * scale;
        g.node(j) - h * Self::solve_cell(a, b, q - self.right[j])
    }

    fn left_mass(&self) -> f64 {
        self.d.mass()
    }

    fn right_mass(&self) -> f64 {
        self.d.mass()
    }

    /// Lower (`lower = true`) or upper tail mass at an arbitrary `x`.
    pub(crate) fn tail_at(&self, x: f64, lower: bool) -> f64 {
        cdf_at(self, self.d, x, lower)
    }

    pub(crate) fn quantile(&self, p: f64) -> f64 {
        if p <= 0.5 {
            self.quantile_lower(p)
        } else {
            self.quantile_upper(1.0 - p)
        }
    }
}

/// Discretizes `exp(-f)` on `grid`, checking that at most 1e-8 of the mass is
/// lost to truncation, and renormalizes.
pub fn discretize(spec: &DensitySpec, grid: &Grid) -> Result<GridDensity> {
    let values: Vec<f64> = grid.nodes().iter().map(|&x| spec.density(x)).collect();
    let mass = grid.integrate(&values);
    if !mass.is_finite() {
        return Err(Error::NumericOverflow("discretized density"));
    }
    if mass < 1.0 - TRUNCATION_LIMIT {
        return Err(Error::Truncation {
            outside: 1.0 - mass,
            limit: TRUNCATION_LIMIT,
        });
    }
    GridDensity::normalized(*grid, values)
}

pub fn cdf_values(d: &GridDensity) -> Vec<f64> {
    d.cdf_values()
}

pub fn quantile(d: &GridDensity, p: f64) -> Result<f64> {
    d.quantile(p)
}

pub fn second_moment(d: &GridDensity) -> f64 {
    d.second_moment()
}

/// `KL(p || q)` by trapezoid quadrature.
pub fn kl_divergence(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.grid.ensure_matches(&q.grid)?;
    let integrand: Vec<f64> = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .collect();
    Ok(p.grid.integrate(&integrand))
}

/// Density of `T_# d` on `target` for a strictly increasing map given by its
/// nodal values `T(x_i)`.
///
/// Uses `log b(T(x)) = log a(x) - log T'(x)` with cubic interpolation of
/// `log a` and `T`. Target nodes beyond the image of the source grid carry
/// negligible mass; their log-density is extrapolated linearly. Fails if more
/// than 1e-8 of the mass lands outside `target`.
pub fn pushforward_monotone(
    d: &GridDensity,
    map_values: &[f64],
    target: &Grid,
) -> Result<GridDensity> {
    let g = d.grid;
    let n = g.len();
    if map_values.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} map values for {n} nodes",
            map_values.len()
        )));
    }
    for i in 1..n {
        if !(map_values[i] > map_values[i - 1]) {
            return Err(Error::NonMonotoneMap { index: i });
        }
    }

    let cdf = TailCdf::new(d);
    let inv = MonotoneInverse::new(g, map_values);
    // Mass mapped beyond the target interval.
    let mut outside = 0.0;
    if target.lower() > map_values[0] {
        let x = inv.solve(target.lower());
        outside += cdf_at(&cdf, d, x, true);
    }
    if target.upper() < map_values[n - 1] {
        let x = inv.solve(target.upper());
        outside += cdf_at(&cdf, d, x, false);
    }
    if outside > TRUNCATION_LIMIT {
        return Err(Error::Truncation {
            outside,
            limit: TRUNCATION_LIMIT,
        });
    }

    let log_a = Cubic::new(g, d.log_values());
    let m = target.len();
    let mut logb = vec![f64::NAN; m];
    let (img_lo, img_hi) = (map_values[0], map_values[n - 1]);
    for (j, lb) in logb.iter_mut().enumerate() {
        let y = target.node(j);
        if y < img_lo || y > img_hi {
            continue;
        }
        let x = inv.solve(y);
        let jac = inv.deriv(x);
        *lb = log_a.eval(x) - jac.ln();
    }
    let first = logb.iter().position(|v| v.is_finite());
    let last = logb.iter().rposition(|v| v.is_finite());
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) if b > a => (a, b),
        _ => {
            return Err(Error::Truncation {
                outside: 1.0,
                limit: TRUNCATION_LIMIT,
            })
        }
    };
    let slope_lo = logb[first + 1] - logb[first];
    for j in (0..first).rev() {
        logb[j] = logb[j + 1] - slope_lo;
    }
    let slope_hi = logb[last] - logb[last - 1];
    for j in last + 1..m {
        logb[j] = logb[j - 1] + slope_hi;
    }
    GridDensity::from_log(*target, &logb)
}

/// Lower (`lower = true`) or upper tail mass of `d` at an arbitrary `x`.
fn cdf_at(cdf: &TailCdf<'_>, d: &GridDensity, x: f64, lower: bool) -> f64 {
    let g = d.grid;
    if x <= g.lower() {
        return if lower { 0.0 } else { 1.0 };
    }
    if x >= g.upper() {
        return if lower { 1.0 } else { 0.0 };
    }
    let (i, s) = g.locate(x);
    let h = g.spacing();
    let (r0, r1) = (d.values[i], d.values[i + 1]);
    let partial = h * (r0 * s + 0.5 * (r1 - r0) * s * s) / d.mass();
    if lower {
        cdf.left[i] + partial
    } else {
        let cell = h * 0.5 * (r0 + r1) / d.mass();
        cdf.right[i + 1] + (cell - partial)
    }
}

/// Inverse of a strictly increasing map given on a uniform grid, using the
/// cubic interpolant of the map.
pub(crate) struct MonotoneInverse<'a> {
    grid: Grid,
    values: &'a [f64],
    cubic: Cubic,
}

impl<'a> MonotoneInverse<'a> {
    pub(crate) fn new(grid: Grid, values: &'a [f64]) -> Self {
        MonotoneInverse {
            grid,
            values,
            cubic: Cubic::new(grid, values.to_vec()),
        }
    }

    /// `T'(x)`; falls back to the cell secant if the cubic slope is not
    /// positive.
    pub(crate) fn deriv(&self, x: f64) -> f64 {
        let d = self.cubic.deriv(x);
        if d > 0.0 {
            d
        } else {
            let (i, _) = self.grid.locate(x);
            (self.values[i + 1] - self.values[i]) / self.grid.spacing()
        }
    }

    /// `T^{-1}(y)` for `y` in the image of the grid.
    pub(crate) fn solve(&self, y: f64) -> f64 {
        let n = self.values.len();
        let j = self.values.partition_point(|&v| v <= y).clamp(1, n - 1);
        let i = j - 1;
        let (t0, t1) = (self.values[i], self.values[i + 1]);
        let (a, b) = (self.grid.node(i), self.grid.node(i + 1));
        if y == t0 {
            return a;
        }
        if y == t1 {
            return b;
        }
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (y - t0) / (t1 - t0) * (b - a);
        for _ in 0..50 {
            let r = self.cubic.eval(x) - y;
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dx = r / self.deriv(x);
            let mut next = x - dx;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

/// `count` i.i.d. inverse-CDF samples, deterministic in `seed`.
pub fn sample(d: &GridDensity, count: usize, seed: u64) -> Vec<f64> {
    let cdf = TailCdf::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| cdf.quantile(rng.random::<f64>()))
        .collect()
}
