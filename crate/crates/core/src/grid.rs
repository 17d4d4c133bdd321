//! Uniform 1-D grids, trapezoid quadrature and finite differences.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n: usize,
}

impl Grid {
    pub const MIN_NODES: usize = 16;

    pub fn new(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if n < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {} nodes, got {n}",
                Self::MIN_NODES
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidGrid(format!("bad interval [{lower}, {upper}]")));
        }
        Ok(Grid { lower, upper, n })
    }

    /// `[-half_width, half_width]` with `n` nodes.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i + 1 == self.n {
            0.5 * h
        } else {
            h
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weight(i)).collect()
    }

    /// Trapezoid integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let h = self.spacing();
        let inner: f64 = values[1..self.n - 1].iter().sum();
        h * (inner + 0.5 * (values[0] + values[self.n - 1]))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Cell index `i` in `0..n-1` and local coordinate `s` in `[0, 1]` with
    /// `x = x_i + s h`. Points outside the grid are clamped to the end cells
    /// (with `s` outside `[0, 1]`).
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.spacing();
        let r = (x - self.lower) / h;
        let i = if r <= 0.0 {
            0
        } else {
            (r.floor() as usize).min(self.n - 2)
        };
        (i, r - i as f64)
    }

    /// Node index nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.lower) / self.spacing()).round();
        if r <= 0.0 {
            0
        } else {
            (r as usize).min(self.n - 1)
        }
    }

    /// Indices excluding `margin` (a fraction of the node count) at each end.
    /// `interior(0.1)` is the interior 80% of the grid.
    pub fn interior(&self, margin: f64) -> Range<usize> {
        let k = (margin * self.n as f64).round() as usize;
        let k = k.min(self.n / 2 - 1);
        k..self.n - k
    }

    /// The grid formed by the nodes in `range` (same spacing).
    pub fn subgrid(&self, range: Range<usize>) -> Result<Grid> {
        if range.end > self.n || range.len() < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!("bad subrange {range:?}")));
        }
        Grid::new(self.node(range.start), self.node(range.end - 1), range.len())
    }

    /// Same interval with `2n` nodes.
    pub fn doubled(&self) -> Grid {
        Grid {
            n: 2 * self.n,
            ..*self
        }
    }

    /// Equality up to floating-point noise in the endpoints.
    pub fn matches(&self, other: &Grid) -> bool {
        let tol = 1e-12 * (self.upper - self.lower).abs().max(1.0);
        self.n == other.n
            && (self.lower - other.lower).abs() <= tol
            && (self.upper - other.upper).abs() <= tol
    }

    pub fn ensure_matches(&self, other: &Grid) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// First derivative: central differences inside, second-order one-sided at
/// the ends.
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Second derivative: three-point stencil inside, second-order one-sided at
/// the ends.
pub fn second_derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let h2 = h * h;
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2;
    }
    d[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2;
    d[n - 1] =
        (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
    d
}

/// Fourth-order first derivative (five-point stencils, one-sided near the
/// ends). Used for Hermite slopes.
pub fn derivative4(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let c = 1.0 / (12.0 * h);
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) * c;
    }
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) * c;
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) * c;
    let m = n - 1;
    d[m] = (25.0 * v[m] - 48.0 * v[m - 1] + 36.0 * v[m - 2] - 16.0 * v[m - 3] + 3.0 * v[m - 4]) * c;
    d[m - 1] = (3.0 * v[m] + 10.0 * v[m - 1] - 18.0 * v[m - 2] + 6.0 * v[m - 3] - v[m - 4]) * c;
    d
}

/// Cumulative trapezoid integral of `values`, zero at node `anchor`.
pub fn cumulative(values: &[f64], h: f64, anchor: usize) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in anchor + 1..n {
        out[i] = out[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] - 0.5 * h * (values[i] + values[i + 1]);
    }
    out
}

pub fn sup_norm(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Numerically stable `log(sum(exp(terms)))`; `-inf` for an empty slice.
pub fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + s.ln()
}
