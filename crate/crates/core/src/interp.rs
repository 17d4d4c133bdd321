//! Interpolation of nodal data.

use crate::grid::{derivative4, Grid};

/// Piecewise cubic Hermite interpolant on a uniform grid. Slopes default to
/// fourth-order finite differences, so the interpolant and its derivative are
/// accurate to O(h^4) and O(h^3). Outside the grid the end cells are
/// extrapolated.
#[derive(Debug, Clone)]
pub struct Cubic {
    grid: Grid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Cubic {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        let slopes = derivative4(&values, grid.spacing());
        Cubic {
            grid,
            values,
            slopes,
        }
    }

    pub fn with_slopes(grid: Grid, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), slopes.len());
        Cubic {
            grid,
            values,
            slopes,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    #[inline]
    fn cell(&self, x: f64) -> (usize, f64, f64) {
        let (i, s) = self.grid.locate(x);
        (i, s, self.grid.spacing())
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let (i, s, h) = self.cell(x);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        let (i, s, h) = self.cell(x);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * (y0 - y1) + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (3.0 * s2 - 2.0 * s) * m1)
            / h
    }

    #[inline]
    pub fn second_deriv(&self, x: f64) -> f64 {
        let (i, s, h) = self.cell(x);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        ((12.0 * s - 6.0) * (y0 - y1) + (6.0 * s - 4.0) * m0 + (6.0 * s - 2.0) * m1) / (h * h)
    }
}

/// Linear interpolation of nodal values on a uniform grid (end cells
/// extrapolated).
#[inline]
pub fn linear(grid: &Grid, values: &[f64], x: f64) -> f64 {
    let (i, s) = grid.locate(x);
    values[i] + s * (values[i + 1] - values[i])
}

/// Linear interpolation on strictly increasing, possibly non-uniform abscissae
/// (end segments extrapolated).
pub fn linear_nonuniform(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let j = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let s = (x - x0) / (x1 - x0);
    ys[j - 1] + s * (ys[j] - ys[j - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_reproduces_cubics() {
        let g = Grid::new(-1.0, 2.0, 31).unwrap();
        let f = |x: f64| x * x * x - 2.0 * x + 0.5;
        let c = Cubic::new(g, g.nodes().iter().map(|&x| f(x)).collect());
        for k in 0..97 {
            let x = -1.0 + 3.0 * k as f64 / 96.0;
            assert!((c.eval(x) - f(x)).abs() < 1e-11);
            assert!((c.deriv(x) - (3.0 * x * x - 2.0)).abs() < 1e-9);
            assert!((c.second_deriv(x) - 6.0 * x).abs() < 1e-6);
        }
    }

    #[test]
    fn nonuniform_linear_hits_nodes() {
        let xs = [0.0, 0.5, 2.0];
        let ys = [1.0, 2.0, 5.0];
        assert_eq!(linear_nonuniform(&xs, &ys, 0.5), 2.0);
        assert!((linear_nonuniform(&xs, &ys, 1.25) - 3.5).abs() < 1e-15);
        assert!((linear_nonuniform(&xs, &ys, -1.0) - -1.0).abs() < 1e-15);
    }
}
