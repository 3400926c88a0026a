//! Cell-centered rectangular grids and fields sampled on them.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::fmt17;
use crate::model::Domain;

/// `n × m` cell-centered nodes on a rectangle. Node `(i, j)` sits at
/// `(x⁻ + (i + ½)Δx, y⁻ + (j + ½)Δy)` with `Δx = (x⁺ − x⁻)/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    m: usize,
    domain: Domain,
    dx: f64,
    dy: f64,
}

pub const MIN_POINTS: usize = 8;

impl Grid {
    pub fn new(domain: Domain, n: usize, m: usize) -> Result<Grid> {
        if n < MIN_POINTS || m < MIN_POINTS {
            return Err(Error::InvalidGrid(format!("need at least {MIN_POINTS} points per axis, got {n}×{m}")));
        }
        let w = domain.x[1] - domain.x[0];
        let h = domain.y[1] - domain.y[0];
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("degenerate rectangle {domain:?}")));
        }
        Ok(Grid { n, m, domain, dx: w / n as f64, dy: h / m as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    /// Area weight `Δx Δy` of one node.
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.domain.x[0] + (i as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.domain.y[0] + (j as f64 + 0.5) * self.dy
    }

    /// `k = i + n·j`.
    pub fn flat_index(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.n || j >= self.m {
            return Err(Error::IndexOutOfRange(format!("({i}, {j}) on a {}×{} grid", self.n, self.m)));
        }
        Ok(self.idx(i, j))
    }

    #[inline]
    pub(crate) fn idx(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    pub fn node_indices(&self, k: usize) -> Result<(usize, usize)> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange(format!("node {k} of {}", self.len())));
        }
        Ok((k % self.n, k / self.n))
    }

    pub fn node_point(&self, k: usize) -> Result<(f64, f64)> {
        let (i, j) = self.node_indices(k)?;
        Ok((self.x(i), self.y(j)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.m).flat_map(move |j| (0..self.n).map(move |i| (i, j, self.x(i), self.y(j))))
    }

    /// Flat index of the node closest to `p` (clamped onto the grid).
    pub fn nearest_node(&self, (x, y): (f64, f64)) -> usize {
        let ci = ((x - self.domain.x[0]) / self.dx - 0.5).round().clamp(0.0, (self.n - 1) as f64);
        let cj = ((y - self.domain.y[0]) / self.dy - 0.5).round().clamp(0.0, (self.m - 1) as f64);
        self.idx(ci as usize, cj as usize)
    }

    /// Lower-left node of the interpolation cell and the local coordinates in it.
    /// Points in the half-cell margin are clamped onto the node hull.
    pub(crate) fn locate(&self, (x, y): (f64, f64)) -> Result<(usize, usize, f64, f64)> {
        if !self.domain.contains((x, y)) {
            return Err(Error::OutsideGrid(x, y));
        }
        let u = ((x - self.domain.x[0]) / self.dx - 0.5).clamp(0.0, (self.n - 1) as f64);
        let v = ((y - self.domain.y[0]) / self.dy - 0.5).clamp(0.0, (self.m - 1) as f64);
        let i = (u.floor() as usize).min(self.n - 2);
        let j = (v.floor() as usize).min(self.m - 2);
        Ok((i, j, u - i as f64, v - j as f64))
    }
}

/// Values on every node of a grid, complex in general.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<Complex64>,
    label: String,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<Complex64>, label: impl Into<String>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(ScalarField { grid, values, label: label.into() })
    }

    pub fn from_real(grid: Grid, values: Vec<f64>, label: impl Into<String>) -> Result<ScalarField> {
        ScalarField::new(grid, values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(), label)
    }

    pub fn from_fn(grid: Grid, label: impl Into<String>, f: impl Fn(f64, f64) -> Complex64) -> ScalarField {
        let values = grid.nodes().map(|(_, _, x, y)| f(x, y)).collect();
        ScalarField { grid, values, label: label.into() }
    }

    pub fn from_real_fn(grid: Grid, label: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField::from_fn(grid, label, |x, y| Complex64::new(f(x, y), 0.0))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> ScalarField {
        self.label = label.into();
        self
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Bilinear interpolation over the enclosing cell.
    pub fn interpolate(&self, p: (f64, f64)) -> Result<Complex64> {
        let (i, j, s, t) = self.grid.locate(p)?;
        Ok(self.bilinear(i, j, s, t))
    }

    #[inline]
    pub(crate) fn bilinear(&self, i: usize, j: usize, s: f64, t: f64) -> Complex64 {
        let k = self.grid.idx(i, j);
        let n = self.grid.n;
        let (a, b, c, d) = (self.values[k], self.values[k + 1], self.values[k + n], self.values[k + n + 1]);
        a * ((1.0 - s) * (1.0 - t)) + b * (s * (1.0 - t)) + c * ((1.0 - s) * t) + d * (s * t)
    }

    /// CSV with header `x,y,re,im`, rows ordered by `j` then `i`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x,y,re,im")?;
        for ((_, _, x, y), v) in self.grid.nodes().zip(&self.values) {
            writeln!(w, "{},{},{},{}", fmt17(x), fmt17(y), fmt17(v.re), fmt17(v.im))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn spacing() {
        let g = Grid::new(Domain::square(0.6), 151, 151).unwrap();
        assert!((g.dx() - 1.2 / 151.0).abs() < 1e-17);
        assert!((g.dx() - 7.947e-3).abs() < 1e-6);
        let h = Grid::new(Domain::square(PI / 2.0), 151, 151).unwrap();
        assert!((h.dy() - PI / 151.0).abs() < 1e-16);
        let r = Grid::new(Domain { x: [0.0, 1.0], y: [0.0, 2.0] }, 10, 20).unwrap();
        assert!((r.dx() - 0.1).abs() < 1e-16 && (r.dy() - 0.1).abs() < 1e-16);
        assert!((r.x(0) - 0.05).abs() < 1e-16 && (r.y(19) - 1.95).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(Domain::square(1.0), 7, 10).is_err());
        assert!(Grid::new(Domain { x: [1.0, 1.0], y: [0.0, 1.0] }, 10, 10).is_err());
    }

    #[test]
    fn indexing() {
        let g = Grid::new(Domain::square(1.0), 13, 9).unwrap();
        assert_eq!(g.flat_index(0, 0).unwrap(), 0);
        assert_eq!(g.flat_index(12, 8).unwrap(), 13 * 9 - 1);
        assert!(g.flat_index(13, 0).is_err());
        assert!(g.node_point(13 * 9).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (i, j) = (rng.random_range(0..13), rng.random_range(0..9));
            let k = g.flat_index(i, j).unwrap();
            assert_eq!(g.node_indices(k).unwrap(), (i, j));
            assert_eq!(g.node_point(k).unwrap(), (g.x(i), g.y(j)));
        }
        for k in 0..g.len() {
            let (i, j) = g.node_indices(k).unwrap();
            assert_eq!(g.flat_index(i, j).unwrap(), k);
        }
    }

    #[test]
    fn bilinear_is_exact_on_bilinear_functions() {
        let g = Grid::new(Domain { x: [-1.0, 2.0], y: [0.0, 1.0] }, 17, 11).unwrap();
        let f = |x: f64, y: f64| 0.3 - 1.2 * x + 2.5 * y + 0.7 * x * y;
        let field = ScalarField::from_real_fn(g, "f", f);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = (rng.random_range(g.x(0)..g.x(16)), rng.random_range(g.y(0)..g.y(10)));
            let v = field.interpolate(p).unwrap();
            assert!((v.re - f(p.0, p.1)).abs() < 1e-13, "{p:?}");
            assert_eq!(v.im, 0.0);
        }
        let c = ScalarField::from_fn(g, "c", |_, _| Complex64::new(2.0, -1.0));
        assert!((c.interpolate((0.4, 0.3)).unwrap() - Complex64::new(2.0, -1.0)).norm() < 1e-15);
        // exact node value
        let xy = ScalarField::from_real_fn(g, "xy", |x, y| x * y);
        let v = xy.interpolate((g.x(4), g.y(7))).unwrap();
        assert!((v.re - g.x(4) * g.y(7)).abs() < 1e-15);
    }

    #[test]
    fn margin_clamps_and_outside_errors() {
        let g = Grid::new(Domain::square(1.0), 10, 10).unwrap();
        let f = ScalarField::from_real_fn(g, "x", |x, _| x);
        let edge = f.interpolate((0.99, 0.0)).unwrap().re;
        assert!((edge - g.x(9)).abs() < 1e-15);
        assert!(matches!(f.interpolate((1.01, 0.0)), Err(Error::OutsideGrid(..))));
    }

    #[test]
    fn csv_layout() {
        let g = Grid::new(Domain { x: [0.0, 8.0], y: [0.0, 8.0] }, 8, 8).unwrap();
        let f = ScalarField::from_fn(g, "f", Complex64::new);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,y,re,im");
        assert_eq!(lines.len(), 65);
        assert!(lines[2].starts_with("1.5000000000000000e0,5.0000000000000000e-1"));
    }
}
