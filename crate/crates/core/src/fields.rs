//! Phase and isostable fields, their gradients, and level-set extraction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::io::fmt17;

type C = Complex64;

/// Asymptotic phase `ψ = arg(Q₊ · e^{−i arg Q₊(ref)})`, in `(−π, π]`.
pub fn phase_field(q_plus: &ScalarField, reference: (f64, f64)) -> Result<ScalarField> {
    let grid = *q_plus.grid();
    let k = grid.nearest_node(reference);
    let q_ref = q_plus.values()[k];
    if q_ref.norm() < 1e-12 * q_plus.max_abs() || q_ref.norm() == 0.0 {
        return Err(Error::PhaseUndefined);
    }
    let rot = q_ref.conj() / q_ref.norm();
    let psi = q_plus
        .values()
        .iter()
        .map(|q| {
            let a = (q * rot).arg();
            if a <= -PI { PI } else { a }
        })
        .collect();
    ScalarField::from_real(grid, psi, "psi")
}

/// Midpoint between the density mode and the right edge of the domain.
pub fn default_phase_reference(p0: &ScalarField) -> (f64, f64) {
    let grid = p0.grid();
    let (x, y) = grid.node_point(argmax_re(p0)).expect("argmax is a node");
    (0.5 * (x + grid.domain().x[1]), y)
}

fn argmax_re(f: &ScalarField) -> usize {
    f.values()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// Tolerated imaginary part of the isostable eigenvector, relative to its maximum.
pub const REALNESS_TOL: f64 = 1e-8;

/// Real isostable field with unit weighted L2 norm, positive at the density mode.
pub fn isostable_field(q_floq: &ScalarField, p0: &ScalarField) -> Result<ScalarField> {
    let grid = *q_floq.grid();
    if p0.grid() != &grid {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: p0.grid().len() });
    }
    let v = q_floq.values();
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
    if pivot.norm() == 0.0 {
        return Err(Error::NotReal(0.0));
    }
    let rot = pivot.conj() / pivot.norm();
    let w: Vec<C> = v.iter().map(|x| x * rot).collect();
    let contamination = w.iter().map(|x| x.im.abs()).fold(0.0, f64::max) / pivot.norm();
    if contamination > REALNESS_TOL {
        return Err(Error::NotReal(contamination));
    }
    let mut sigma: Vec<f64> = w.iter().map(|x| x.re).collect();
    let norm = (sigma.iter().map(|s| s * s).sum::<f64>() * grid.cell_area()).sqrt();
    let max = sigma.iter().map(|s| s.abs()).fold(0.0, f64::max);
    let at_mode = sigma[argmax_re(p0)];
    let sign_source = if at_mode.abs() >= 1e-10 * max {
        at_mode
    } else {
        let field = ScalarField::from_real(grid, sigma.clone(), "")?;
        field.interpolate(centroid(p0))?.re
    };
    let s = if sign_source < 0.0 { -1.0 } else { 1.0 } / norm;
    sigma.iter_mut().for_each(|x| *x *= s);
    ScalarField::from_real(grid, sigma, "sigma")
}

fn centroid(p0: &ScalarField) -> (f64, f64) {
    let grid = p0.grid();
    let (mut m, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for (k, (_, _, x, y)) in grid.nodes().enumerate() {
        let w = p0.values()[k].re.max(0.0);
        m += w;
        cx += w * x;
        cy += w * y;
    }
    if m > 0.0 { (cx / m, cy / m) } else { grid.domain().center() }
}

/// Centered differences inside, first-order one-sided differences on the border rows.
pub fn gradient(field: &ScalarField) -> (ScalarField, ScalarField) {
    let g = *field.grid();
    let (n, m) = (g.n(), g.m());
    let v = field.values();
    let at = |i: usize, j: usize| v[i + n * j];
    let d = |lo: C, hi: C, span: f64| (hi - lo) / span;
    let mut gx = Vec::with_capacity(g.len());
    let mut gy = Vec::with_capacity(g.len());
    for j in 0..m {
        for i in 0..n {
            gx.push(match i {
                0 => d(at(0, j), at(1, j), g.dx()),
                _ if i == n - 1 => d(at(i - 1, j), at(i, j), g.dx()),
                _ => d(at(i - 1, j), at(i + 1, j), 2.0 * g.dx()),
            });
            gy.push(match j {
                0 => d(at(i, 0), at(i, 1), g.dy()),
                _ if j == m - 1 => d(at(i, j - 1), at(i, j), g.dy()),
                _ => d(at(i, j - 1), at(i, j + 1), 2.0 * g.dy()),
            });
        }
    }
    let label = field.label();
    (
        ScalarField::new(g, gx, format!("d{label}/dx")).expect("same grid"),
        ScalarField::new(g, gy, format!("d{label}/dy")).expect("same grid"),
    )
}

/// Polyline level curve; closed contours repeat their first vertex at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<(f64, f64)>,
    pub closed: bool,
    pub level: f64,
    pub label: String,
}

impl Contour {
    /// Shoelace area of the polygon (implicitly closed for open contours).
    pub fn area(&self) -> f64 {
        let p = &self.points;
        if p.len() < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for k in 0..p.len() {
            let (a, b) = (p[k], p[(k + 1) % p.len()]);
            s += a.0 * b.1 - b.0 * a.1;
        }
        0.5 * s.abs()
    }

    /// Arc length of the polyline.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
    }

    /// Vertex-averaged distance from `center`.
    pub fn mean_radius(&self, center: (f64, f64)) -> f64 {
        let pts = if self.closed { &self.points[..self.points.len() - 1] } else { &self.points[..] };
        pts.iter().map(|p| (p.0 - center.0).hypot(p.1 - center.1)).sum::<f64>() / pts.len() as f64
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x,y")?;
        for (x, y) in &self.points {
            writeln!(w, "{},{}", fmt17(*x), fmt17(*y))?;
        }
        Ok(())
    }
}

/// Zero contours of a real field, largest enclosed area first.
pub fn zero_level_set(field: &ScalarField) -> Result<Vec<Contour>> {
    let values = field.real_parts();
    let mut contours = march(field.grid(), &values, 0.0, |_, _| true, field.label());
    if contours.is_empty() {
        return Err(Error::NoZeroCrossing);
    }
    contours.sort_by(|a, b| b.area().total_cmp(&a.area()));
    Ok(contours)
}

/// Level curves `ψ = value`, traced as zeros of `sin(ψ − value)` on the cells
/// where `cos(ψ − value) > 0` at all four corners, which excludes the branch cut.
pub fn isochron(psi: &ScalarField, value: f64) -> Vec<Contour> {
    let grid = psi.grid();
    let n = grid.n();
    let shifted: Vec<f64> = psi.values().iter().map(|p| p.re - value).collect();
    let s: Vec<f64> = shifted.iter().map(|d| d.sin()).collect();
    let c: Vec<f64> = shifted.iter().map(|d| d.cos()).collect();
    let front = |i: usize, j: usize| {
        [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)].iter().all(|&(a, b)| c[a + n * b] > 0.0)
    };
    let mut out = march(grid, &s, 0.0, front, &format!("isochron {value}"));
    out.sort_by(|a, b| b.length().total_cmp(&a.length()));
    out
}

/// Sum of wrapped phase increments along a contour; `±2π` for one turn.
pub fn phase_winding(psi: &ScalarField, contour: &Contour) -> Result<f64> {
    let mut total = 0.0;
    let vals: Vec<f64> = contour.points.iter().map(|&p| psi.interpolate(p).map(|v| v.re)).collect::<Result<_>>()?;
    for w in vals.windows(2) {
        let mut d = w[1] - w[0];
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        total += d;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// Between nodes `(i, j)` and `(i + 1, j)`.
    H(usize, usize),
    /// Between nodes `(i, j)` and `(i, j + 1)`.
    V(usize, usize),
}

/// Marching squares with linear edge interpolation and the cell-average saddle rule.
fn march(grid: &Grid, values: &[f64], level: f64, include: impl Fn(usize, usize) -> bool, label: &str) -> Vec<Contour> {
    let (n, m) = (grid.n(), grid.m());
    let val = |i: usize, j: usize| values[i + n * j];
    let above = |i: usize, j: usize| val(i, j) > level;
    let point = |e: Edge| -> (f64, f64) {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (val(i0, j0), val(i1, j1));
        let t = (level - a) / (b - a);
        let (x0, y0, x1, y1) = (grid.x(i0), grid.y(j0), grid.x(i1), grid.y(j1));
        (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..m - 1 {
        for i in 0..n - 1 {
            if !include(i, j) {
                continue;
            }
            let c = [above(i, j), above(i + 1, j), above(i + 1, j + 1), above(i, j + 1)];
            // edges in corner order: bottom (0-1), right (1-2), top (2-3), left (3-0)
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let crossed: Vec<Edge> = (0..4).filter(|&e| c[e] != c[(e + 1) % 4]).map(|e| edges[e]).collect();
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let center = 0.25 * (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1)) > level;
                    // cut off the two corners whose state differs from the centre
                    let [b, r, t, l] = edges;
                    if c[0] != center {
                        segments.push((l, b));
                        segments.push((r, t));
                    } else {
                        segments.push((b, r));
                        segments.push((t, l));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(s);
        by_edge.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    let trace = |start_seg: usize, start_edge: Edge, used: &mut Vec<bool>| -> Contour {
        let mut edges = vec![start_edge];
        let mut seg = start_seg;
        let mut at = start_edge;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            edges.push(next);
            at = next;
            match by_edge[&at].iter().copied().find(|&s| !used[s]) {
                Some(s) => seg = s,
                None => break,
            }
        }
        let closed = edges.len() > 2 && edges.first() == edges.last();
        Contour { points: edges.into_iter().map(point).collect(), closed, level, label: label.to_string() }
    };
    // open curves start at edges touched by a single segment; do them first
    let mut open_starts: Vec<(Edge, usize)> =
        by_edge.iter().filter(|(_, s)| s.len() == 1).map(|(e, s)| (*e, s[0])).collect();
    open_starts.sort_by_key(|(e, _)| edge_key(*e, n));
    for (e, s) in open_starts {
        if !used[s] {
            contours.push(trace(s, e, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let start = segments[s].0;
            contours.push(trace(s, start, &mut used));
        }
    }
    contours
}

fn edge_key(e: Edge, n: usize) -> usize {
    match e {
        Edge::H(i, j) => 2 * (i + n * j),
        Edge::V(i, j) => 2 * (i + n * j) + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;

    fn grid(n: usize) -> Grid {
        Grid::new(Domain::square(1.0), n, n).unwrap()
    }

    #[test]
    fn gradient_of_affine_and_quadratic_fields() {
        let g = grid(20);
        let f = ScalarField::from_real_fn(g, "f", |x, y| 1.5 - 2.0 * x + 0.25 * y);
        let (gx, gy) = gradient(&f);
        for (k, (i, j, _, _)) in g.nodes().enumerate() {
            if i > 0 && j > 0 && i < g.n() - 1 && j < g.m() - 1 {
                assert!((gx.values()[k].re + 2.0).abs() < 1e-12);
                assert!((gy.values()[k].re - 0.25).abs() < 1e-12);
            }
        }
        let g = Grid::new(Domain { x: [-0.05, 0.95], y: [0.0, 1.0] }, 10, 10).unwrap();
        // node 3 sits at x = 0.3
        assert!((g.x(3) - 0.3).abs() < 1e-15);
        let (gx, _) = gradient(&ScalarField::from_real_fn(g, "q", |x, _| x * x));
        assert!((gx.at(3, 4).re - 0.6).abs() < 1e-12);
        let (cx, cy) = gradient(&ScalarField::from_real_fn(g, "c", |_, _| 4.0));
        assert!(cx.max_abs() == 0.0 && cy.max_abs() == 0.0);
    }

    #[test]
    fn circle_is_recovered() {
        let g = grid(81);
        let f = ScalarField::from_real_fn(g, "circle", |x, y| x * x + y * y - 0.25);
        let cs = zero_level_set(&f).unwrap();
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert!(c.closed);
        assert_eq!(c.points.first(), c.points.last());
        for p in &c.points {
            assert!((p.0.hypot(p.1) - 0.5).abs() < g.dx());
            assert!(f.interpolate(*p).unwrap().re.abs() <= 1e-6 * f.max_abs());
        }
        assert!((c.area() - PI * 0.25).abs() < 0.01);
    }

    #[test]
    fn single_signed_field_has_no_contour() {
        let f = ScalarField::from_real_fn(grid(10), "one", |_, _| 1.0);
        assert!(matches!(zero_level_set(&f), Err(Error::NoZeroCrossing)));
    }

    #[test]
    fn open_line_and_two_circles() {
        let g = grid(40);
        let line = zero_level_set(&ScalarField::from_real_fn(g, "l", |x, y| x - 0.3 * y - 0.1)).unwrap();
        assert_eq!(line.len(), 1);
        assert!(!line[0].closed);
        let two = ScalarField::from_real_fn(g, "c", |x, y| {
            ((x - 0.5).powi(2) + y * y - 0.09).min((x + 0.5).powi(2) + y * y - 0.04)
        });
        let cs = zero_level_set(&two).unwrap();
        assert_eq!(cs.len(), 2);
        assert!(cs.iter().all(|c| c.closed));
        assert!(cs[0].area() > cs[1].area());
        assert!((cs[0].mean_radius((0.5, 0.0)) - 0.3).abs() < g.dx());
    }

    #[test]
    fn saddle_cells_are_consistent() {
        // x·y has a saddle at the origin; the zero set is the two axes
        let g = Grid::new(Domain::square(1.0), 10, 10).unwrap();
        let f = ScalarField::from_real_fn(g, "xy", |x, y| x * y + 1e-3);
        let cs = zero_level_set(&f).unwrap();
        assert_eq!(cs.len(), 2);
        for c in &cs {
            for p in &c.points {
                assert!(f.interpolate(*p).unwrap().re.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_of_the_linear_eigenfunction() {
        let g = grid(41);
        let q = ScalarField::from_fn(g, "q", |x, y| C::new(x, y) * C::new(0.3, -2.0));
        let psi = phase_field(&q, (0.5, 0.0)).unwrap();
        assert!(psi.interpolate((0.5, 0.0)).unwrap().re.abs() < 1e-12);
        let k = g.nearest_node((0.0, 0.5));
        let (x, y) = g.node_point(k).unwrap();
        assert!((psi.values()[k].re - y.atan2(x)).abs() < 1e-12);
        for v in psi.values() {
            assert!(v.re > -PI && v.re <= PI);
        }
        let circle = Contour {
            points: (0..=64).map(|k| {
                let t = k as f64 / 64.0 * 2.0 * PI;
                (0.6 * t.cos(), 0.6 * t.sin())
            }).collect(),
            closed: true,
            level: 0.0,
            label: String::new(),
        };
        assert!((phase_winding(&psi, &circle).unwrap() - 2.0 * PI).abs() < 1e-2);
        let zero = ScalarField::from_fn(g, "z", |x, _| C::new(x.max(0.0), 0.0));
        assert!(matches!(phase_field(&zero, (-0.5, 0.0)), Err(Error::PhaseUndefined)));
    }

    #[test]
    fn isochrons_follow_rays() {
        let g = grid(41);
        let psi = ScalarField::from_real_fn(g, "psi", |x, y| y.atan2(x));
        for value in [0.0, PI / 2.0, PI, -2.0] {
            let cs = isochron(&psi, value);
            assert!(!cs.is_empty(), "{value}");
            for p in &cs[0].points {
                let r = p.0.hypot(p.1);
                let dist = (p.0 * value.sin() - p.1 * value.cos()).abs();
                assert!(dist < g.dx(), "value {value} point {p:?}");
                assert!(p.0 * value.cos() + p.1 * value.sin() >= -g.dx() || r < 2.0 * g.dx());
            }
        }
        let a = isochron(&psi, 0.0);
        let b = isochron(&psi, PI);
        for p in a.iter().flat_map(|c| &c.points) {
            assert!(!b.iter().flat_map(|c| &c.points).any(|q| q == p));
        }
    }

    #[test]
    fn isostable_normalization() {
        let g = grid(30);
        let p0 = ScalarField::from_real_fn(g, "p0", |x, y| (-(x * x + y * y) / 0.1).exp());
        let raw = ScalarField::from_real_fn(g, "s", |x, y| 2.0 - 8.0 * (x * x + y * y));
        let s = isostable_field(&raw, &p0).unwrap();
        let norm: f64 = s.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_area();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(s.interpolate((0.0, 0.0)).unwrap().re > 0.0);
        let flipped = ScalarField::new(g, raw.values().iter().map(|v| v * C::new(-7.0, 0.0)).collect(), "f").unwrap();
        let t = isostable_field(&flipped, &p0).unwrap();
        for (a, b) in s.values().iter().zip(t.values()) {
            assert!((a - b).norm() < 1e-14);
        }
        let rotated = ScalarField::new(g, raw.values().iter().map(|v| v * C::new(0.6, 0.8)).collect(), "r").unwrap();
        assert!(isostable_field(&rotated, &p0).is_ok());
        let complex = ScalarField::from_fn(g, "c", C::new);
        assert!(matches!(isostable_field(&complex, &p0), Err(Error::NotReal(_))));
    }
}
