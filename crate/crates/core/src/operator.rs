//! Finite-difference assembly of the backward (generator) and forward
//! (Fokker–Planck) operators on a cell-centered grid.
//!
//! Backward rows discretize `f·∇u + Dᵢⱼ ∂ᵢ∂ⱼu` with centered differences.
//! Ghost nodes outside the grid mirror their inner neighbour, which is the
//! Neumann condition of a reflecting wall sitting half a cell outside the
//! outermost nodes. On truncated walls the first derivative is replaced by a
//! one-sided difference. Every backward row annihilates constants.
//!
//! Forward rows are written in flux form: the x-flux through the face between
//! nodes `a` and `b` is `(f_a ρ_a + f_b ρ_b)/2 − (D_b ρ_b − D_a ρ_a)/Δx`, walls
//! carry no flux, so every column sums to zero. Expanded in the interior this
//! is the centered difference of the products `fρ` and `Dρ`. The mixed
//! `D₁₂` part is the transpose of the backward cross stencil, and on truncated
//! walls the transpose of the one-sided advection correction is added, so the
//! forward operator is the exact discrete adjoint of the backward one for
//! both boundary kinds.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::io::fmt17;
use crate::model::{Boundary, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Compressed-row sparse matrix on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    grid: Grid,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    direction: Direction,
    boundary: Boundary,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(
        grid: Grid,
        mut triplets: Vec<(usize, usize, f64)>,
        direction: Direction,
        boundary: Boundary,
    ) -> Result<SparseOperator> {
        let n = grid.len();
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(Error::IndexOutOfRange(format!("entry ({r}, {c}) in a {n}×{n} operator")));
        }
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::NonFinite);
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if (r2, c2) != (r, c) {
                    break;
                }
                v += v2;
                it.next();
            }
            if v != 0.0 {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseOperator { grid, row_ptr, cols, vals, direction, boundary })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Largest distance `|col − row|` over all entries.
    pub fn bandwidth(&self) -> usize {
        self.triplets().map(|(r, c, _)| r.abs_diff(c)).max().unwrap_or(0)
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.dim()];
        for (_, c, v) in self.triplets() {
            col[c] += v.abs();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> SparseOperator {
        let direction = match self.direction {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        let t = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        SparseOperator::from_triplets(self.grid, t, direction, self.boundary).expect("transpose of a valid operator")
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, v) in self.row(r) {
                acc += x[c] * v;
            }
            *out = acc;
        }
    }

    pub fn apply(&self, field: &ScalarField) -> Result<ScalarField> {
        if field.values().len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: field.values().len() });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.matvec(field.values(), &mut out);
        ScalarField::new(self.grid, out, field.label())
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut a = Mat::<f64>::zeros(self.dim(), self.dim());
        for (r, c, v) in self.triplets() {
            a[(r, c)] = v;
        }
        a
    }

    /// One `row col value` line per stored entry.
    pub fn write_triplets(&self, mut w: impl Write) -> std::io::Result<()> {
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {}", fmt17(v))?;
        }
        Ok(())
    }
}

struct Coefficients {
    f: Vec<(f64, f64)>,
    d: Vec<[[f64; 2]; 2]>,
}

fn sample(spec: &ModelSpec, grid: &Grid) -> Result<Coefficients> {
    let mut f = Vec::with_capacity(grid.len());
    let mut d = Vec::with_capacity(grid.len());
    for (_, _, x, y) in grid.nodes() {
        f.push(spec.eval_drift((x, y))?);
        let dd = spec.eval_diffusion((x, y))?;
        if dd[0][0] < 0.0 || dd[1][1] < 0.0 || dd[0][0] * dd[1][1] - dd[0][1] * dd[1][0] < -1e-12 * (dd[0][0] + dd[1][1]).powi(2) {
            return Err(Error::InvalidModel(format!("diffusion not positive semidefinite at ({x}, {y})")));
        }
        d.push(dd);
    }
    Ok(Coefficients { f, d })
}

/// Mirror ghost index back onto the grid.
#[inline]
fn fold(i: isize, n: usize) -> usize {
    if i < 0 {
        0
    } else if i as usize >= n {
        n - 1
    } else {
        i as usize
    }
}

fn mixed_backward(grid: &Grid, d: &[[[f64; 2]; 2]], out: &mut Vec<(usize, usize, f64)>) {
    let (n, m) = (grid.n(), grid.m());
    let scale = 1.0 / (4.0 * grid.dx() * grid.dy());
    for j in 0..m {
        for i in 0..n {
            let k = grid.idx(i, j);
            // D₁₂ ∂x∂y + D₂₁ ∂y∂x
            let c = 2.0 * d[k][0][1] * scale;
            if c == 0.0 {
                continue;
            }
            for (di, dj, s) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let col = grid.idx(fold(i as isize + di, n), fold(j as isize + dj, m));
                out.push((k, col, s * c));
            }
        }
    }
}

/// Backward operator `L†u = f·∇u + Dᵢⱼ ∂ᵢ∂ⱼu`.
pub fn assemble_backward(spec: &ModelSpec, grid: &Grid) -> Result<SparseOperator> {
    let coef = sample(spec, grid)?;
    let boundary = spec.boundary();
    let (n, m) = (grid.n(), grid.m());
    let mut t = Vec::with_capacity(9 * grid.len());
    for j in 0..m {
        for i in 0..n {
            let k = grid.idx(i, j);
            let (fx, fy) = coef.f[k];
            let d = coef.d[k];
            axis_backward(&mut t, k, i, n, 1, fx, d[0][0], grid.dx(), boundary);
            axis_backward(&mut t, k, j, m, n, fy, d[1][1], grid.dy(), boundary);
        }
    }
    mixed_backward(grid, &coef.d, &mut t);
    SparseOperator::from_triplets(*grid, t, Direction::Backward, boundary)
}

/// One axis of a backward row. `pos` is the node position along the axis,
/// `len` the axis length and `stride` the flat-index step between neighbours.
#[allow(clippy::too_many_arguments)]
fn axis_backward(
    t: &mut Vec<(usize, usize, f64)>,
    k: usize,
    pos: usize,
    len: usize,
    stride: usize,
    f: f64,
    diff: f64,
    h: f64,
    boundary: Boundary,
) {
    let plus = if pos + 1 < len { k + stride } else { k };
    let minus = if pos > 0 { k - stride } else { k };
    let on_wall = pos == 0 || pos + 1 == len;
    if on_wall && boundary == Boundary::Truncated {
        // one-sided first difference towards the interior
        if pos == 0 {
            t.push((k, plus, f / h));
            t.push((k, k, -f / h));
        } else {
            t.push((k, k, f / h));
            t.push((k, minus, -f / h));
        }
    } else {
        t.push((k, plus, f / (2.0 * h)));
        t.push((k, minus, -f / (2.0 * h)));
    }
    let c = diff / (h * h);
    t.push((k, plus, c));
    t.push((k, minus, c));
    t.push((k, k, -2.0 * c));
}

/// Forward operator `Lρ = −∇·(fρ) + ∂ᵢ∂ⱼ(Dᵢⱼρ)` in zero-flux form.
pub fn assemble_forward(spec: &ModelSpec, grid: &Grid) -> Result<SparseOperator> {
    let coef = sample(spec, grid)?;
    let (n, m) = (grid.n(), grid.m());
    let mut t = Vec::with_capacity(9 * grid.len());
    // x faces
    for j in 0..m {
        for i in 0..n - 1 {
            let (a, b) = (grid.idx(i, j), grid.idx(i + 1, j));
            face_flux(&mut t, a, b, coef.f[a].0, coef.f[b].0, coef.d[a][0][0], coef.d[b][0][0], grid.dx());
        }
    }
    // y faces
    for j in 0..m - 1 {
        for i in 0..n {
            let (a, b) = (grid.idx(i, j), grid.idx(i, j + 1));
            face_flux(&mut t, a, b, coef.f[a].1, coef.f[b].1, coef.d[a][1][1], coef.d[b][1][1], grid.dy());
        }
    }
    let mut adjoint = Vec::new();
    mixed_backward(grid, &coef.d, &mut adjoint);
    if spec.boundary() == Boundary::Truncated {
        wall_correction(grid, &coef, &mut adjoint);
    }
    t.extend(adjoint.into_iter().map(|(r, c, v)| (c, r, v)));
    SparseOperator::from_triplets(*grid, t, Direction::Forward, spec.boundary())
}

/// Truncated minus reflecting backward entries, nonzero on wall rows only.
fn wall_correction(grid: &Grid, coef: &Coefficients, out: &mut Vec<(usize, usize, f64)>) {
    let (n, m) = (grid.n(), grid.m());
    for j in 0..m {
        for i in 0..n {
            let k = grid.idx(i, j);
            let (fx, fy) = coef.f[k];
            let d = coef.d[k];
            for (pos, len, stride, f, diff, h) in [(i, n, 1, fx, d[0][0], grid.dx()), (j, m, n, fy, d[1][1], grid.dy())] {
                if pos == 0 || pos + 1 == len {
                    axis_backward(out, k, pos, len, stride, f, diff, h, Boundary::Truncated);
                    let start = out.len();
                    axis_backward(out, k, pos, len, stride, f, diff, h, Boundary::Reflecting);
                    out[start..].iter_mut().for_each(|e| e.2 = -e.2);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn face_flux(t: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, fa: f64, fb: f64, da: f64, db: f64, h: f64) {
    // flux = ca ρa + cb ρb, leaving a and entering b
    let ca = 0.5 * fa / h + da / (h * h);
    let cb = 0.5 * fb / h - db / (h * h);
    t.push((a, a, -ca));
    t.push((a, b, -cb));
    t.push((b, a, ca));
    t.push((b, b, cb));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, linear_model, Domain};
    use std::collections::BTreeMap;

    fn laplace_model(boundary: Boundary) -> ModelSpec {
        // D = ½ g gᵀ = I
        let s = std::f64::consts::SQRT_2;
        linear_model("lap", [[0.0; 2]; 2], [[s, 0.0], [0.0, s]], Domain { x: [0.0, 10.0], y: [0.0, 10.0] }, boundary)
            .unwrap()
    }

    fn advection_model() -> ModelSpec {
        crate::model::ModelSpec::from_json(
            r#"{"name":"adv","drift":["1","0"],"noise":[["0"],["0"]],"parameters":{},
                "domain":{"x":[0,10],"y":[0,10]},"boundary":"reflecting"}"#,
        )
        .unwrap()
    }

    fn unit_grid() -> Grid {
        Grid::new(Domain { x: [0.0, 10.0], y: [0.0, 10.0] }, 10, 10).unwrap()
    }

    #[test]
    fn laplacian_stencil() {
        let g = unit_grid();
        let l = assemble_backward(&laplace_model(Boundary::Reflecting), &g).unwrap();
        let k = g.idx(4, 5);
        let row: Vec<_> = l.row(k).collect();
        assert_eq!(row.len(), 5);
        assert!((l.get(k, k) + 4.0).abs() < 1e-14);
        for nb in [g.idx(3, 5), g.idx(5, 5), g.idx(4, 4), g.idx(4, 6)] {
            assert!((l.get(k, nb) - 1.0).abs() < 1e-14);
        }
        let fwd = assemble_forward(&laplace_model(Boundary::Reflecting), &g).unwrap();
        assert_eq!(fwd.row(k).collect::<Vec<_>>(), l.row(k).collect::<Vec<_>>());
    }

    #[test]
    fn centered_advection() {
        let g = unit_grid();
        let spec = advection_model();
        let l = assemble_backward(&spec, &g).unwrap();
        let k = g.idx(4, 4);
        assert_eq!(l.row(k).count(), 2);
        assert_eq!(l.get(k, g.idx(5, 4)), 0.5);
        assert_eq!(l.get(k, g.idx(3, 4)), -0.5);
        let fwd = assemble_forward(&spec, &g).unwrap();
        assert_eq!(fwd.get(k, g.idx(5, 4)), -0.5);
        assert_eq!(fwd.get(k, g.idx(3, 4)), 0.5);
        assert_eq!(fwd.get(k, k), 0.0);
    }

    fn assert_row_sums_vanish(op: &SparseOperator) {
        for r in 0..op.dim() {
            let (sum, scale) = op.row(r).fold((0.0, 0.0), |(s, a), (_, v)| (s + v, a + v.abs()));
            assert!(sum.abs() <= 1e-12 * scale.max(1.0), "row {r}: {sum}");
        }
    }

    fn assert_column_sums_vanish(op: &SparseOperator) {
        let mut sum = vec![0.0; op.dim()];
        let mut scale = vec![0.0; op.dim()];
        for (_, c, v) in op.triplets() {
            sum[c] += v;
            scale[c] += v.abs();
        }
        for c in 0..op.dim() {
            assert!(sum[c].abs() <= 1e-12 * scale[c].max(1.0), "column {c}: {}", sum[c]);
        }
    }

    #[test]
    fn constants_are_in_the_backward_kernel_and_mass_is_conserved() {
        let none = BTreeMap::new();
        for name in crate::model::BUILTIN_NAMES {
            let spec = builtin_model(name, &none).unwrap();
            for boundary in [Boundary::Reflecting, Boundary::Truncated] {
                let spec = spec.with_boundary(boundary);
                let g = Grid::new(spec.domain(), 23, 19).unwrap();
                let back = assemble_backward(&spec, &g).unwrap();
                assert_row_sums_vanish(&back);
                assert!(back.triplets().all(|(_, _, v)| v.is_finite()));
                assert!((0..back.dim()).all(|r| back.row(r).count() <= 9));
                let ones = ScalarField::from_real_fn(g, "1", |_, _| 1.0);
                assert!(back.apply(&ones).unwrap().max_abs() < 1e-12 * back.norm1());
                let fwd = assemble_forward(&spec, &g).unwrap();
                assert_column_sums_vanish(&fwd);
                assert!((0..fwd.dim()).all(|r| fwd.row(r).count() <= 9));
            }
        }
    }

    #[test]
    fn forward_is_discrete_adjoint_for_both_boundaries() {
        for boundary in ["reflecting", "truncated"] {
            // anisotropic, correlated noise and a nonlinear drift
            let spec = ModelSpec::from_json(&format!(
                r#"{{"name":"t","drift":["sin(y) - x^3","x*y + 0.3"],"noise":[["0.4","0.1"],["0.2","0.3"]],
                    "parameters":{{}},"domain":{{"x":[-1,1.5],"y":[-1,1]}},"boundary":"{boundary}"}}"#
            ))
            .unwrap();
            let g = Grid::new(spec.domain(), 12, 15).unwrap();
            let back = assemble_backward(&spec, &g).unwrap();
            let fwd = assemble_forward(&spec, &g).unwrap();
            let bt = back.transpose();
            for r in 0..g.len() {
                for (c, v) in fwd.row(r) {
                    assert!((bt.get(r, c) - v).abs() < 1e-12 * v.abs().max(1.0), "{boundary} ({r},{c})");
                }
                for (c, v) in bt.row(r) {
                    assert!((fwd.get(r, c) - v).abs() < 1e-12 * v.abs().max(1.0));
                }
            }
            assert_column_sums_vanish(&fwd);
            assert_row_sums_vanish(&back);
        }
    }


    #[test]
    fn self_adjoint_diffusion() {
        for boundary in [Boundary::Reflecting, Boundary::Truncated] {
            let g = unit_grid();
            let spec = laplace_model(boundary);
            let back = assemble_backward(&spec, &g).unwrap();
            let fwd = assemble_forward(&spec, &g).unwrap();
            for (r, c, v) in back.triplets() {
                assert!((fwd.get(c, r) - v).abs() <= 1e-14 * v.abs(), "({r},{c})");
            }
            assert_eq!(back.nnz(), fwd.nnz());
        }
    }

    #[test]
    fn apply_checks_dimensions() {
        let g = unit_grid();
        let op = assemble_backward(&laplace_model(Boundary::Reflecting), &g).unwrap();
        let other = Grid::new(Domain::square(1.0), 9, 9).unwrap();
        let f = ScalarField::from_real_fn(other, "f", |x, _| x);
        assert!(matches!(op.apply(&f), Err(Error::DimensionMismatch { .. })));
        let zero = SparseOperator::from_triplets(g, vec![], Direction::Backward, Boundary::Reflecting).unwrap();
        let h = ScalarField::from_real_fn(g, "h", |x, y| x * y + 1.0);
        assert_eq!(zero.apply(&h).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn triplet_dump() {
        let g = unit_grid();
        let op = assemble_backward(&advection_model(), &g).unwrap();
        let mut buf = Vec::new();
        op.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), op.nnz());
        let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 3);
    }

    #[test]
    fn bandwidth_is_one_grid_row() {
        let spec = ModelSpec::from_json(
            r#"{"name":"t","drift":["0","0"],"noise":[["1","0.5"],["0.5","1"]],
                "parameters":{},"domain":{"x":[0,1],"y":[0,1]},"boundary":"reflecting"}"#,
        )
        .unwrap();
        let g = Grid::new(spec.domain(), 11, 9).unwrap();
        assert_eq!(assemble_backward(&spec, &g).unwrap().bandwidth(), 12);
    }
}
