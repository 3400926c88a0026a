//! The effective vector field `F` defined pointwise by
//! `∇Q₊·F = λ₊ Q₊` and `∇Σ·F = λ_Floq Σ`.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::gradient;
use crate::grid::{Grid, ScalarField};
use crate::io::fmt17;

type C = Complex64;

/// Relative determinant threshold below which a node is masked.
pub const DET_TOL: f64 = 1e-8;
/// Gradient rows smaller than this fraction of their maximum count as vanishing.
pub const GRAD_TOL: f64 = 1e-6;
/// Largest tolerated fraction of masked interior nodes.
pub const MAX_MASKED: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    f1: Vec<C>,
    f2: Vec<C>,
    valid: Vec<bool>,
}

impl VectorField {
    pub fn new(grid: Grid, f1: Vec<C>, f2: Vec<C>, valid: Vec<bool>) -> Result<VectorField> {
        for len in [f1.len(), f2.len(), valid.len()] {
            if len != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: len });
            }
        }
        Ok(VectorField { grid, f1, f2, valid })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn f1(&self) -> &[C] {
        &self.f1
    }

    pub fn f2(&self) -> &[C] {
        &self.f2
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn masked_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Bilinear `Re F` at `p`, or `None` when outside the domain or next to a masked node.
    pub fn real_at(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let (i, j, s, t) = self.grid.locate(p).ok()?;
        let n = self.grid.n();
        let ks = [i + n * j, i + 1 + n * j, i + n * (j + 1), i + 1 + n * (j + 1)];
        if ks.iter().any(|&k| !self.valid[k]) {
            return None;
        }
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
        let mut out = (0.0, 0.0);
        for (k, w) in ks.iter().zip(w) {
            out.0 += w * self.f1[*k].re;
            out.1 += w * self.f2[*k].re;
        }
        Some(out)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x,y,Fx_re,Fx_im,Fy_re,Fy_im,valid")?;
        for (k, (_, _, x, y)) in self.grid.nodes().enumerate() {
            let (a, b) = (self.f1[k], self.f2[k]);
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt17(x),
                fmt17(y),
                fmt17(a.re),
                fmt17(a.im),
                fmt17(b.re),
                fmt17(b.im),
                u8::from(self.valid[k])
            )?;
        }
        Ok(())
    }
}

/// Solves the complex 2×2 system at every node. Masked nodes hold zeros.
pub fn effective_vector_field(
    q_plus: &ScalarField,
    sigma: &ScalarField,
    lambda_plus: C,
    lambda_floq: f64,
) -> Result<VectorField> {
    let grid = *q_plus.grid();
    if sigma.grid() != &grid {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: sigma.grid().len() });
    }
    let (qx, qy) = gradient(q_plus);
    let (sx, sy) = gradient(sigma);
    let row_norm = |a: C, b: C| (a.norm_sqr() + b.norm_sqr()).sqrt();
    let nq: Vec<f64> = qx.values().iter().zip(qy.values()).map(|(a, b)| row_norm(*a, *b)).collect();
    let ns: Vec<f64> = sx.values().iter().zip(sy.values()).map(|(a, b)| row_norm(*a, *b)).collect();
    let max_q = nq.iter().copied().fold(0.0, f64::max);
    let max_s = ns.iter().copied().fold(0.0, f64::max);

    let len = grid.len();
    let (mut f1, mut f2, mut valid) = (vec![C::default(); len], vec![C::default(); len], vec![false; len]);
    let (mut masked, mut interior) = (0usize, 0usize);
    for (k, (i, j, _, _)) in grid.nodes().enumerate() {
        let (a, b) = (qx.values()[k], qy.values()[k]);
        let (c, d) = (sx.values()[k], sy.values()[k]);
        let det = a * d - b * c;
        let ok = nq[k] > GRAD_TOL * max_q && ns[k] > GRAD_TOL * max_s && det.norm() >= DET_TOL * nq[k] * ns[k];
        let is_interior = i > 0 && j > 0 && i + 1 < grid.n() && j + 1 < grid.m();
        interior += usize::from(is_interior);
        if !ok {
            masked += usize::from(is_interior);
            continue;
        }
        let r1 = lambda_plus * q_plus.values()[k];
        let r2 = lambda_floq * sigma.values()[k];
        f1[k] = (r1 * d - b * r2) / det;
        f2[k] = (a * r2 - c * r1) / det;
        valid[k] = true;
    }
    if masked as f64 > MAX_MASKED * interior as f64 {
        return Err(Error::TooManyMasked { masked, total: interior });
    }
    VectorField::new(grid, f1, f2, valid)
}

/// Largest residuals of the two defining relations over valid nodes, relative
/// to `max |λ₊ Q₊|` and `max |λ_Floq Σ|`.
pub fn constraint_residuals(
    field: &VectorField,
    q_plus: &ScalarField,
    sigma: &ScalarField,
    lambda_plus: C,
    lambda_floq: f64,
) -> (f64, f64) {
    let (qx, qy) = gradient(q_plus);
    let (sx, sy) = gradient(sigma);
    let scale_q = q_plus.max_abs() * lambda_plus.norm();
    let scale_s = sigma.max_abs() * lambda_floq.abs();
    let (mut rq, mut rs) = (0.0f64, 0.0f64);
    for k in 0..field.grid.len() {
        if !field.valid[k] {
            continue;
        }
        let (f1, f2) = (field.f1[k], field.f2[k]);
        let a = qx.values()[k] * f1 + qy.values()[k] * f2 - lambda_plus * q_plus.values()[k];
        let b = sx.values()[k] * f1 + sy.values()[k] * f2 - lambda_floq * sigma.values()[k];
        rq = rq.max(a.norm() / scale_q);
        rs = rs.max(b.norm() / scale_s);
    }
    (rq, rs)
}

/// Fixed-step RK4 integration of `Re F`, stopping early when a stage leaves
/// the valid region.
pub fn field_line(field: &VectorField, start: (f64, f64), step: f64, n_steps: usize) -> Result<Vec<(f64, f64)>> {
    if field.real_at(start).is_none() {
        return Err(Error::MaskedStart);
    }
    let mut line = Vec::with_capacity(n_steps + 1);
    line.push(start);
    let mut p = start;
    let add = |p: (f64, f64), k: (f64, f64), h: f64| (p.0 + h * k.0, p.1 + h * k.1);
    for _ in 0..n_steps {
        let stages = (|| {
            let k1 = field.real_at(p)?;
            let k2 = field.real_at(add(p, k1, 0.5 * step))?;
            let k3 = field.real_at(add(p, k2, 0.5 * step))?;
            let k4 = field.real_at(add(p, k3, step))?;
            Some((k1, k2, k3, k4))
        })();
        let Some((k1, k2, k3, k4)) = stages else { break };
        p = (
            p.0 + step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p.1 + step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        if field.real_at(p).is_none() {
            break;
        }
        line.push(p);
    }
    Ok(line)
}
