//! Leading eigenpairs of the discretized operators and their roles.
//!
//! The backward operator's slowest modes are the trivial constant mode
//! (`λ₀ ≈ 0`), a complex pair `λ± = μ ± iω` carrying the phase, and the
//! least negative nontrivial real eigenvalue `λ_Floq` carrying the
//! isostable coordinate. The forward operator's `λ₀` eigenvector is the
//! stationary density.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::arnoldi::{arnoldi, ArnoldiOptions};
use crate::banded::ShiftedFactor;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::operator::{Direction, SparseOperator};

type C = Complex64;

/// Largest problem the dense fallback of [`Method::Auto`] accepts.
pub const DENSE_LIMIT: usize = 2500;
/// Bound on `‖A v − λ v‖ / ‖v‖` for every reported pair.
pub const RESIDUAL_BOUND: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Shift-invert Arnoldi, falling back to the dense solver when it fails on
    /// at most [`DENSE_LIMIT`] unknowns.
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Debug, Clone)]
pub struct SpectralOptions {
    pub k: usize,
    pub shift: C,
    pub method: Method,
    /// Krylov dimension; defaults to `max(4k, 40)`.
    pub ncv: Option<usize>,
    pub max_restarts: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { k: 12, shift: C::new(0.05, 0.0), method: Method::Auto, ncv: None, max_restarts: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: C,
    /// Unit 2-norm right eigenvector.
    pub vector: ScalarField,
    pub residual: f64,
}

/// Eigenpairs sorted by descending real part, with solver metadata.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub pairs: Vec<Eigenpair>,
    pub method: Method,
    /// Shift actually used (it is nudged if the first factorization is singular).
    pub shift: C,
    pub direction: Direction,
    pub norm1: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenvalueRecord {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

impl Spectrum {
    pub fn values(&self) -> Vec<C> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.pairs.first().map(|p| p.vector.grid())
    }

    /// Default zero tolerance `10⁻⁶ ‖A‖₁`.
    pub fn tol_zero(&self) -> f64 {
        1e-6 * self.norm1
    }

    pub fn records(&self) -> Vec<EigenvalueRecord> {
        self.pairs.iter().map(|p| EigenvalueRecord { re: p.value.re, im: p.value.im, residual: p.residual }).collect()
    }
}

pub fn leading_spectrum(op: &SparseOperator, k: usize, shift: C) -> Result<Spectrum> {
    leading_spectrum_with(op, &SpectralOptions { k, shift, ..Default::default() })
}

/// The `k` eigenpairs closest to `opts.shift` (conjugate partners are always
/// reported together, so one extra pair may be returned).
pub fn leading_spectrum_with(op: &SparseOperator, opts: &SpectralOptions) -> Result<Spectrum> {
    let n = op.dim();
    if opts.k == 0 || opts.k >= n {
        return Err(Error::NonConvergence(format!("k = {} is out of range for dimension {n}", opts.k)));
    }
    let norm1 = op.norm1();
    let dense = || -> Result<(Vec<Eigenpair>, Method, C, usize)> {
        let pairs = finish(op, dense_candidates(op, opts.shift)?, opts.k, opts.shift, norm1)?;
        Ok((pairs, Method::Dense, opts.shift, 0))
    };
    let iterative = || -> Result<(Vec<Eigenpair>, Method, C, usize)> {
        let (candidates, shift, restarts) = shift_invert_candidates(op, opts)?;
        Ok((finish(op, candidates, opts.k, shift, norm1)?, Method::ShiftInvert, shift, restarts))
    };
    let (pairs, method, shift, restarts) = match opts.method {
        Method::Dense => dense()?,
        Method::ShiftInvert => iterative()?,
        Method::Auto => match iterative() {
            Err(_) if n <= DENSE_LIMIT => dense()?,
            r => r?,
        },
    };
    Ok(Spectrum { pairs, method, shift, direction: op.direction(), norm1, restarts })
}

/// Eigenvalue with an unnormalized eigenvector.
type Candidate = (C, Vec<C>);

fn dense_candidates(op: &SparseOperator, shift: C) -> Result<Vec<Candidate>> {
    let a = op.to_dense();
    let e = a.eigen().map_err(|e| Error::NonConvergence(format!("dense eigensolver: {e:?}")))?;
    let n = op.dim();
    let mut out: Vec<Candidate> =
        (0..n).map(|i| (e.S()[i], (0..n).map(|r| e.U()[(r, i)]).collect())).collect();
    out.sort_by(|a, b| (a.0 - shift).norm().total_cmp(&(b.0 - shift).norm()));
    Ok(out)
}

fn shift_invert_candidates(op: &SparseOperator, opts: &SpectralOptions) -> Result<(Vec<Candidate>, C, usize)> {
    let n = op.dim();
    let mut shift = opts.shift;
    let mut factor = None;
    for attempt in 0..4 {
        match ShiftedFactor::new(op, shift) {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(Error::Factorization(_)) if attempt < 3 => {
                shift += C::new(1e-7 * (1.0 + shift.norm()), 0.0);
            }
            Err(e) => return Err(e),
        }
    }
    let factor = factor.expect("loop either factors or returns");
    let ncv = opts.ncv.unwrap_or((4 * opts.k).max(40)).min(n);
    let aopts = ArnoldiOptions { nev: opts.k, ncv, tol: 1e-13, max_restarts: opts.max_restarts, seed: 0x5eed };
    let res = arnoldi(n, &aopts, |x, y| {
        y.copy_from_slice(x);
        factor.solve_in_place(y);
        Ok(())
    })?;
    let mut out = Vec::with_capacity(res.pairs.len());
    for p in res.pairs {
        let mut lambda = shift + 1.0 / p.value;
        let mut v = p.vector;
        // inverse-iteration polish for pairs that miss the residual bound
        for _ in 0..3 {
            if residual(op, lambda, &v) <= 0.1 * RESIDUAL_BOUND {
                break;
            }
            factor.solve_in_place(&mut v);
            normalize(&mut v);
            lambda = rayleigh(op, &v);
        }
        out.push((lambda, v));
    }
    out.sort_by(|a, b| (a.0 - opts.shift).norm().total_cmp(&(b.0 - opts.shift).norm()));
    Ok((out, shift, res.restarts))
}

fn normalize(v: &mut [C]) {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn rayleigh(op: &SparseOperator, v: &[C]) -> C {
    let mut av = vec![C::new(0.0, 0.0); v.len()];
    op.matvec(v, &mut av);
    let num: C = v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = v.iter().map(|a| a.norm_sqr()).sum();
    num / den
}

fn residual(op: &SparseOperator, lambda: C, v: &[C]) -> f64 {
    let mut av = vec![C::new(0.0, 0.0); v.len()];
    op.matvec(v, &mut av);
    let r = av.iter().zip(v).map(|(a, x)| (a - lambda * x).norm_sqr()).sum::<f64>().sqrt();
    r / v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Snaps nearly-real eigenvalues onto the real axis, pairs conjugates and verifies residuals.
fn finish(op: &SparseOperator, candidates: Vec<Candidate>, k: usize, shift: C, norm1: f64) -> Result<Vec<Eigenpair>> {
    let tol_im = 1e-10 * norm1 + 1e-14;
    let same = |a: C, b: C| (a - b).norm() <= 1e-8 * a.norm().max(1.0);
    let mut reals: Vec<Candidate> = Vec::new();
    let mut uppers: Vec<Candidate> = Vec::new();
    let mut taken = 0;
    for (lambda, mut v) in candidates {
        if taken >= k {
            break;
        }
        if lambda.im.abs() <= tol_im {
            let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C::new(1.0, 0.0));
            let rot = pivot.conj() / pivot.norm();
            v.iter_mut().for_each(|x| *x = C::new((*x * rot).re, 0.0));
            normalize(&mut v);
            reals.push((C::new(lambda.re, 0.0), v));
            taken += 1;
        } else {
            let (upper, v) = if lambda.im > 0.0 { (lambda, v) } else { (lambda.conj(), v.iter().map(|x| x.conj()).collect()) };
            if let Some(existing) = uppers.iter_mut().find(|(u, _)| same(*u, upper)) {
                // keep the representative computed directly in the upper half plane
                if lambda.im > 0.0 {
                    *existing = (upper, v);
                }
            } else {
                uppers.push((upper, v));
                taken += 2;
            }
        }
    }
    let grid = *op.grid();
    let mut pairs = Vec::with_capacity(reals.len() + 2 * uppers.len());
    let mut push = |value: C, v: Vec<C>| -> Result<()> {
        let r = residual(op, value, &v);
        if !(r <= RESIDUAL_BOUND) {
            return Err(Error::NonConvergence(format!("eigenpair {value} has residual {r:e} (shift {shift})")));
        }
        pairs.push(Eigenpair { value, vector: ScalarField::new(grid, v, format!("{value}"))?, residual: r });
        Ok(())
    };
    for (l, v) in reals {
        push(l, v)?;
    }
    for (l, v) in uppers {
        let conj: Vec<C> = v.iter().map(|x| x.conj()).collect();
        push(l, v)?;
        push(l.conj(), conj)?;
    }
    pairs.sort_by(|a, b| b.value.re.total_cmp(&a.value.re).then(b.value.im.total_cmp(&a.value.im)));
    Ok(pairs)
}

/// Role assignment of the slowest backward modes.
#[derive(Debug, Clone)]
pub struct SpectralRoles {
    pub lambda0: C,
    pub q0: ScalarField,
    /// `μ + iω` with `ω > 0`.
    pub lambda_plus: C,
    pub q_plus: ScalarField,
    pub lambda_floq: f64,
    pub q_floq: ScalarField,
    pub quality: f64,
    /// `|ω/μ|` reached the quality threshold.
    pub quality_ok: bool,
    /// `2μ − max Re λ'` over the other computed nontrivial eigenvalues; negative means a violation.
    pub cond3_margin: f64,
    pub cond3_holds: bool,
    /// Number of eigenvalues the spectral-gap condition was checked against.
    pub cond3_checked: usize,
    pub harmonics: Vec<HarmonicDistance>,
}

/// Distance from computed eigenvalues to the `k`-th member of the harmonic family
/// `±iωk + s·μk²`, reported for both signs `s`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HarmonicDistance {
    pub k: u32,
    pub decaying: f64,
    pub growing: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RolesRecord {
    pub mu: f64,
    pub omega: f64,
    pub lambda_floq: f64,
    pub quality: f64,
    pub cond3_margin: f64,
}

impl SpectralRoles {
    pub fn mu(&self) -> f64 {
        self.lambda_plus.re
    }

    pub fn omega(&self) -> f64 {
        self.lambda_plus.im
    }

    pub fn record(&self) -> RolesRecord {
        RolesRecord {
            mu: self.mu(),
            omega: self.omega(),
            lambda_floq: self.lambda_floq,
            quality: self.quality,
            cond3_margin: self.cond3_margin,
        }
    }
}

pub const DEFAULT_QUALITY_THRESHOLD: f64 = 3.0;

/// Assigns the trivial, phase and isostable roles from eigenvalues alone.
pub fn classify(spectrum: &Spectrum, tol_zero: f64, quality_threshold: f64) -> Result<SpectralRoles> {
    let pairs = &spectrum.pairs;
    let (i0, p0) = pairs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.norm().total_cmp(&b.1.value.norm()))
        .ok_or(Error::NoTrivialMode(tol_zero))?;
    if p0.value.norm() > tol_zero {
        return Err(Error::NoTrivialMode(tol_zero));
    }
    let nontrivial = || pairs.iter().enumerate().filter(move |(i, _)| *i != i0).map(|(_, p)| p);
    let plus = nontrivial()
        .filter(|p| p.value.im > 0.0)
        .max_by(|a, b| a.value.re.total_cmp(&b.value.re))
        .ok_or_else(|| Error::NotOscillatory("no complex eigenvalue pair among the computed modes".into()))?;
    let floq = nontrivial()
        .filter(|p| p.value.im == 0.0)
        .max_by(|a, b| a.value.re.total_cmp(&b.value.re))
        .ok_or(Error::NoRealMode)?;
    let (mu, omega) = (plus.value.re, plus.value.im);
    let quality = (omega / mu).abs();

    let others: Vec<C> = nontrivial()
        .map(|p| p.value)
        .filter(|v| (*v - plus.value).norm() > 1e-12 && (*v - plus.value.conj()).norm() > 1e-12)
        .collect();
    let max_other = others.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    let cond3_margin = 2.0 * mu - max_other;
    let cond3_tol = 1e-3 * (2.0 * mu).abs();

    let harmonics = (2..=3)
        .map(|k| {
            let kf = k as f64;
            let dist = |target: C| {
                nontrivial().map(|p| (p.value - target).norm()).fold(f64::INFINITY, f64::min)
            };
            HarmonicDistance {
                k,
                decaying: dist(C::new(-mu.abs() * kf * kf, omega * kf)),
                growing: dist(C::new(mu.abs() * kf * kf, omega * kf)),
            }
        })
        .collect();

    Ok(SpectralRoles {
        lambda0: p0.value,
        q0: p0.vector.clone().with_label("Q0"),
        lambda_plus: plus.value,
        q_plus: plus.vector.clone().with_label("Q+"),
        lambda_floq: floq.value.re,
        q_floq: floq.vector.clone().with_label("Q_floq"),
        quality,
        quality_ok: quality >= quality_threshold,
        cond3_margin,
        cond3_holds: cond3_margin >= -cond3_tol,
        cond3_checked: others.len(),
        harmonics,
    })
}

/// Entries above `−CLAMP · max P₀` are clamped to zero; anything lower is an error.
pub const CLAMP: f64 = 1e-8;

/// Null eigenvector of the forward operator, rotated so its sum is real and
/// positive and scaled to unit mass, without any clamping. Also returns
/// `min/max` of the entries, which is negative when the vector has mixed signs.
pub fn null_density(forward: &Spectrum, tol_zero: f64) -> Result<(ScalarField, f64)> {
    let p = forward
        .pairs
        .iter()
        .min_by(|a, b| a.value.norm().total_cmp(&b.value.norm()))
        .filter(|p| p.value.norm() <= tol_zero)
        .ok_or(Error::NoTrivialMode(tol_zero))?;
    let grid = *p.vector.grid();
    let v = p.vector.values();
    let total: C = v.iter().sum();
    if total.norm() == 0.0 {
        return Err(Error::MixedSignDensity(-1.0));
    }
    let rot = total.conj() / total.norm();
    let mut dens: Vec<f64> = v.iter().map(|x| (x * rot).re).collect();
    let max = dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = dens.iter().copied().fold(f64::INFINITY, f64::min);
    let mass: f64 = dens.iter().sum::<f64>() * grid.cell_area();
    dens.iter_mut().for_each(|d| *d /= mass);
    Ok((ScalarField::from_real(grid, dens, "P0")?, min / max))
}

/// Normalized stationary density from the forward operator's null eigenvector.
pub fn stationary_density(forward: &Spectrum, tol_zero: f64) -> Result<ScalarField> {
    let (raw, ratio) = null_density(forward, tol_zero)?;
    if !(ratio >= -CLAMP) {
        return Err(Error::MixedSignDensity(ratio));
    }
    let grid = *raw.grid();
    let mut dens: Vec<f64> = raw.values().iter().map(|d| d.re.max(0.0)).collect();
    let mass: f64 = dens.iter().sum::<f64>() * grid.cell_area();
    dens.iter_mut().for_each(|d| *d /= mass);
    ScalarField::from_real(grid, dens, "P0")
}

/// Gram matrix `⟨Q_a | P_b⟩` between backward and forward eigenfunctions.
#[derive(Debug, Clone)]
pub struct Biorthogonality {
    pub eigenvalues: Vec<C>,
    pub gram: Vec<Vec<C>>,
    pub max_off_diagonal: f64,
}

/// Pairs each of the first `n_modes` backward eigenvalues with the nearest
/// forward one and forms the weighted bilinear products. `Q₀` is scaled to
/// mean one, other `Q`s to unit weighted norm, and each `P_b` so that the
/// diagonal entry is one.
pub fn biorthogonality_check(forward: &Spectrum, backward: &Spectrum, n_modes: usize) -> Result<Biorthogonality> {
    let n_modes = n_modes.min(backward.pairs.len());
    let grid = *backward.grid().ok_or_else(|| Error::PairingFailed("empty spectrum".into()))?;
    let w = grid.cell_area();
    let modes = &backward.pairs[..n_modes];
    let trivial = modes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.norm().total_cmp(&b.1.value.norm()))
        .map(|(i, _)| i);
    let mut qs = Vec::with_capacity(n_modes);
    let mut ps = Vec::with_capacity(n_modes);
    for (a, mode) in modes.iter().enumerate() {
        let lambda = mode.value;
        let partner = forward
            .pairs
            .iter()
            .min_by(|x, y| (x.value - lambda).norm().total_cmp(&(y.value - lambda).norm()))
            .filter(|p| (p.value - lambda).norm() <= 1e-3 * lambda.norm().max(1.0))
            .ok_or_else(|| Error::PairingFailed(format!("{lambda}")))?;
        let mut q: Vec<C> = mode.vector.values().to_vec();
        let s = if Some(a) == trivial {
            let mean: C = q.iter().sum::<C>() / q.len() as f64;
            1.0 / mean
        } else {
            C::new(1.0 / (q.iter().map(|x| x.norm_sqr()).sum::<f64>() * w).sqrt(), 0.0)
        };
        q.iter_mut().for_each(|x| *x *= s);
        let mut p: Vec<C> = partner.vector.values().to_vec();
        let d: C = q.iter().zip(&p).map(|(a, b)| a * b).sum::<C>() * w;
        if d.norm() == 0.0 {
            return Err(Error::PairingFailed(format!("{lambda}: vanishing diagonal product")));
        }
        p.iter_mut().for_each(|x| *x /= d);
        qs.push(q);
        ps.push(p);
    }
    let gram: Vec<Vec<C>> = qs
        .iter()
        .map(|q| ps.iter().map(|p| q.iter().zip(p).map(|(a, b)| a * b).sum::<C>() * w).collect())
        .collect();
    let mut max_off: f64 = 0.0;
    for (a, row) in gram.iter().enumerate() {
        for (b, g) in row.iter().enumerate() {
            if a != b {
                max_off = max_off.max(g.norm());
            }
        }
    }
    Ok(Biorthogonality { eigenvalues: modes.iter().map(|m| m.value).collect(), gram, max_off_diagonal: max_off })
}
