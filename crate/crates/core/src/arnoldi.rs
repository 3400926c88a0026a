//! Implicitly restarted Arnoldi iteration in complex arithmetic.
//!
//! The operator is only touched through `apply`; the caller hands in the
//! shift-inverted operator and gets back its dominant Ritz pairs.

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

pub struct ArnoldiOptions {
    /// Number of wanted eigenvalues (largest modulus).
    pub nev: usize,
    /// Krylov subspace dimension.
    pub ncv: usize,
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

pub struct RitzPair {
    pub value: C,
    pub vector: Vec<C>,
}

pub struct ArnoldiResult {
    pub pairs: Vec<RitzPair>,
    pub restarts: usize,
    pub applications: usize,
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn scale(a: &mut [C], s: C) {
    a.iter_mut().for_each(|x| *x *= s);
}

fn axpy(y: &mut [C], alpha: C, x: &[C]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Complex Givens rotation `G = [c, s; −s̄, c]` with `G [a; b] = [r; 0]`.
fn givens(a: C, b: C) -> (f64, C) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, ZERO);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb);
    }
    let r = na.hypot(nb);
    (na / r, (a / na) * b.conj() / r)
}

struct Krylov {
    n: usize,
    ncv: usize,
    basis: Vec<Vec<C>>,
    /// `(ncv + 1) × ncv` upper Hessenberg, row-major.
    h: Vec<C>,
}

impl Krylov {
    fn h(&self, i: usize, j: usize) -> C {
        self.h[i * self.ncv + j]
    }

    fn h_mut(&mut self, i: usize, j: usize) -> &mut C {
        &mut self.h[i * self.ncv + j]
    }

    /// Orthogonalizes `w` against the basis twice (classical Gram–Schmidt with one reorthogonalization).
    fn orthogonalize(&self, w: &mut [C], upto: usize) -> Vec<C> {
        let mut coeffs = vec![ZERO; upto];
        for _ in 0..2 {
            let c: Vec<C> = self.basis[..upto].iter().map(|v| dot(v, w)).collect();
            for (v, ci) in self.basis[..upto].iter().zip(&c) {
                axpy(w, -ci, v);
            }
            coeffs.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }
        coeffs
    }

    fn extend<F>(&mut self, from: usize, apply: &mut F, rng: &mut impl Rng, count: &mut usize) -> Result<()>
    where
        F: FnMut(&[C], &mut [C]) -> Result<()>,
    {
        for j in from..self.ncv {
            let mut w = vec![ZERO; self.n];
            apply(&self.basis[j], &mut w)?;
            *count += 1;
            let wn = norm(&w);
            let coeffs = self.orthogonalize(&mut w, j + 1);
            for (i, c) in coeffs.into_iter().enumerate() {
                *self.h_mut(i, j) = c;
            }
            let mut beta = norm(&w);
            if beta <= 1e-14 * wn.max(f64::MIN_POSITIVE) {
                // invariant subspace: continue with a fresh direction
                beta = 0.0;
                w = random_vector(self.n, rng);
                self.orthogonalize(&mut w, j + 1);
                let wn = norm(&w);
                scale(&mut w, C::new(1.0 / wn, 0.0));
            } else {
                scale(&mut w, C::new(1.0 / beta, 0.0));
            }
            *self.h_mut(j + 1, j) = C::new(beta, 0.0);
            if self.basis.len() > j + 1 {
                self.basis[j + 1] = w;
            } else {
                self.basis.push(w);
            }
        }
        Ok(())
    }

    fn projected(&self, k: usize) -> Mat<C> {
        Mat::from_fn(k, k, |i, j| self.h(i, j))
    }
}

fn random_vector(n: usize, rng: &mut impl Rng) -> Vec<C> {
    (0..n).map(|_| C::new(rng.random_range(-1.0..1.0), 0.0)).collect()
}

struct SmallEigen {
    values: Vec<C>,
    vectors: Mat<C>,
}

fn small_eigen(h: &Mat<C>) -> Result<SmallEigen> {
    let e = h.eigen().map_err(|e| Error::NonConvergence(format!("projected eigenproblem: {e:?}")))?;
    let k = h.nrows();
    let values = (0..k).map(|i| e.S()[i]).collect();
    Ok(SmallEigen { values, vectors: e.U().to_owned() })
}

/// Dominant eigenpairs of the operator behind `apply`.
pub fn arnoldi<F>(n: usize, opts: &ArnoldiOptions, mut apply: F) -> Result<ArnoldiResult>
where
    F: FnMut(&[C], &mut [C]) -> Result<()>,
{
    let ncv = opts.ncv.min(n);
    let nev = opts.nev;
    if nev == 0 || nev + 2 > ncv {
        return Err(Error::NonConvergence(format!("need nev + 2 ≤ ncv, got nev = {nev}, ncv = {ncv}")));
    }
    // keep a couple of extra Ritz values so a conjugate partner is not cut off
    let keep = (nev + 2).min(ncv - 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0 = random_vector(n, &mut rng);
    let n0 = norm(&v0);
    scale(&mut v0, C::new(1.0 / n0, 0.0));
    let mut kr = Krylov { n, ncv, basis: vec![v0], h: vec![ZERO; (ncv + 1) * ncv] };
    let mut applications = 0;
    let mut start = 0;

    for restart in 0..=opts.max_restarts {
        kr.extend(start, &mut apply, &mut rng, &mut applications)?;
        let eig = small_eigen(&kr.projected(ncv))?;
        let mut order: Vec<usize> = (0..ncv).collect();
        order.sort_by(|&a, &b| eig.values[b].norm().total_cmp(&eig.values[a].norm()));

        let beta = kr.h(ncv, ncv - 1).norm();
        let hnorm = kr.h.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let ritz_residual = |i: usize| {
            let col_norm = (0..ncv).map(|r| eig.vectors[(r, i)].norm_sqr()).sum::<f64>().sqrt();
            beta * eig.vectors[(ncv - 1, i)].norm() / col_norm
        };
        let converged = order[..nev]
            .iter()
            .all(|&i| ritz_residual(i) <= (opts.tol * eig.values[i].norm()).max(f64::EPSILON * hnorm));

        if converged || restart == opts.max_restarts {
            if !converged {
                return Err(Error::NonConvergence(format!(
                    "{} restarts, {applications} operator applications",
                    opts.max_restarts
                )));
            }
            let pairs = order[..keep]
                .iter()
                .map(|&i| {
                    let mut x = vec![ZERO; n];
                    for r in 0..ncv {
                        axpy(&mut x, eig.vectors[(r, i)], &kr.basis[r]);
                    }
                    let xn = norm(&x);
                    scale(&mut x, C::new(1.0 / xn, 0.0));
                    RitzPair { value: eig.values[i], vector: x }
                })
                .collect();
            return Ok(ArnoldiResult { pairs, restarts: restart, applications });
        }

        // implicit restart with the unwanted Ritz values as exact shifts
        let shifts: Vec<C> = order[keep..].iter().map(|&i| eig.values[i]).collect();
        let m = ncv;
        let mut hm: Vec<C> = (0..m * m).map(|t| kr.h(t / m, t % m)).collect();
        let mut q: Vec<C> = (0..m * m).map(|t| if t / m == t % m { C::new(1.0, 0.0) } else { ZERO }).collect();
        for &mu in &shifts {
            qr_step(&mut hm, &mut q, m, mu);
        }
        let k = keep;
        let beta_k = hm[k * m + k - 1];
        let sigma = q[(m - 1) * m + k - 1];
        let beta_m = kr.h(m, m - 1);

        let mut new_basis: Vec<Vec<C>> = Vec::with_capacity(ncv + 1);
        for j in 0..=k {
            let mut v = vec![ZERO; n];
            for r in 0..m {
                let c = q[r * m + j];
                if c != ZERO {
                    axpy(&mut v, c, &kr.basis[r]);
                }
            }
            new_basis.push(v);
        }
        let mut f = new_basis.pop().unwrap();
        scale(&mut f, beta_k);
        axpy(&mut f, beta_m * sigma, &kr.basis[m]);
        kr.basis = new_basis;
        kr.orthogonalize(&mut f, k);
        let fnorm = norm(&f);
        kr.h.iter_mut().for_each(|v| *v = ZERO);
        for i in 0..k {
            for j in 0..k {
                *kr.h_mut(i, j) = hm[i * m + j];
            }
        }
        if fnorm > 0.0 {
            scale(&mut f, C::new(1.0 / fnorm, 0.0));
        } else {
            f = random_vector(n, &mut rng);
            kr.orthogonalize(&mut f, k);
            let nn = norm(&f);
            scale(&mut f, C::new(1.0 / nn, 0.0));
        }
        *kr.h_mut(k, k - 1) = C::new(fnorm, 0.0);
        kr.basis.push(f);
        start = k;
    }
    unreachable!()
}

/// One shifted QR step `H − μI = QR`, `H ← RQ + μI`, accumulating `Q`.
fn qr_step(h: &mut [C], q: &mut [C], m: usize, mu: C) {
    for i in 0..m {
        h[i * m + i] -= mu;
    }
    let mut rots = Vec::with_capacity(m - 1);
    for i in 0..m - 1 {
        let (c, s) = givens(h[i * m + i], h[(i + 1) * m + i]);
        for col in i..m {
            let (x, y) = (h[i * m + col], h[(i + 1) * m + col]);
            h[i * m + col] = x * c + s * y;
            h[(i + 1) * m + col] = -s.conj() * x + y * c;
        }
        h[(i + 1) * m + i] = ZERO;
        rots.push((c, s));
    }
    for (i, &(c, s)) in rots.iter().enumerate() {
        let rows = (i + 2).min(m);
        for r in 0..rows {
            let (x, y) = (h[r * m + i], h[r * m + i + 1]);
            h[r * m + i] = x * c + y * s.conj();
            h[r * m + i + 1] = -x * s + y * c;
        }
        for r in 0..m {
            let (x, y) = (q[r * m + i], q[r * m + i + 1]);
            q[r * m + i] = x * c + y * s.conj();
            q[r * m + i + 1] = -x * s + y * c;
        }
    }
    for i in 0..m {
        h[i * m + i] += mu;
        for j in 0..i.saturating_sub(1) {
            h[i * m + j] = ZERO;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn givens_annihilates() {
        for (a, b) in [(C::new(1.0, 2.0), C::new(-0.5, 0.3)), (ZERO, C::new(0.0, 1.0)), (C::new(3.0, 0.0), ZERO)] {
            let (c, s) = givens(a, b);
            let lower = -s.conj() * a + b * c;
            assert!(lower.norm() < 1e-15);
            assert!((c * c + s.norm_sqr() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn qr_step_is_a_similarity() {
        let m = 6;
        let mut h: Vec<C> = (0..m * m)
            .map(|t| {
                let (i, j) = (t / m, t % m);
                if i > j + 1 {
                    ZERO
                } else {
                    C::new((i * 7 + j * 3) as f64 % 5.0 - 2.0, (i + 2 * j) as f64 % 3.0 - 1.0)
                }
            })
            .collect();
        let before = Mat::from_fn(m, m, |i, j| h[i * m + j]).eigenvalues().unwrap();
        let mut q: Vec<C> = (0..m * m).map(|t| if t / m == t % m { C::new(1.0, 0.0) } else { ZERO }).collect();
        qr_step(&mut h, &mut q, m, C::new(0.7, -0.2));
        let after = Mat::from_fn(m, m, |i, j| h[i * m + j]).eigenvalues().unwrap();
        for l in &before {
            assert!(after.iter().any(|a| (a - l).norm() < 1e-10), "{l} missing");
        }
        // Q stays unitary
        for a in 0..m {
            for b in 0..m {
                let d: C = (0..m).map(|r| q[r * m + a].conj() * q[r * m + b]).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((d - e).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn finds_dominant_eigenvalues_of_a_diagonal_matrix() {
        let n = 300;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let opts = ArnoldiOptions { nev: 5, ncv: 20, tol: 1e-13, max_restarts: 200, seed: 1 };
        let res = arnoldi(n, &opts, |x, y| {
            for i in 0..n {
                y[i] = x[i] * diag[i];
            }
            Ok(())
        })
        .unwrap();
        let mut got: Vec<f64> = res.pairs.iter().map(|p| p.value.re).collect();
        got.sort_by(|a, b| b.total_cmp(a));
        for (g, want) in got.iter().zip(&diag) {
            assert!((g - want).abs() < 1e-11, "{g} vs {want}");
        }
    }
}
