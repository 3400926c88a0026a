//! Banded LU factorization with partial pivoting.
//!
//! Grid operators with flat index `i + n·j` have all their entries within
//! `n + 1` of the diagonal, so the band factorization is the natural direct
//! solver: fill stays inside the band, `O(size · bw²)` work overall.

use num_complex::{Complex64, ComplexFloat};

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

/// `P A = L U` for a matrix with `kl` sub- and `ku` super-diagonals.
///
/// Rows are stored densely over columns `[r − kl, r + kl + ku]`; the extra
/// `kl` columns hold fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
    piv: Vec<usize>,
}

impl<T: ComplexFloat<Real = f64>> BandLu<T> {
    /// Factors `op − shift·I`.
    pub fn factor(op: &SparseOperator, shift: T) -> Result<BandLu<T>> {
        let bw = op.bandwidth();
        let n = op.dim();
        let (kl, ku) = (bw, bw);
        let width = 2 * kl + ku + 1;
        let zero = T::zero();
        let mut data = vec![zero; n * width];
        for (r, c, v) in op.triplets() {
            data[r * width + c + kl - r] = T::from(v).unwrap();
        }
        for r in 0..n {
            let slot = r * width + kl;
            data[slot] = data[slot] - shift;
        }
        let mut lu = BandLu { n, kl, ku, width, data, piv: vec![0; n] };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        r * self.width + c + self.kl - r
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for r in 0..n {
            let last = (r + kl).min(n - 1);
            let cmax = (r + kl + ku).min(n - 1);
            let mut p = r;
            let mut best = self.data[self.slot(r, r)].abs();
            for i in r + 1..=last {
                let v = self.data[self.slot(i, r)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * f64::EPSILON * 1e-4 {
                return Err(Error::Factorization(format!("zero pivot in column {r}")));
            }
            self.piv[r] = p;
            if p != r {
                for c in r..=cmax {
                    let (a, b) = (self.slot(r, c), self.slot(p, c));
                    self.data.swap(a, b);
                }
            }
            let len = cmax - r;
            let pivot = self.data[self.slot(r, r)];
            let (head, tail) = self.data.split_at_mut((r + 1) * self.width);
            let prow_start = r * self.width + kl + 1;
            let prow = &head[prow_start..prow_start + len];
            for i in r + 1..=last {
                let base = (i - r - 1) * self.width;
                let diag = base + r + kl - i;
                let l = tail[diag] / pivot;
                tail[diag] = l;
                if l == T::zero() {
                    continue;
                }
                let row = &mut tail[diag + 1..diag + 1 + len];
                for (a, &b) in row.iter_mut().zip(prow) {
                    *a = *a - l * b;
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for r in 0..n {
            let p = self.piv[r];
            if p != r {
                b.swap(r, p);
            }
            let br = b[r];
            if br == T::zero() {
                continue;
            }
            for i in r + 1..=(r + kl).min(n - 1) {
                b[i] = b[i] - self.data[self.slot(i, r)] * br;
            }
        }
        for r in (0..n).rev() {
            let mut s = b[r];
            let start = self.slot(r, r);
            let cmax = (r + kl + ku).min(n - 1);
            for (off, bc) in b[r + 1..=cmax].iter().enumerate() {
                s = s - self.data[start + 1 + off] * *bc;
            }
            b[r] = s / self.data[start];
        }
    }
}

/// Factorization of `A − σI` for a real `A`, kept real when `σ` is real.
#[derive(Debug, Clone)]
pub enum ShiftedFactor {
    Real(BandLu<f64>),
    Complex(BandLu<Complex64>),
}

impl ShiftedFactor {
    pub fn new(op: &SparseOperator, shift: Complex64) -> Result<ShiftedFactor> {
        if shift.im == 0.0 {
            BandLu::factor(op, shift.re).map(ShiftedFactor::Real)
        } else {
            BandLu::factor(op, shift).map(ShiftedFactor::Complex)
        }
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        match self {
            ShiftedFactor::Complex(lu) => lu.solve_in_place(b),
            ShiftedFactor::Real(lu) => {
                let mut re: Vec<f64> = b.iter().map(|v| v.re).collect();
                let mut im: Vec<f64> = b.iter().map(|v| v.im).collect();
                lu.solve_in_place(&mut re);
                if im.iter().any(|v| *v != 0.0) {
                    lu.solve_in_place(&mut im);
                }
                for ((v, r), i) in b.iter_mut().zip(re).zip(im) {
                    *v = Complex64::new(r, i);
                }
            }
        }
    }
}
