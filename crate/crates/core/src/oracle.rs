//! Closed-form reference quantities for the planar Ornstein–Uhlenbeck process
//! `dX = A X dt + B dW` with `A` in canonical rotation form `[[μ, −ω], [ω, μ]]`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{linear_model, Boundary, Domain, ModelSpec};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCanonical {
    pub mu: f64,
    pub omega: f64,
    pub b: [[f64; 2]; 2],
}

/// Eigenvalues of the canonical process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuEigendata {
    pub lambda_plus: C,
    pub lambda_floq: f64,
    pub eps: f64,
}

impl OuCanonical {
    pub fn new(mu: f64, omega: f64, b: [[f64; 2]; 2]) -> Result<OuCanonical> {
        if !(mu < 0.0) || !(omega > 0.0) {
            return Err(Error::InvalidModel(format!("canonical OU needs μ < 0 < ω, got μ = {mu}, ω = {omega}")));
        }
        Ok(OuCanonical { mu, omega, b })
    }

    /// Isotropic noise `B = √(2D) I`.
    pub fn isotropic(mu: f64, omega: f64, d: f64) -> Result<OuCanonical> {
        let s = (2.0 * d).sqrt();
        OuCanonical::new(mu, omega, [[s, 0.0], [0.0, s]])
    }

    pub fn a(&self) -> [[f64; 2]; 2] {
        [[self.mu, -self.omega], [self.omega, self.mu]]
    }

    /// `ε = ‖B‖_F² / 4`.
    pub fn eps(&self) -> f64 {
        self.b.iter().flatten().map(|v| v * v).sum::<f64>() / 4.0
    }

    pub fn eigendata(&self) -> OuEigendata {
        OuEigendata { lambda_plus: C::new(self.mu, self.omega), lambda_floq: 2.0 * self.mu, eps: self.eps() }
    }

    /// `Q₊(x) = x₁ + i x₂`.
    pub fn q_plus(&self, (x, y): (f64, f64)) -> C {
        C::new(x, y)
    }

    /// `Σ(x) = 2 + (μ/ε) |x|²`.
    pub fn sigma(&self, (x, y): (f64, f64)) -> f64 {
        2.0 + self.mu / self.eps() * (x * x + y * y)
    }

    pub fn sigma0_radius(&self) -> f64 {
        (2.0 * self.eps() / self.mu.abs()).sqrt()
    }

    /// Effective vector field; singular at the origin.
    pub fn effective_field(&self, (x, y): (f64, f64)) -> Result<[C; 2]> {
        let r2 = x * x + y * y;
        if r2 == 0.0 {
            return Err(Error::OutsideGrid(x, y));
        }
        let (mu, om, e) = (self.mu, self.omega, self.eps());
        let f1 = C::new(mu * x - om * y, 0.0) + 2.0 * e * C::new(x, -y) / r2;
        let f2 = C::new(om * x + mu * y, 0.0) + 2.0 * e * C::new(y, x) / r2;
        Ok([f1, f2])
    }

    pub fn model(&self, domain: Domain, boundary: Boundary) -> Result<ModelSpec> {
        linear_model("ou-canonical", self.a(), self.b, domain, boundary)
    }
}

pub fn ou_eigendata(p: &OuCanonical) -> OuEigendata {
    p.eigendata()
}

pub fn ou_effective_field(point: (f64, f64), p: &OuCanonical) -> Result<[C; 2]> {
    p.effective_field(point)
}

pub fn ou_sigma0_radius(p: &OuCanonical) -> f64 {
    p.sigma0_radius()
}

/// Result of bringing a general linear drift into canonical form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canonicalization {
    /// Columns `(a, −b)` from the eigenvector `a + ib` of `μ + iω`, scaled to `|det T| = 1`.
    pub t: [[f64; 2]; 2],
    pub t_inv: [[f64; 2]; 2],
    pub ou: OuCanonical,
}

impl Canonicalization {
    /// Canonical coordinates `T⁻¹ x` of an original-coordinate point.
    pub fn to_canonical(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let t = &self.t_inv;
        (t[0][0] * x + t[0][1] * y, t[1][0] * x + t[1][1] * y)
    }
}

/// Similarity transform `x = T z` with `T⁻¹ A T = [[μ, −ω], [ω, μ]]` and noise `T⁻¹ B`.
pub fn canonicalize(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> Result<Canonicalization> {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let mu = tr / 2.0;
    let disc = det - mu * mu;
    if !(disc > 0.0) {
        return Err(Error::InvalidModel("drift matrix has real eigenvalues".into()));
    }
    let omega = disc.sqrt();
    // (A − λI) v = 0 with λ = μ + iω; pick the better-conditioned row
    let (v1, v2) = if a[0][1].abs() >= a[1][0].abs() {
        (C::new(a[0][1], 0.0), C::new(mu, omega) - a[0][0])
    } else {
        (C::new(mu, omega) - a[1][1], C::new(a[1][0], 0.0))
    };
    let mut t = [[v1.re, -v1.im], [v2.re, -v2.im]];
    let d = t[0][0] * t[1][1] - t[0][1] * t[1][0];
    let s = d.abs().sqrt();
    t.iter_mut().flatten().for_each(|v| *v /= s);
    let d = d / (s * s);
    let t_inv = [[t[1][1] / d, -t[0][1] / d], [-t[1][0] / d, t[0][0] / d]];
    let mut bc = [[0.0; 2]; 2];
    for (r, row) in bc.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = t_inv[r][0] * b[0][c] + t_inv[r][1] * b[1][c];
        }
    }
    Ok(Canonicalization { t, t_inv, ou: OuCanonical::new(mu, omega, bc)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn example() -> OuCanonical {
        OuCanonical::new(-0.1, 1.0, [[0.2, 0.0], [0.0, 0.0]]).unwrap()
    }

    #[test]
    fn closed_forms() {
        let p = example();
        assert!((p.eps() - 0.01).abs() < 1e-15);
        assert_eq!(p.sigma((0.0, 0.0)), 2.0);
        assert_eq!(p.q_plus((0.0, 1.0)), C::new(0.0, 1.0));
        assert!((p.sigma0_radius() - 0.2f64.sqrt()).abs() < 1e-15);
        let f = p.effective_field((1.0, 0.0)).unwrap();
        assert!((f[0].re + 0.08).abs() < 1e-15);
        assert_eq!(f[0].im, 0.0);
        assert!(p.effective_field((0.0, 0.0)).is_err());
        assert!(OuCanonical::new(0.1, 1.0, [[0.0; 2]; 2]).is_err());
    }

    #[test]
    fn effective_field_is_tangent_on_the_zero_isostable() {
        let p = example();
        let r = p.sigma0_radius();
        for k in 0..12 {
            let th = k as f64 * 0.5;
            let (x, y) = (r * th.cos(), r * th.sin());
            let f = p.effective_field((x, y)).unwrap();
            let radial = (f[0].re * x + f[1].re * y) / r;
            assert!(radial.abs() < 1e-14);
        }
    }

    #[test]
    fn effective_field_solves_both_constraints() {
        let p = OuCanonical::isotropic(-0.0796, 0.5643, 1.25e-3).unwrap();
        let e = p.eigendata();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pt = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            let f = p.effective_field(pt).unwrap();
            // ∇Q₊ = (1, i), ∇Σ = (2μ/ε) x
            let q_res = f[0] + C::i() * f[1] - e.lambda_plus * p.q_plus(pt);
            let g = 2.0 * p.mu / p.eps();
            let s_res = g * (pt.0 * f[0] + pt.1 * f[1]) - e.lambda_floq * p.sigma(pt);
            assert!(q_res.norm() < 1e-10 && s_res.norm() < 1e-10 * (1.0 + p.sigma(pt).abs()));
        }
    }

    #[test]
    fn closed_forms_are_generator_eigenfunctions() {
        // L†u = f·∇u + ½ (BBᵀ)_ij ∂ij u by finite differences with spacing 1e-5
        let p = OuCanonical::new(-0.3, 0.8, [[0.1, 0.05], [-0.02, 0.1]]).unwrap();
        let e = p.eigendata();
        let bbt = |i: usize, j: usize| (0..2).map(|k| p.b[i][k] * p.b[j][k]).sum::<f64>();
        // the Σ closed form needs isotropic BBᵀ, so check it on the isotropic twin
        let iso = OuCanonical::isotropic(p.mu, p.omega, 0.004).unwrap();
        let h = 1e-5;
        let gen = |q: &OuCanonical, u: &dyn Fn((f64, f64)) -> C, (x, y): (f64, f64), d: &dyn Fn(usize, usize) -> f64| {
            let a = q.a();
            let ux = (u((x + h, y)) - u((x - h, y))) / (2.0 * h);
            let uy = (u((x, y + h)) - u((x, y - h))) / (2.0 * h);
            let uxx = (u((x + h, y)) - 2.0 * u((x, y)) + u((x - h, y))) / (h * h);
            let uyy = (u((x, y + h)) - 2.0 * u((x, y)) + u((x, y - h))) / (h * h);
            let uxy = (u((x + h, y + h)) - u((x + h, y - h)) - u((x - h, y + h)) + u((x - h, y - h))) / (4.0 * h * h);
            let f = (a[0][0] * x + a[0][1] * y, a[1][0] * x + a[1][1] * y);
            f.0 * ux + f.1 * uy + 0.5 * (d(0, 0) * uxx + 2.0 * d(0, 1) * uxy + d(1, 1) * uyy)
        };
        let iso_d = |i: usize, j: usize| if i == j { 2.0 * 0.004 } else { 0.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pt = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let lq = gen(&p, &|z| p.q_plus(z), pt, &bbt);
            assert!((lq - e.lambda_plus * p.q_plus(pt)).norm() < 1e-6);
            let ls = gen(&iso, &|z| C::new(iso.sigma(z), 0.0), pt, &iso_d);
            assert!((ls - 2.0 * iso.mu * iso.sigma(pt)).norm() < 1e-6 * (1.0 + iso.sigma(pt).abs()), "{ls}");
        }
    }

    #[test]
    fn spiral_sink_canonical_form() {
        let a = [[0.1598, -0.52], [0.7227, -0.319]];
        let s = (2.0 * 1.25e-3f64).sqrt();
        let c = canonicalize(a, [[s, 0.0], [0.0, s]]).unwrap();
        assert!((c.ou.mu + 0.0796).abs() < 1e-4);
        assert!((c.ou.omega - 0.5643).abs() < 1e-4);
        let det = c.t[0][0] * c.t[1][1] - c.t[0][1] * c.t[1][0];
        assert!((det.abs() - 1.0).abs() < 1e-12);
        // T⁻¹ A T is canonical
        let at = |r: usize, k: usize| (0..2).map(|m| a[r][m] * c.t[m][k]).sum::<f64>();
        let canon = c.ou.a();
        for r in 0..2 {
            for k in 0..2 {
                let v: f64 = (0..2).map(|m| c.t_inv[r][m] * at(m, k)).sum();
                assert!((v - canon[r][k]).abs() < 1e-12);
            }
        }
        assert!((c.ou.eps() - 1.25e-3).abs() / 1.25e-3 < 0.5);
    }
}
