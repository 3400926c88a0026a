//! Euler–Maruyama ensembles and the mean decay of spectral observables.
//!
//! Path `p` draws its Gaussian increments from a ChaCha8 generator seeded with
//! the ensemble seed and switched to stream `p`, so every path is reproducible
//! on its own and the ensemble statistics do not depend on thread scheduling.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::io::fmt17;
use crate::model::{Boundary, Domain, ModelSpec};

type C = Complex64;

/// Paths per parallel work item; fixed so the reduction order never changes.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub x0: (f64, f64),
    pub h: f64,
    pub t_max: f64,
    pub paths: usize,
    pub seed: u64,
    /// Record every this many steps.
    pub record_every: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { x0: (0.0, 0.0), h: 1e-3, t_max: 8.0, paths: 10_000, seed: 0, record_every: 10 }
    }
}

/// A lazily simulated ensemble; paths are generated on demand.
#[derive(Debug, Clone)]
pub struct PathEnsemble<'a> {
    spec: &'a ModelSpec,
    config: SimulationConfig,
    steps: usize,
    noise: Option<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    /// States at [`PathEnsemble::times`].
    pub states: Vec<(f64, f64)>,
    /// Hit a truncated wall at least once.
    pub truncated: bool,
    /// Stayed finite; non-finite paths stop early and are excluded from statistics.
    pub finite: bool,
}

pub fn simulate_paths(spec: &ModelSpec, x0: (f64, f64), h: f64, t_max: f64, paths: usize, seed: u64) -> Result<PathEnsemble<'_>> {
    simulate_paths_with(spec, SimulationConfig { x0, h, t_max, paths, seed, ..Default::default() })
}

pub fn simulate_paths_with(spec: &ModelSpec, config: SimulationConfig) -> Result<PathEnsemble<'_>> {
    let bad = |m: String| Err(Error::InvalidSimulation(m));
    if !(config.h > 0.0) || !config.h.is_finite() {
        return bad(format!("step size {} must be positive", config.h));
    }
    if !(config.t_max >= 10.0 * config.h) {
        return bad(format!("t_max {} is shorter than ten steps", config.t_max));
    }
    if config.paths == 0 || config.record_every == 0 {
        return bad("paths and record stride must be positive".into());
    }
    if !spec.domain().contains(config.x0) {
        return bad(format!("x0 {:?} lies outside the domain", config.x0));
    }
    let steps = (config.t_max / config.h).round() as usize;
    Ok(PathEnsemble { spec, noise: spec.constant_noise(), config, steps })
}

impl<'a> PathEnsemble<'a> {
    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn times(&self) -> Vec<f64> {
        let stride = self.config.record_every;
        (0..=self.steps / stride).map(|r| (r * stride) as f64 * self.config.h).collect()
    }

    pub fn path(&self, p: usize) -> SamplePath {
        let mut states = Vec::with_capacity(self.steps / self.config.record_every + 1);
        let (truncated, finite) = self.run_path(p, |_, x| states.push(x));
        SamplePath { states, truncated, finite }
    }

    /// Simulates path `p`, calling `visit(record, state)` at every recorded time.
    /// Returns `(truncated, finite)`.
    pub fn run_path(&self, p: usize, mut visit: impl FnMut(usize, (f64, f64))) -> (bool, bool) {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(p as u64);
        let k = self.spec.noise_dim();
        let sqrt_h = cfg.h.sqrt();
        let domain = self.spec.domain();
        let boundary = self.spec.boundary();
        let mut xi = vec![0.0; k];
        let (mut x, mut y) = cfg.x0;
        let mut truncated = false;
        visit(0, (x, y));
        for step in 1..=self.steps {
            let (fx, fy) = self.spec.drift_unchecked(x, y);
            xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let (mut dx, mut dy) = (fx * cfg.h, fy * cfg.h);
            match &self.noise {
                Some(g) => {
                    for c in 0..k {
                        dx += g[0][c] * sqrt_h * xi[c];
                        dy += g[1][c] * sqrt_h * xi[c];
                    }
                }
                None => {
                    for c in 0..k {
                        dx += self.spec.noise_entry(0, c, x, y) * sqrt_h * xi[c];
                        dy += self.spec.noise_entry(1, c, x, y) * sqrt_h * xi[c];
                    }
                }
            }
            x += dx;
            y += dy;
            if !(x.is_finite() && y.is_finite()) {
                return (truncated, false);
            }
            match boundary {
                Boundary::Reflecting => {
                    x = fold(x, domain.x);
                    y = fold(y, domain.y);
                }
                Boundary::Truncated => {
                    let (cx, cy) = clamp(x, y, &domain);
                    truncated |= cx != x || cy != y;
                    (x, y) = (cx, cy);
                }
            }
            if step % cfg.record_every == 0 {
                visit(step / cfg.record_every, (x, y));
            }
        }
        (truncated, true)
    }
}

/// Mirrors excursions back across the walls, repeatedly if needed.
fn fold(mut v: f64, [lo, hi]: [f64; 2]) -> f64 {
    for _ in 0..64 {
        if v > hi {
            v = 2.0 * hi - v;
        } else if v < lo {
            v = 2.0 * lo - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

fn clamp(x: f64, y: f64, d: &Domain) -> (f64, f64) {
    (x.clamp(d.x[0], d.x[1]), y.clamp(d.y[0], d.y[1]))
}

/// Per-time ensemble mean of `O(X_t) / O(x₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<C>,
    pub n_paths: usize,
    pub excluded: usize,
    pub truncated: usize,
    pub seed: u64,
    pub model: String,
    pub observable: String,
}

impl EnsembleStats {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,re_mean,im_mean,n_paths")?;
        for (t, m) in self.times.iter().zip(&self.mean) {
            writeln!(w, "{},{},{},{}", fmt17(*t), fmt17(m.re), fmt17(m.im), self.n_paths)?;
        }
        Ok(())
    }
}

struct Partial {
    sum: Vec<C>,
    n: usize,
    excluded: usize,
    truncated: usize,
}

pub fn mean_observable_decay(ensemble: &PathEnsemble<'_>, field: &ScalarField) -> Result<EnsembleStats> {
    Ok(mean_observables_decay(ensemble, &[field])?.remove(0))
}

/// [`mean_observable_decay`] for several observables over one simulation pass.
pub fn mean_observables_decay(ensemble: &PathEnsemble<'_>, fields: &[&ScalarField]) -> Result<Vec<EnsembleStats>> {
    let x0 = ensemble.config.x0;
    let mut inv = Vec::with_capacity(fields.len());
    for f in fields {
        let o0 = f.interpolate(x0)?;
        if o0.norm() <= 1e-6 * f.max_abs() || o0.norm() == 0.0 {
            return Err(Error::ZeroObservable);
        }
        inv.push(1.0 / o0);
    }
    let records = ensemble.steps / ensemble.config.record_every + 1;
    let width = records * fields.len();
    let paths = ensemble.config.paths;
    let chunks: Vec<Partial> = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut part = Partial { sum: vec![C::default(); width], n: 0, excluded: 0, truncated: 0 };
            let mut buf = vec![C::default(); width];
            for p in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                let mut inside = true;
                let (truncated, finite) = ensemble.run_path(p, |r, x| {
                    for (o, f) in fields.iter().enumerate() {
                        match f.interpolate(x) {
                            Ok(v) => buf[o * records + r] = v * inv[o],
                            Err(_) => inside = false,
                        }
                    }
                });
                if finite && inside {
                    part.sum.iter_mut().zip(&buf).for_each(|(s, b)| *s += b);
                    part.n += 1;
                    part.truncated += usize::from(truncated);
                } else {
                    part.excluded += 1;
                }
            }
            part
        })
        .collect();
    let mut sum = vec![C::default(); width];
    let (mut n, mut excluded, mut truncated) = (0, 0, 0);
    for part in chunks {
        sum.iter_mut().zip(&part.sum).for_each(|(s, b)| *s += b);
        n += part.n;
        excluded += part.excluded;
        truncated += part.truncated;
    }
    if n == 0 {
        return Err(Error::InvalidSimulation("every path diverged".into()));
    }
    let times = ensemble.times();
    Ok(fields
        .iter()
        .enumerate()
        .map(|(o, f)| EnsembleStats {
            times: times.clone(),
            mean: sum[o * records..(o + 1) * records].iter().map(|s| s / n as f64).collect(),
            n_paths: n,
            excluded,
            truncated,
            seed: ensemble.config.seed,
            model: ensemble.spec.name().to_string(),
            observable: f.label().to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rate: f64,
    pub stderr: f64,
    pub window: [f64; 2],
    pub lambda_ref: f64,
    pub rel_error: f64,
}

impl DecayFit {
    pub fn report(&self, lambda_ref: f64) -> FitReport {
        FitReport {
            rate: self.rate,
            stderr: self.stderr,
            window: [self.window.0, self.window.1],
            lambda_ref,
            rel_error: ((self.rate - lambda_ref) / lambda_ref).abs(),
        }
    }
}

/// Fitted `E[Q(X_t)]/Q(x₀) ≈ e^{(μ + iω) t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexDecayFit {
    pub mu: f64,
    pub mu_stderr: f64,
    pub omega: f64,
    pub omega_stderr: f64,
    pub window: [f64; 2],
}

/// Minimum number of samples inside a fit window.
pub const MIN_SAMPLES: usize = 10;

fn window(stats: &EnsembleStats, t_lo: f64, t_hi: f64) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..stats.times.len()).filter(|&k| stats.times[k] >= t_lo && stats.times[k] <= t_hi).collect();
    if idx.len() < MIN_SAMPLES {
        return Err(Error::FitWindow(format!("[{t_lo}, {t_hi}] holds {} samples, need {MIN_SAMPLES}", idx.len())));
    }
    Ok(idx)
}

/// Ordinary least squares slope and its standard error.
fn ols(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let (tm, ym) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = t.iter().zip(y).map(|(a, b)| (b - ym - slope * (a - tm)).powi(2)).sum();
    (slope, (ssr / (n - 2.0) / sxx).sqrt())
}

/// Slope of `ln Re(mean ratio)` over `[t_lo, t_hi]`.
pub fn fit_decay_rate(stats: &EnsembleStats, t_lo: f64, t_hi: f64) -> Result<DecayFit> {
    let idx = window(stats, t_lo, t_hi)?;
    if let Some(&k) = idx.iter().find(|&&k| !(stats.mean[k].re > 0.0)) {
        return Err(Error::FitWindow(format!("mean ratio {} at t = {} is not positive", stats.mean[k].re, stats.times[k])));
    }
    let t: Vec<f64> = idx.iter().map(|&k| stats.times[k]).collect();
    let y: Vec<f64> = idx.iter().map(|&k| stats.mean[k].re.ln()).collect();
    let (rate, stderr) = ols(&t, &y);
    Ok(DecayFit { rate, stderr, window: (t_lo, t_hi), samples: idx.len() })
}

/// Slopes of `ln |mean|` and of the unwrapped `arg mean` over `[t_lo, t_hi]`.
pub fn fit_complex_decay(stats: &EnsembleStats, t_lo: f64, t_hi: f64) -> Result<ComplexDecayFit> {
    let idx = window(stats, t_lo, t_hi)?;
    let mut phase = Vec::with_capacity(stats.mean.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for m in &stats.mean {
        let a = m.arg();
        let d = a - prev;
        if d > std::f64::consts::PI {
            offset -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            offset += 2.0 * std::f64::consts::PI;
        }
        prev = a;
        phase.push(a + offset);
    }
    if let Some(&k) = idx.iter().find(|&&k| stats.mean[k].norm() == 0.0) {
        return Err(Error::FitWindow(format!("mean vanishes at t = {}", stats.times[k])));
    }
    let t: Vec<f64> = idx.iter().map(|&k| stats.times[k]).collect();
    let lm: Vec<f64> = idx.iter().map(|&k| stats.mean[k].norm().ln()).collect();
    let ph: Vec<f64> = idx.iter().map(|&k| phase[k]).collect();
    let (mu, mu_stderr) = ols(&t, &lm);
    let (omega, omega_stderr) = ols(&t, &ph);
    Ok(ComplexDecayFit { mu, mu_stderr, omega, omega_stderr, window: [t_lo, t_hi] })
}
