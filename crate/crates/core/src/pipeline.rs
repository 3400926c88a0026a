//! End-to-end runs: operators, spectrum, fields, effective field and ensemble
//! verification, with every artifact written to an output directory.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::effective::{constraint_residuals, effective_vector_field, VectorField};
use crate::ensemble::{
    fit_complex_decay, fit_decay_rate, mean_observables_decay, simulate_paths_with, ComplexDecayFit, EnsembleStats,
    FitReport, SimulationConfig,
};
use crate::error::{Error, Result};
use crate::fields::{default_phase_reference, isochron, isostable_field, phase_field, zero_level_set, Contour};
use crate::grid::{Grid, ScalarField};
use crate::io::{write_atomic, write_json};
use crate::model::{builtin_model, ModelConfig, ModelSpec};
use crate::operator::{assemble_backward, assemble_forward};
use crate::spectral::{
    classify, leading_spectrum_with, stationary_density, SpectralOptions, SpectralRoles, Spectrum,
    DEFAULT_QUALITY_THRESHOLD,
};

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub grid: (usize, usize),
    pub k: usize,
    pub shift: (f64, f64),
    pub seed: u64,
    pub h: f64,
    pub paths: usize,
    /// Initial condition for the ensemble; picked from `Σ` when absent.
    pub x0: Option<(f64, f64)>,
    pub phase_ref: Option<(f64, f64)>,
    pub record_every: usize,
    /// Fit window; derived from `λ_Floq` when absent.
    pub window: Option<(f64, f64)>,
    pub isochrons: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            grid: (151, 151),
            k: 12,
            shift: (0.05, 0.0),
            seed: 0,
            h: 1e-3,
            paths: 10_000,
            x0: None,
            phase_ref: None,
            record_every: 10,
            window: None,
            isochrons: 8,
        }
    }
}

impl RunOptions {
    pub fn make_grid(&self, spec: &ModelSpec) -> Result<Grid> {
        Grid::new(spec.domain(), self.grid.0, self.grid.1)
    }

    fn spectral(&self) -> SpectralOptions {
        SpectralOptions { k: self.k, shift: C::new(self.shift.0, self.shift.1), ..Default::default() }
    }
}

/// Backward spectrum with its role assignment. Classification failures are
/// kept so callers can still export the raw spectrum.
pub struct SpectralAnalysis {
    pub grid: Grid,
    pub backward: Spectrum,
    pub roles: Result<SpectralRoles>,
}

pub fn analyze_spectrum(spec: &ModelSpec, opts: &RunOptions) -> Result<SpectralAnalysis> {
    let grid = opts.make_grid(spec)?;
    let op = assemble_backward(spec, &grid).map_err(|e| e.at("operator"))?;
    let backward = leading_spectrum_with(&op, &opts.spectral()).map_err(|e| e.at("spectrum"))?;
    let roles = classify(&backward, backward.tol_zero(), DEFAULT_QUALITY_THRESHOLD).map_err(|e| e.at("classify"));
    Ok(SpectralAnalysis { grid, backward, roles })
}

pub struct FieldBundle {
    pub p0: ScalarField,
    pub psi: ScalarField,
    pub sigma: ScalarField,
    pub phase_ref: (f64, f64),
    /// Zero contours of `Σ`, principal (largest area) first.
    pub sigma0: Vec<Contour>,
    pub isochrons: Vec<(f64, Vec<Contour>)>,
}

pub fn compute_fields(spec: &ModelSpec, roles: &SpectralRoles, grid: &Grid, opts: &RunOptions) -> Result<FieldBundle> {
    let fwd = assemble_forward(spec, grid).map_err(|e| e.at("operator"))?;
    let forward = leading_spectrum_with(&fwd, &opts.spectral()).map_err(|e| e.at("forward spectrum"))?;
    let p0 = stationary_density(&forward, forward.tol_zero()).map_err(|e| e.at("stationary density"))?;
    let phase_ref = opts.phase_ref.unwrap_or_else(|| default_phase_reference(&p0));
    let psi = phase_field(&roles.q_plus, phase_ref).map_err(|e| e.at("phase"))?;
    let sigma = isostable_field(&roles.q_floq, &p0).map_err(|e| e.at("isostable"))?;
    let sigma0 = zero_level_set(&sigma).map_err(|e| e.at("zero isostable"))?;
    let isochrons = (0..opts.isochrons)
        .map(|k| {
            let mut v = 2.0 * PI * k as f64 / opts.isochrons as f64;
            if v > PI {
                v -= 2.0 * PI;
            }
            (v, isochron(&psi, v))
        })
        .collect();
    Ok(FieldBundle { p0, psi, sigma, phase_ref, sigma0, isochrons })
}

/// Node inside the central half of the domain where the smaller of `|Σ|` and
/// `|Q₊|`, each relative to its maximum, is largest.
pub fn default_x0(sigma: &ScalarField, q_plus: &ScalarField) -> (f64, f64) {
    let g = sigma.grid();
    let d = g.domain();
    let (cx, cy) = d.center();
    let (hx, hy) = (0.25 * (d.x[1] - d.x[0]), 0.25 * (d.y[1] - d.y[0]));
    let (ms, mq) = (sigma.max_abs().max(f64::MIN_POSITIVE), q_plus.max_abs().max(f64::MIN_POSITIVE));
    let score = |k: usize| (sigma.values()[k].norm() / ms).min(q_plus.values()[k].norm() / mq);
    g.nodes()
        .enumerate()
        .filter(|(_, (_, _, x, y))| (x - cx).abs() <= hx && (y - cy).abs() <= hy)
        .max_by(|a, b| score(a.0).total_cmp(&score(b.0)))
        .map(|(_, (_, _, x, y))| (x, y))
        .unwrap_or((cx, cy))
}

/// `[min(0.5, t_hi/4), t_hi]` with `t_hi = min(8, 3/|λ_Floq|)`.
pub fn default_window(lambda_floq: f64) -> (f64, f64) {
    let hi = (3.0 / lambda_floq.abs()).min(8.0);
    ((hi / 4.0).min(0.5), hi)
}

pub struct EnsembleCheck {
    pub x0: (f64, f64),
    pub sigma_stats: EnsembleStats,
    pub q_stats: EnsembleStats,
    pub sigma_fit: FitReport,
    pub q_fit: ComplexDecayFit,
}

pub fn verify_decay(spec: &ModelSpec, roles: &SpectralRoles, sigma: &ScalarField, opts: &RunOptions) -> Result<EnsembleCheck> {
    let x0 = opts.x0.unwrap_or_else(|| default_x0(sigma, &roles.q_plus));
    let (lo, hi) = opts.window.unwrap_or_else(|| default_window(roles.lambda_floq));
    let config = SimulationConfig { x0, h: opts.h, t_max: hi, paths: opts.paths, seed: opts.seed, record_every: opts.record_every };
    let ens = simulate_paths_with(spec, config).map_err(|e| e.at("simulate"))?;
    let mut stats = mean_observables_decay(&ens, &[sigma, &roles.q_plus]).map_err(|e| e.at("simulate"))?;
    let q_stats = stats.pop().expect("two observables");
    let sigma_stats = stats.pop().expect("two observables");
    let sigma_fit = fit_decay_rate(&sigma_stats, lo, hi).map_err(|e| e.at("fit"))?.report(roles.lambda_floq);
    let q_fit = fit_complex_decay(&q_stats, lo, hi).map_err(|e| e.at("fit"))?;
    Ok(EnsembleCheck { x0, sigma_stats, q_stats, sigma_fit, q_fit })
}

/// Which stages [`run_stages`] executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Spectrum,
    Fields,
    EffectiveField,
    Simulate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub options: RunOptions,
    pub files: Vec<String>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// SHA-256 of the model configuration and run options.
pub fn config_hash(model: &ModelConfig, options: &RunOptions) -> Result<String> {
    let text = serde_json::to_string(&(model, options))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

pub struct RunSummary {
    pub roles: Option<SpectralRoles>,
    pub manifest: Manifest,
}

/// Runs every stage up to `last`, writing artifacts into `out` (which must exist).
pub fn run_stages(spec: &ModelSpec, opts: &RunOptions, out: &Path, last: Stage) -> Result<RunSummary> {
    if !out.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", out.display()),
        )));
    }
    let mut files: Vec<String> = Vec::new();
    let mut diagnostics = BTreeMap::new();
    let emit = |name: String, files: &mut Vec<String>, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        f(&out.join(&name))?;
        files.push(name);
        Ok(())
    };

    let analysis = analyze_spectrum(spec, opts)?;
    emit("spectrum.json".into(), &mut files, &|p| write_json(p, &analysis.backward.records()))?;
    let roles = analysis.roles?;
    emit("roles.json".into(), &mut files, &|p| write_json(p, &roles.record()))?;
    diagnostics.insert("cond3_checked".into(), roles.cond3_checked as f64);
    for hd in &roles.harmonics {
        diagnostics.insert(format!("harmonic{}_decaying_distance", hd.k), hd.decaying);
        diagnostics.insert(format!("harmonic{}_growing_distance", hd.k), hd.growing);
    }

    if last >= Stage::Fields {
        let fields = compute_fields(spec, &roles, &analysis.grid, opts)?;
        for (name, field) in [("psi.csv", &fields.psi), ("sigma.csv", &fields.sigma), ("p0.csv", &fields.p0)] {
            emit(name.into(), &mut files, &|p| write_atomic(p, |w| field.write_csv(w)))?;
        }
        for (k, c) in fields.sigma0.iter().enumerate() {
            emit(format!("sigma0_{k}.csv"), &mut files, &|p| write_atomic(p, |w| c.write_csv(w)))?;
        }
        for (v, cs) in &fields.isochrons {
            let mrad = (v * 1000.0).round() as i64;
            for (k, c) in cs.iter().enumerate() {
                let name = if k == 0 { format!("isochron_{mrad}.csv") } else { format!("isochron_{mrad}_{k}.csv") };
                emit(name, &mut files, &|p| write_atomic(p, |w| c.write_csv(w)))?;
            }
        }
        diagnostics.insert("boundary_mass".into(), boundary_mass(&fields.p0));
        diagnostics.insert("phase_ref_x".into(), fields.phase_ref.0);
        diagnostics.insert("phase_ref_y".into(), fields.phase_ref.1);

        if last >= Stage::EffectiveField {
            let vf = effective_vector_field(&roles.q_plus, &fields.sigma, roles.lambda_plus, roles.lambda_floq)
                .map_err(|e| e.at("effective field"))?;
            emit("effective_field.csv".into(), &mut files, &|p| write_atomic(p, |w| vf.write_csv(w)))?;
            let (rq, rs) = constraint_residuals(&vf, &roles.q_plus, &fields.sigma, roles.lambda_plus, roles.lambda_floq);
            diagnostics.insert("effective_residual_q".into(), rq);
            diagnostics.insert("effective_residual_sigma".into(), rs);
            diagnostics.insert("effective_masked".into(), masked_fraction(&vf));
        }

        if last >= Stage::Simulate {
            let check = verify_decay(spec, &roles, &fields.sigma, opts)?;
            emit("decay_stats.csv".into(), &mut files, &|p| write_atomic(p, |w| check.sigma_stats.write_csv(w)))?;
            emit("decay_stats_q.csv".into(), &mut files, &|p| write_atomic(p, |w| check.q_stats.write_csv(w)))?;
            emit("fit.json".into(), &mut files, &|p| write_json(p, &check.sigma_fit))?;
            emit("fit_q.json".into(), &mut files, &|p| write_json(p, &check.q_fit))?;
            diagnostics.insert("x0_x".into(), check.x0.0);
            diagnostics.insert("x0_y".into(), check.x0.1);
            diagnostics.insert("excluded_paths".into(), check.sigma_stats.excluded as f64);
            diagnostics.insert("truncated_paths".into(), check.sigma_stats.truncated as f64);
        }
    }

    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(spec.config(), opts)?,
        model: spec.config().clone(),
        options: opts.clone(),
        files,
        diagnostics,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunSummary { roles: Some(roles), manifest })
}

pub fn run_pipeline(spec: &ModelSpec, opts: &RunOptions, out: &Path) -> Result<RunSummary> {
    run_stages(spec, opts, out, Stage::Simulate)
}

/// Probability mass of `P₀` on the outermost ring of nodes.
pub fn boundary_mass(p0: &ScalarField) -> f64 {
    let g = p0.grid();
    g.nodes()
        .enumerate()
        .filter(|(_, (i, j, _, _))| *i == 0 || *j == 0 || *i + 1 == g.n() || *j + 1 == g.m())
        .map(|(k, _)| p0.values()[k].re)
        .sum::<f64>()
        * g.cell_area()
}

fn masked_fraction(vf: &VectorField) -> f64 {
    vf.masked_count() as f64 / vf.grid().len() as f64
}

/// One configuration of the reference eigenvalue table.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceRow {
    pub label: &'static str,
    pub model: &'static str,
    pub overrides: &'static [(&'static str, f64)],
    /// `(μ, ω, λ_Floq)`.
    pub values: [f64; 3],
}

pub const REFERENCE_TABLE: [ReferenceRow; 5] = [
    ReferenceRow { label: "Sp. Sink", model: "spiral-sink", overrides: &[], values: [-0.080, 0.564, -0.159] },
    ReferenceRow { label: "SL-iso", model: "stuart-landau", overrides: &[], values: [-0.213, 3.032, -2.833] },
    ReferenceRow { label: "SL-ani", model: "stuart-landau", overrides: &[("Dy", 2.5e-4)], values: [-0.108, 3.008, -3.117] },
    ReferenceRow { label: "Het-low", model: "heteroclinic", overrides: &[("D", 0.01125)], values: [-0.044, 0.383, -0.332] },
    ReferenceRow { label: "Het-high", model: "heteroclinic", overrides: &[("D", 0.1)], values: [-0.136, 0.505, -0.553] },
];

/// Agreement criterion: within `max(0.01, 5 %·|reference|)`.
pub fn within_table_tolerance(computed: f64, reference: f64) -> bool {
    (computed - reference).abs() <= (0.05 * reference.abs()).max(0.01)
}

impl ReferenceRow {
    pub fn spec(&self) -> Result<ModelSpec> {
        let ov: BTreeMap<String, f64> = self.overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin_model(self.model, &ov)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub reference: [f64; 3],
    pub computed: [f64; 3],
    pub abs_diff: [f64; 3],
    pub rel_diff: [f64; 3],
    pub within_tolerance: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableReport {
    pub grid_n: usize,
    pub rows: Vec<TableRow>,
    pub note: Option<String>,
}

impl TableReport {
    pub fn render(&self) -> String {
        let mut s = format!("grid {0}x{0}\n", self.grid_n);
        s += &format!(
            "{:<9} {:>9} {:>9} {:>9}   {:>9} {:>9} {:>9}   {:>8} {:>8} {:>8}  ok\n",
            "row", "mu_ref", "omega_ref", "lf_ref", "mu", "omega", "lf", "rel_mu", "rel_om", "rel_lf"
        );
        for r in &self.rows {
            s += &format!(
                "{:<9} {:>9.3} {:>9.3} {:>9.3}   {:>9.4} {:>9.4} {:>9.4}   {:>8.4} {:>8.4} {:>8.4}  {}\n",
                r.label,
                r.reference[0],
                r.reference[1],
                r.reference[2],
                r.computed[0],
                r.computed[1],
                r.computed[2],
                r.rel_diff[0],
                r.rel_diff[1],
                r.rel_diff[2],
                if r.within_tolerance { "yes" } else { "NO" }
            );
        }
        if let Some(n) = &self.note {
            s += n;
            s.push('\n');
        }
        s
    }
}

pub const TABLE_GRIDS: [usize; 3] = [51, 101, 151];

/// Recomputes every reference row at `grid_n × grid_n`. When `out` is given
/// the report is rewritten after each row, so a failure leaves the rows
/// finished so far on disk.
pub fn reproduce_table(grid_n: usize, k: usize, out: Option<&Path>) -> Result<TableReport> {
    if !TABLE_GRIDS.contains(&grid_n) {
        return Err(Error::InvalidGrid(format!("table resolution must be one of {TABLE_GRIDS:?}, got {grid_n}")));
    }
    let note = (grid_n < 151).then(|| format!("coarse {grid_n}x{grid_n} grid: deviations shrink under refinement to 151x151"));
    let mut report = TableReport { grid_n, rows: Vec::new(), note };
    let save = |report: &TableReport| -> Result<Option<PathBuf>> {
        match out {
            Some(dir) => {
                let p = dir.join("table.json");
                write_json(&p, report)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    };
    let opts = RunOptions { grid: (grid_n, grid_n), k, ..Default::default() };
    for row in REFERENCE_TABLE {
        let start = Instant::now();
        let spec = row.spec()?;
        let analysis = analyze_spectrum(&spec, &opts).inspect_err(|_| {
            let _ = save(&report);
        })?;
        let roles = match analysis.roles {
            Ok(r) => r,
            Err(e) => {
                save(&report)?;
                return Err(e);
            }
        };
        let computed = [roles.mu(), roles.omega(), roles.lambda_floq];
        let abs_diff: [f64; 3] = std::array::from_fn(|i| (computed[i] - row.values[i]).abs());
        let rel_diff: [f64; 3] = std::array::from_fn(|i| abs_diff[i] / row.values[i].abs());
        report.rows.push(TableRow {
            label: row.label.into(),
            reference: row.values,
            computed,
            abs_diff,
            rel_diff,
            within_tolerance: (0..3).all(|i| within_table_tolerance(computed[i], row.values[i])),
            seconds: start.elapsed().as_secs_f64(),
        });
        save(&report)?;
    }
    Ok(report)
}
