use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isostable::model::BUILTIN_NAMES;
use isostable::pipeline::{run_stages, RunSummary, Stage};
use isostable::{builtin_model, reproduce_table, ErrorKind, ModelSpec, RunOptions};

/// Spectral phase and amplitude analysis of noisy planar oscillators.
#[derive(Parser)]
#[command(name = "isostable", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leading backward spectrum and the roles of its modes.
    Spectrum(RunArgs),
    /// Spectrum plus phase, isostable, stationary density and level sets.
    Fields(RunArgs),
    /// Fields plus the effective vector field.
    EffectiveField(RunArgs),
    /// Runs through the ensemble check of the predicted mean decay (same outputs as `pipeline`).
    Simulate(RunArgs),
    /// Every stage.
    Pipeline(RunArgs),
    /// Recomputes the reference eigenvalue table.
    ReproduceTable(TableArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Builtin model name or path to a JSON model file.
    #[arg(long)]
    model: String,
    /// Parameter override, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Grid points along x and y.
    #[arg(long, num_args = 2, value_names = ["N", "M"], default_values_t = [151, 151])]
    grid: Vec<usize>,
    /// Number of eigenpairs to compute.
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Euler-Maruyama step.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Ensemble initial condition.
    #[arg(long, value_name = "X,Y", value_parser = parse_point)]
    x0: Option<(f64, f64)>,
    /// Point where the phase is zero.
    #[arg(long, value_name = "X,Y", value_parser = parse_point)]
    phase_ref: Option<(f64, f64)>,
    /// Fit window for the decay rates.
    #[arg(long, value_name = "T0,T1", value_parser = parse_point)]
    window: Option<(f64, f64)>,
    /// Existing directory for the outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Grid points per axis: 51, 101 or 151.
    #[arg(long, default_value_t = 151)]
    grid: usize,
    #[arg(long, default_value_t = 12)]
    k: usize,
    /// Directory for table.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = value.trim().parse::<f64>().map_err(|e| format!("{value}: {e}"))?;
    Ok((name.trim().to_string(), v))
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated numbers, got `{s}`"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn load_model(name: &str, params: &[(String, f64)]) -> isostable::Result<ModelSpec> {
    let overrides: BTreeMap<String, f64> = params.iter().cloned().collect();
    if BUILTIN_NAMES.contains(&name) || !Path::new(name).exists() {
        builtin_model(name, &overrides)
    } else {
        ModelSpec::from_path(name)?.with_overrides(&overrides)
    }
}

fn run(args: &RunArgs, last: Stage) -> isostable::Result<RunSummary> {
    let spec = load_model(&args.model, &args.params)?;
    let opts = RunOptions {
        grid: (args.grid[0], args.grid[1]),
        k: args.k,
        seed: args.seed,
        h: args.h,
        paths: args.paths,
        x0: args.x0,
        phase_ref: args.phase_ref,
        window: args.window,
        ..Default::default()
    };
    run_stages(&spec, &opts, &args.out, last)
}

fn report(summary: &RunSummary, out: &Path) {
    if let Some(r) = &summary.roles {
        println!("mu = {:.6}, omega = {:.6}, lambda_floq = {:.6}", r.mu(), r.omega(), r.lambda_floq);
    }
    for (name, v) in &summary.manifest.diagnostics {
        println!("{name} = {v:.6e}");
    }
    println!("{} files written to {}", summary.manifest.files.len() + 1, out.display());
}

fn exit_code(kind: ErrorKind) -> ExitCode {
    ExitCode::from(match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Classification => 4,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ReproduceTable(t) => reproduce_table(t.grid, t.k, t.out.as_deref()).map(|r| print!("{}", r.render())),
        Command::Spectrum(a) => run(a, Stage::Spectrum).map(|s| report(&s, &a.out)),
        Command::Fields(a) => run(a, Stage::Fields).map(|s| report(&s, &a.out)),
        Command::EffectiveField(a) => run(a, Stage::EffectiveField).map(|s| report(&s, &a.out)),
        Command::Simulate(a) | Command::Pipeline(a) => run(a, Stage::Simulate).map(|s| report(&s, &a.out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
