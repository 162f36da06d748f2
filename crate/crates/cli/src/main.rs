//! Command-line front end: mask ensembles, simulated measurements,
//! reconstruction, Monte Carlo sweeps and Fourier-bias evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use maskpol::bench::{
    draw_modulation_set, emit_plots, run_experiment, summarize, write_records, ExperimentConfig, SetDensityMode,
    SignalMode,
};
use maskpol::masks::{build_vertex_masks, AlphaMode, MaskEnsemble};
use maskpol::measure::{add_noise, measure_all, MeasurementSet, NoiseModel, SignalInstance};
use maskpol::recover::{recover, relative_error, RecoveryParams};
use maskpol::setgen::{fourier_bias, min_size_lower_bound, spectral_gap_from_bias, ModulationSet};

#[derive(Parser)]
#[command(name = "maskpol", version, about = "Phase retrieval from masked DFT intensities by polarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask ensemble utilities.
    Masks {
        #[command(subcommand)]
        command: MasksCommand,
    },
    /// Draw or load a signal and write its (optionally noisy) intensities.
    Simulate(SimulateArgs),
    /// Reconstruct a signal from an ensemble and its intensities.
    Recover(RecoverArgs),
    /// Run a Monte Carlo sweep described by a key = value config file.
    Experiment(ExperimentArgs),
    /// Fourier bias utilities.
    Bias {
        #[command(subcommand)]
        command: BiasCommand,
    },
}

#[derive(Subcommand)]
enum MasksCommand {
    /// Generate vertex masks and a modulation set, write the ensemble JSON.
    Gen(GenArgs),
}

#[derive(Subcommand)]
enum BiasCommand {
    /// Print the Fourier bias and graph spectral gap of a modulation set.
    Eval(BiasArgs),
}

fn parse_set(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().with_context(|| format!("bad set element '{s}'")))
        .collect()
}

#[derive(Args)]
struct GenArgs {
    /// Signal length M.
    #[arg(long)]
    dim: usize,
    /// Number of vertex masks K.
    #[arg(long = "count", short = 'K', default_value_t = 3)]
    count: usize,
    /// deterministic, random-unit-circle or gaussian.
    #[arg(long, default_value = "deterministic")]
    mode: AlphaMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit modulation set, e.g. `1,3,5,7`; drawn at random when absent.
    #[arg(long)]
    set: Option<String>,
    /// section4 or paper-c, for a randomly drawn set.
    #[arg(long, default_value = "section4")]
    density_mode: SetDensityMode,
    /// Density constant for paper-c.
    #[arg(long, default_value_t = 144.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Existing signal CSV (`m,re,im`); a Gaussian signal is drawn when absent.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// complex or real, for a drawn signal.
    #[arg(long, default_value = "complex")]
    signal_mode: SignalMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variance of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    noise_seed: u64,
    /// Where to write the signal, when it was drawn here.
    #[arg(long)]
    signal_out: Option<PathBuf>,
    /// Measurement CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Estimate CSV (`m,re,im`).
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON; defaults to the estimate path with a `.json` extension.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Use |I| instead of max(I, 0) for negative vertex intensities.
    #[arg(long)]
    abs_negative: bool,
    /// Noise variance recorded with the measurements (informational).
    #[arg(long, default_value_t = 0.0)]
    noise_variance: f64,
    /// Ground-truth signal; when given, the relative error is printed.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results CSV, one row per (M, sigma2, trial).
    #[arg(long)]
    out: PathBuf,
    /// Directory for one SVG per noise level.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long)]
    dim: usize,
    /// Comma-separated residues, e.g. `1,3,5,7`.
    #[arg(long)]
    set: String,
    /// Also print the size lower bound implied by a gap of at least this value.
    #[arg(long)]
    eps: Option<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn load_ensemble(path: &Path) -> Result<MaskEnsemble> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    MaskEnsemble::from_json(&text).with_context(|| format!("invalid ensemble in {}", path.display()))
}

fn masks_gen(args: GenArgs) -> Result<()> {
    let set = match &args.set {
        Some(text) => ModulationSet::new(args.dim, parse_set(text)?)?,
        None => {
            let cfg = ExperimentConfig {
                set_density_mode: args.density_mode,
                c: args.c,
                ..ExperimentConfig::default()
            };
            draw_modulation_set(&cfg, args.dim, maskpol::rng::stream(args.seed, 0))?
        }
    };
    let vertex = build_vertex_masks(args.dim, args.count, args.mode, args.seed)?;
    let ensemble = MaskEnsemble::new(vertex, set)?;
    std::fs::write(&args.out, ensemble.to_json()?).with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "M={} K={} |A|={} masks={}",
        ensemble.dim(),
        ensemble.count(),
        ensemble.modulation_set().len(),
        ensemble.num_masks()
    );
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let ensemble = load_ensemble(&args.ensemble)?;
    let signal = match &args.signal {
        Some(path) => SignalInstance::read_csv(open(path)?)?,
        None => SignalInstance::gaussian(ensemble.dim(), args.signal_mode == SignalMode::Complex, args.seed),
    };
    if signal.dim() != ensemble.dim() {
        bail!("signal has length {} but the ensemble has M = {}", signal.dim(), ensemble.dim());
    }
    let clean = measure_all(&signal, &ensemble)?;
    let meas = add_noise(
        &clean,
        &NoiseModel {
            variance: args.noise,
            seed: args.noise_seed,
        },
    )?;
    meas.write_csv(create(&args.out)?)?;
    if let Some(path) = &args.signal_out {
        signal.write_csv(create(path)?)?;
    }
    Ok(())
}

fn recover_cmd(args: RecoverArgs) -> Result<()> {
    let ensemble = load_ensemble(&args.ensemble)?;
    let meas = MeasurementSet::read_csv(open(&args.measurements)?, &ensemble, args.noise_variance)?;
    let params = RecoveryParams {
        alpha: args.alpha,
        tau: args.tau,
        clamp_negative: !args.abs_negative,
    };
    params.validate()?;
    let result = recover(&meas, &ensemble, &params);
    result.estimate.write_csv(create(&args.out)?)?;
    let diag_path = args.diagnostics.clone().unwrap_or_else(|| args.out.with_extension("json"));
    std::fs::write(&diag_path, serde_json::to_string_pretty(&result.diagnostics())?)
        .with_context(|| format!("cannot write {}", diag_path.display()))?;
    println!(
        "success={} surviving_vertices={} final_gap={:.6} pruning_iterations={}",
        result.success, result.surviving_vertices, result.final_gap, result.pruning_iterations
    );
    if let Some(msg) = &result.message {
        println!("note: {msg}");
    }
    if let Some(path) = &args.reference {
        let x = SignalInstance::read_csv(open(path)?)?;
        println!("rel_error={:e}", relative_error(&result.estimate, &x)?);
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("cannot read {}", args.config.display()))?;
    let config = ExperimentConfig::parse(&text)?;
    let records = run_experiment(&config)?;
    write_records(&records, create(&args.out)?)?;
    let summary = summarize(&records);
    println!("{:>6} {:>8} {:>4} {:>8} {:>12} {:>12} {:>12}", "M", "sigma2", "n", "success", "mean_err", "std_err", "mean_ms");
    for c in &summary {
        println!(
            "{:>6} {:>8} {:>4} {:>8} {:>12.4e} {:>12.4e} {:>12.3}",
            c.dim, c.sigma2, c.n, c.successes, c.mean_rel_error, c.std_rel_error, c.mean_runtime_ms
        );
    }
    if let Some(dir) = &args.plots {
        for path in emit_plots(&summary, dir)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn bias_eval(args: BiasArgs) -> Result<()> {
    let elements = parse_set(&args.set)?;
    let bias = fourier_bias(&elements, args.dim)?;
    println!("bias={bias:.12e}");
    let set = ModulationSet::new(args.dim, elements)?;
    println!("gap={:.12e}", spectral_gap_from_bias(&set)?);
    if let Some(eps) = args.eps {
        println!("min_size_for_gap_above_eps={:.6}", min_size_lower_bound(args.dim, eps)?);
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Masks {
            command: MasksCommand::Gen(args),
        } => masks_gen(args),
        Command::Simulate(args) => simulate(args),
        Command::Recover(args) => recover_cmd(args),
        Command::Experiment(args) => experiment(args),
        Command::Bias {
            command: BiasCommand::Eval(args),
        } => bias_eval(args),
    }
}
