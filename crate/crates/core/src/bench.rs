//! Monte Carlo experiment driver: random instances, noise sweeps, timing,
//! CSV reporting and mean ± std plots.
//!
//! Each `(M, trial)` cell draws its own seed `mix(master_seed, M, trial)` and
//! from it, through [`stream`], independent streams for the modulation set
//! (label 0), the vertex masks (1), the signal (2) and the noise (3). The
//! instance and the noise stream are shared by every noise level, so levels
//! differ only in the noise scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::{build_vertex_masks, mask_count, AlphaMode, MaskEnsemble};
use crate::measure::{add_noise, measure_all, MeasurementSet, NoiseModel, SignalInstance};
use crate::recover::{recover, relative_error, RecoveryParams};
use crate::rng::{mix, stream};
use crate::setgen::{draw_b, symmetrize, ModulationSet, SetGenConfig};

/// How the random half-set `B` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetDensityMode {
    /// `p = min(1, c ln M / M)` over all residues.
    PaperC,
    /// `p = ln M / M` over the nonzero residues.
    Section4,
}

impl FromStr for SetDensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-c" => Ok(SetDensityMode::PaperC),
            "section4" => Ok(SetDensityMode::Section4),
            other => Err(Error::invalid(format!("unknown set density mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SetDensityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SetDensityMode::PaperC => "paper-c",
            SetDensityMode::Section4 => "section4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalMode {
    /// Entries with independent `N(0, 1/2)` real and imaginary parts.
    Complex,
    /// Real `N(0, 1)` entries.
    Real,
}

impl FromStr for SignalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(SignalMode::Complex),
            "real" => Ok(SignalMode::Real),
            other => Err(Error::invalid(format!("unknown signal mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SignalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignalMode::Complex => "complex",
            SignalMode::Real => "real",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub noise_variances: Vec<f64>,
    pub trials: usize,
    /// Number of vertex masks `K`.
    pub count: usize,
    pub mask_mode: AlphaMode,
    pub set_density_mode: SetDensityMode,
    /// Density constant for [`SetDensityMode::PaperC`].
    pub c: f64,
    pub alpha: f64,
    pub tau: f64,
    pub master_seed: u64,
    pub signal_mode: SignalMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: vec![32, 64, 128, 256, 512],
            noise_variances: vec![0.0, 0.1, 1.0],
            trials: 30,
            count: 3,
            mask_mode: AlphaMode::Gaussian,
            set_density_mode: SetDensityMode::Section4,
            c: 144.0,
            alpha: 0.99,
            tau: 0.1,
            master_seed: 0,
            signal_mode: SignalMode::Complex,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment, lists are
    /// comma-separated, and omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dims" | "M" => cfg.dims = parse_list(key, value)?,
                "noise_variances" | "sigma2" => cfg.noise_variances = parse_list(key, value)?,
                "trials" => cfg.trials = parse_value(key, value)?,
                "K" | "count" => cfg.count = parse_value(key, value)?,
                "mask_mode" => cfg.mask_mode = value.parse()?,
                "set_density_mode" => cfg.set_density_mode = value.parse()?,
                "c" => cfg.c = parse_value(key, value)?,
                "alpha" => cfg.alpha = parse_value(key, value)?,
                "tau" => cfg.tau = parse_value(key, value)?,
                "master_seed" | "seed" => cfg.master_seed = parse_value(key, value)?,
                "signal_mode" | "signal" => cfg.signal_mode = value.parse()?,
                other => return Err(Error::invalid(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "dims = {}\nnoise_variances = {}\ntrials = {}\nK = {}\nmask_mode = {}\n\
             set_density_mode = {}\nc = {}\nalpha = {}\ntau = {}\nmaster_seed = {}\nsignal_mode = {}\n",
            join(self.dims.iter().map(|d| d.to_string()).collect()),
            join(self.noise_variances.iter().map(|s| s.to_string()).collect()),
            self.trials,
            self.count,
            self.mask_mode,
            self.set_density_mode,
            self.c,
            self.alpha,
            self.tau,
            self.master_seed,
            self.signal_mode,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::invalid("dims must be nonempty"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid("every M must be >= 1"));
        }
        if self.noise_variances.is_empty() {
            return Err(Error::invalid("noise_variances must be nonempty"));
        }
        if let Some(s) = self.noise_variances.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("noise variance {s} must be finite and >= 0")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.count == 0 {
            return Err(Error::invalid("K must be >= 1"));
        }
        if self.set_density_mode == SetDensityMode::PaperC && !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c = {} must be positive", self.c)));
        }
        self.params().validate()
    }

    pub fn params(&self) -> RecoveryParams {
        RecoveryParams {
            alpha: self.alpha,
            tau: self.tau,
            ..RecoveryParams::default()
        }
    }

    /// Seed of the `(M, trial)` instance.
    pub fn trial_seed(&self, dim: usize, trial: usize) -> u64 {
        mix(self.master_seed, dim as u64, trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(rename = "M")]
    pub dim: usize,
    pub sigma2: f64,
    #[serde(rename = "trial")]
    pub trial_index: usize,
    pub seed: u64,
    pub num_masks: usize,
    pub set_size: usize,
    pub runtime_ms: f64,
    pub rel_error: f64,
    pub surviving_vertices: usize,
    pub final_gap: f64,
    pub success: bool,
}

/// Masks, modulation set, signal and clean measurements of one `(M, trial)`.
pub struct TrialInstance {
    pub seed: u64,
    pub ensemble: MaskEnsemble,
    pub signal: SignalInstance,
    pub clean: MeasurementSet,
}

pub fn draw_modulation_set(config: &ExperimentConfig, dim: usize, seed: u64) -> Result<ModulationSet> {
    let gen = match config.set_density_mode {
        SetDensityMode::PaperC => SetGenConfig::with_bias_constant(dim, config.c, seed)?,
        SetDensityMode::Section4 => SetGenConfig::nonzero_log_density(dim, seed)?,
    };
    Ok(symmetrize(dim, &draw_b(&gen)))
}

pub fn build_instance(config: &ExperimentConfig, dim: usize, trial: usize) -> Result<TrialInstance> {
    let seed = config.trial_seed(dim, trial);
    let set = draw_modulation_set(config, dim, stream(seed, 0))?;
    let vertex = build_vertex_masks(dim, config.count, config.mask_mode, stream(seed, 1))?;
    let ensemble = MaskEnsemble::new(vertex, set)?;
    let signal = SignalInstance::gaussian(dim, config.signal_mode == SignalMode::Complex, stream(seed, 2));
    let clean = measure_all(&signal, &ensemble)?;
    Ok(TrialInstance {
        seed,
        ensemble,
        signal,
        clean,
    })
}

fn run_cell(config: &ExperimentConfig, dim: usize, trial: usize) -> Vec<TrialRecord> {
    let params = config.params();
    let seed = config.trial_seed(dim, trial);
    let instance = build_instance(config, dim, trial);
    config
        .noise_variances
        .iter()
        .map(|&sigma2| {
            let failed = |num_masks, set_size| TrialRecord {
                dim,
                sigma2,
                trial_index: trial,
                seed,
                num_masks,
                set_size,
                runtime_ms: 0.0,
                rel_error: 1.0,
                surviving_vertices: 0,
                final_gap: 0.0,
                success: false,
            };
            let inst = match &instance {
                Ok(inst) => inst,
                Err(_) => return failed(0, 0),
            };
            let set_size = inst.ensemble.modulation_set().len();
            let num_masks = mask_count(config.count, set_size);
            let noisy = match add_noise(&inst.clean, &NoiseModel { variance: sigma2, seed: stream(seed, 3) }) {
                Ok(m) => m,
                Err(_) => return failed(num_masks, set_size),
            };
            let start = Instant::now();
            let result = recover(&noisy, &inst.ensemble, &params);
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let rel_error = relative_error(&result.estimate, &inst.signal).unwrap_or(1.0);
            TrialRecord {
                dim,
                sigma2,
                trial_index: trial,
                seed,
                num_masks,
                set_size,
                runtime_ms,
                rel_error,
                surviving_vertices: result.surviving_vertices,
                final_gap: result.final_gap,
                success: result.success,
            }
        })
        .collect()
}

/// All `|dims| * |noise_variances| * trials` records, sorted by
/// `(M, sigma2, trial)`. Failed trials are recorded, not raised.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = config
        .dims
        .iter()
        .flat_map(|&d| (0..config.trials).map(move |t| (d, t)))
        .collect();
    let mut records: Vec<TrialRecord> = cells
        .par_iter()
        .flat_map_iter(|&(dim, trial)| run_cell(config, dim, trial))
        .collect();
    records.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then(a.sigma2.total_cmp(&b.sigma2))
            .then(a.trial_index.cmp(&b.trial_index))
    });
    Ok(records)
}

pub fn write_records<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record([
            "M",
            "sigma2",
            "trial",
            "seed",
            "num_masks",
            "set_size",
            "runtime_ms",
            "rel_error",
            "surviving_vertices",
            "final_gap",
            "success",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    #[serde(rename = "M")]
    pub dim: usize,
    pub sigma2: f64,
    pub n: usize,
    pub successes: usize,
    pub mean_rel_error: f64,
    pub std_rel_error: f64,
    pub mean_runtime_ms: f64,
    pub std_runtime_ms: f64,
    /// Set when `n = 1`, where the standard deviation is reported as 0.
    pub single_sample: bool,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-`(M, sigma2)` sample mean and `n - 1` standard deviation, in
/// ascending `(M, sigma2)` order.
pub fn summarize(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, u64), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        // Non-negative floats order like their bit patterns.
        groups.entry((r.dim, r.sigma2.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((dim, bits), rs)| {
            let errors: Vec<f64> = rs.iter().map(|r| r.rel_error).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.runtime_ms).collect();
            let (mean_rel_error, std_rel_error) = mean_std(&errors);
            let (mean_runtime_ms, std_runtime_ms) = mean_std(&times);
            CellSummary {
                dim,
                sigma2: f64::from_bits(bits),
                n: rs.len(),
                successes: rs.iter().filter(|r| r.success).count(),
                mean_rel_error,
                std_rel_error,
                mean_runtime_ms,
                std_runtime_ms,
                single_sample: rs.len() == 1,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[CellSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// SVG of mean relative error against `M` for one noise level. Both axes are
/// logarithmic (base 2 for `M`, base 10 for the error). Error bars span
/// mean ± std; a lower bar reaching zero or below is left out. Points with a
/// non-positive mean cannot be placed on the log axis and are skipped.
pub fn render_plot(cells: &[&CellSummary], sigma2: f64) -> String {
    let points: Vec<&CellSummary> = cells.iter().copied().filter(|c| c.mean_rel_error > 0.0).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">relative error, sigma^2 = {sigma2}</text>"#,
        WIDTH / 2.0
    );

    let xs: Vec<f64> = cells.iter().map(|c| (c.dim as f64).log2()).collect();
    let (mut x_lo, mut x_hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if x_hi - x_lo < 1.0 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let mut ys = Vec::new();
    for c in &points {
        ys.push(c.mean_rel_error.log10());
        ys.push((c.mean_rel_error + c.std_rel_error).log10());
        if c.mean_rel_error - c.std_rel_error > 0.0 {
            ys.push((c.mean_rel_error - c.std_rel_error).log10());
        }
    }
    let (y_lo, y_hi) = if ys.is_empty() {
        (-1.0, 0.0)
    } else {
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min).floor();
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi > lo { (lo, hi) } else { (lo, lo + 1.0) }
    };
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - TOP - BOTTOM);

    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = HEIGHT - BOTTOM,
        r = WIDTH - RIGHT
    );
    for (c, &x) in cells.iter().zip(&xs) {
        let _ = writeln!(
            svg,
            r#"<text class="xtick" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            px(x),
            HEIGHT - BOTTOM + 18.0,
            c.dim
        );
    }
    let mut e = y_lo as i64;
    while e <= y_hi as i64 {
        let y = py(e as f64);
        let _ = writeln!(
            svg,
            r#"<line class="grid" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="lightgray"/><text class="ytick" x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">1e{e}</text>"#,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
        e += 1;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">M</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );

    let mut path = String::new();
    for c in &points {
        let x = px((c.dim as f64).log2());
        let y = py(c.mean_rel_error.log10());
        let _ = write!(path, "{}{x:.2},{y:.2}", if path.is_empty() { "M" } else { " L" });
        let upper = py((c.mean_rel_error + c.std_rel_error).log10());
        let _ = writeln!(
            svg,
            r#"<line class="bar-upper" x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{upper:.2}" stroke="steelblue"/>"#
        );
        let lower = c.mean_rel_error - c.std_rel_error;
        if lower > 0.0 {
            let lower = py(lower.log10());
            let _ = writeln!(
                svg,
                r#"<line class="bar-lower" x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{lower:.2}" stroke="steelblue"/>"#
            );
        }
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="4" fill="steelblue"><title>M={} mean={:e} std={:e} n={}</title></circle>"#,
            c.dim, c.mean_rel_error, c.std_rel_error, c.n
        );
    }
    if !path.is_empty() {
        let _ = writeln!(svg, r#"<path class="trend" d="{path}" stroke="steelblue" fill="none"/>"#);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes one `rel_error_sigma2_<sigma2>.svg` per noise level into `dir`
/// (created if missing) and returns the paths.
pub fn emit_plots(summary: &[CellSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    if summary.is_empty() {
        return Err(Error::invalid("no summary cells to plot"));
    }
    let mut levels: BTreeMap<u64, Vec<&CellSummary>> = BTreeMap::new();
    for c in summary {
        levels.entry(c.sigma2.to_bits()).or_default().push(c);
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (bits, mut cells) in levels {
        cells.sort_by_key(|c| c.dim);
        let sigma2 = f64::from_bits(bits);
        let path = dir.join(format!("rel_error_sigma2_{sigma2}.svg"));
        std::fs::write(&path, render_plot(&cells, sigma2))?;
        paths.push(path);
    }
    Ok(paths)
}
