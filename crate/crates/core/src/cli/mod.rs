//! Command-line front end.
//!
//! Every command reads an experiment config (see [`config`]), prints a report
//! to stdout in the selected format and, when an output directory is given,
//! writes the report together with data files and gnuplot scripts. Files are
//! written to a temporary name and renamed into place.

pub mod config;
pub mod pressure;
pub mod units;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde_json::{json, Value};

use crate::coil_coupling::{self, DipoleSource, GeometryBounds};
use crate::error::{Error, Result};
use crate::langevin::{
    self, FeedbackConfig, ModeSpec, NoiseConfig, RunConfig, TimeSeries, ENVELOPE, MEASURED_POSITION, TRUE_POSITION,
};
use crate::limits::{self, NoiseBudget, TableFixture};
use crate::spectral::{self, AnalysisOptions, CalibrationReference, FitReport};
use crate::trap_model::dipole_moment;

pub use config::{Document, ExperimentConfig, OutputFormat};
pub use pressure::{correct_pressure, CorrectedPressure, PressureReading};
use units::{parse_quantity, Dimension};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;
pub const EXIT_INPUT: i32 = 5;

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "LEVCOOL_WORKERS";

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  usage error or unknown command
  2  invalid config or parameter
  3  fit or convergence failure
  4  table-check deviation beyond tolerance
  5  missing or unreadable input file

Environment:
  LEVCOOL_WORKERS  worker threads for ensembles and coil scans
  RUST_LOG         log filter (default: warn)";

#[derive(Debug, Parser)]
#[command(name = "levcool", version, about = "Feedback cooling simulator and analysis toolkit for levitated micromagnets", after_help = EXIT_HELP)]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports, data files and plot scripts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["json", "text", "csv"])]
    format: Option<String>,
    /// Relative tolerance for table-check.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Override a config value, e.g. `--set noise.seed=3` or `--set mode:z.quality_factor=1e4`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Input data file (analyze, ringdown) or table fixture (table-check).
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the configured mode; a gain list runs a sweep.
    Simulate,
    /// Welch PSD, Lorentzian fit and temperature of a recorded series.
    Analyze,
    /// Fit a ring-down, from a file or from a simulated noiseless decay over five decay times.
    Ringdown,
    /// Detection-noise-limited temperature and phonon number.
    Limits,
    /// Scan and refine the pick-up coil position.
    CoilOptimize,
    /// Compare derived quantities with the reference parameter table.
    TableCheck,
    /// Gas and thermal-transpiration correction of a gauge reading.
    PressureCorrect {
        /// Gauge reading, e.g. "1e-8 mbar".
        #[arg(long)]
        gauge: Option<String>,
        /// Gauge-side temperature (default 295 K).
        #[arg(long)]
        warm: Option<String>,
        /// Cold-side temperature, e.g. "410 mK".
        #[arg(long)]
        cold: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Ringdown => "ringdown",
            Command::Limits => "limits",
            Command::CoilOptimize => "coil-optimize",
            Command::TableCheck => "table-check",
            Command::PressureCorrect { .. } => "pressure-correct",
        }
    }
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) | Error::Domain(_) | Error::Config { .. } => EXIT_CONFIG,
        Error::Fit(_) | Error::NonConvergence { .. } | Error::InsufficientData(_) => EXIT_FIT,
        Error::MissingInput { .. } | Error::Io(_) | Error::Format(_) | Error::Json(_) => EXIT_INPUT,
    }
}

/// Parse arguments, run the command and return the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::invalid(format!("{WORKERS_ENV} must be a positive integer, got '{value}'")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        warn!("worker pool already initialised; ignoring {WORKERS_ENV}");
    }
    Ok(())
}

/// A command result: scalar fields, an optional table, and files to write.
struct Report {
    command: &'static str,
    fields: Vec<(String, Value)>,
    table: Option<Table>,
    /// Preformatted text replacing the default text rendering.
    text: Option<String>,
    artifacts: Vec<(String, Vec<u8>)>,
    status: i32,
}

struct Table {
    name: &'static str,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Report {
    fn new(command: &'static str) -> Self {
        Report { command, fields: Vec::new(), table: None, text: None, artifacts: Vec::new(), status: EXIT_OK }
    }

    fn field(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.fields.push((key.to_string(), value.into()));
        self
    }

    fn artifact(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push((name.to_string(), bytes));
    }

    fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Json => {
                let mut obj = serde_json::Map::new();
                obj.insert("command".into(), json!(self.command));
                for (k, v) in &self.fields {
                    obj.insert(k.clone(), v.clone());
                }
                if let Some(t) = &self.table {
                    let rows: Vec<Value> = t
                        .rows
                        .iter()
                        .map(|r| {
                            Value::Object(t.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect())
                        })
                        .collect();
                    obj.insert(t.name.into(), Value::Array(rows));
                }
                Ok(serde_json::to_string_pretty(&Value::Object(obj))? + "\n")
            }
            OutputFormat::Text => {
                if let Some(text) = &self.text {
                    return Ok(text.clone());
                }
                let mut out = String::new();
                let width = self.fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, v) in &self.fields {
                    let _ = writeln!(out, "{k:<width$}  {}", plain(v));
                }
                if let Some(t) = &self.table {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    let cells: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(plain).collect()).collect();
                    let widths: Vec<usize> = (0..t.columns.len())
                        .map(|i| cells.iter().map(|r| r[i].len()).chain([t.columns[i].len()]).max().unwrap_or(0))
                        .collect();
                    let line = |items: Vec<&str>| {
                        items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ")
                    };
                    let _ = writeln!(out, "{}", line(t.columns.clone()));
                    for r in &cells {
                        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
                    }
                }
                Ok(out)
            }
            OutputFormat::Csv => {
                let mut out = String::new();
                match &self.table {
                    Some(t) => {
                        let _ = writeln!(out, "{}", t.columns.join(","));
                        for r in &t.rows {
                            let _ = writeln!(out, "{}", r.iter().map(plain).collect::<Vec<_>>().join(","));
                        }
                    }
                    None => {
                        out.push_str("key,value\n");
                        for (k, v) in &self.fields {
                            let _ = writeln!(out, "{k},{}", plain(v));
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn opt(v: Option<f64>) -> Value {
    v.map(num).unwrap_or(Value::Null)
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &cli.overrides)?,
        None => {
            let mut doc = Document::default();
            doc.apply_overrides(&cli.overrides)?;
            ExperimentConfig::from_document(&doc)?
        }
    };
    let format = match &cli.format {
        Some(f) => f.parse()?,
        None => cfg.outputs.format.unwrap_or_default(),
    };
    let out_dir = cli.out.clone().or_else(|| cfg.outputs.directory.clone());
    let plots = cfg.outputs.plots.unwrap_or(true);
    info!("running {} (format {})", cli.command.name(), format.as_str());

    let mut report = match &cli.command {
        Command::Simulate => simulate(cli, &cfg)?,
        Command::Analyze => analyze(cli, &cfg)?,
        Command::Ringdown => ringdown(cli, &cfg)?,
        Command::Limits => limits_cmd(&cfg)?,
        Command::CoilOptimize => coil_optimize(&cfg)?,
        Command::TableCheck => table_check(cli)?,
        Command::PressureCorrect { gauge, warm, cold } => pressure_correct(&cfg, gauge, warm, cold)?,
    };
    if !plots {
        report.artifacts.retain(|(name, _)| !name.ends_with(".gp"));
    }

    let rendered = report.render(format)?;
    if let Some(dir) = &out_dir {
        for (name, bytes) in &report.artifacts {
            write_atomic(&dir.join(name), bytes)?;
        }
        let ext = match format {
            OutputFormat::Json => "json",
            OutputFormat::Text => "txt",
            OutputFormat::Csv => "csv",
        };
        write_atomic(&dir.join(format!("{}_report.{ext}", report.command.replace('-', "_"))), rendered.as_bytes())?;
    }
    stdout.write_all(rendered.as_bytes())?;
    stdout.flush()?;
    Ok(report.status)
}

fn noise_for(cli: &Cli, cfg: &ExperimentConfig) -> NoiseConfig {
    let mut noise = cfg.noise.unwrap_or_default();
    if let Some(seed) = cli.seed {
        noise.seed = seed;
    }
    noise
}

fn run_config(cfg: &ExperimentConfig, mode: &ModeSpec, default_duration: f64) -> RunConfig {
    let s = &cfg.simulation;
    let mut run = RunConfig::for_mode(mode, s.duration.unwrap_or(default_duration));
    if let Some(dt) = s.timestep {
        run = run.with_timestep(dt);
    }
    if let Some(k) = s.record_stride {
        run = run.with_stride(k);
    }
    if let Some(b) = s.burn_in {
        run = run.with_burn_in(b);
    }
    run
}

/// 200 relaxation times of the total damping, at least 100 periods.
fn default_duration(mode: &ModeSpec, fb: &FeedbackConfig) -> f64 {
    let gamma = fb.predicted_total_damping(mode).max(mode.gamma0());
    (200.0 / gamma).max(100.0 * mode.period())
}

fn mode_fields(report: &mut Report, mode: &ModeSpec) {
    report
        .field("mode", mode.label.to_string())
        .field("frequency_hz", num(mode.frequency_hz()))
        .field("quality_factor", num(mode.quality_factor))
        .field("bath_temperature_k", num(mode.bath_temperature));
}

fn simulate(cli: &Cli, cfg: &ExperimentConfig) -> Result<Report> {
    let mut mode = *cfg.mode()?;
    let mut noise = noise_for(cli, cfg);
    let fb = cfg.feedback.unwrap_or_default();
    let mut report = Report::new("simulate");
    if let Some(max_steps) = cfg.simulation.max_steps {
        let plan = langevin::plan_reduced_q(&mode, &noise, 200.0, max_steps)?;
        if plan.q_scale > 1.0 {
            info!("quality factor reduced by {:.3e} to fit {max_steps} steps", plan.q_scale);
        }
        mode = plan.mode;
        noise = plan.noise;
        report.field("q_scale", num(plan.q_scale));
    }
    mode_fields(&mut report, &mode);
    report.field("seed", noise.seed).field("feedback", fb.mode.to_string());
    let run = run_config(cfg, &mode, default_duration(&mode, &fb));
    report.field("timestep_s", num(run.timestep)).field("duration_s", num(run.duration)).field("steps", run.steps());

    if let Some(gains) = &cfg.simulation.gains {
        let sweep = langevin::gain_sweep(&mode, &noise, &fb, gains, &run)?;
        let floor = if noise.detector_noise_psd > 0.0 {
            let budget = NoiseBudget::new(langevin::thermal_force_psd(&mode), noise.detector_noise_psd);
            Some(limits::min_temperature(&mode, &budget)?.t_min)
        } else {
            None
        };
        report
            .field("best_gain", opt(sweep.best_point().map(|p| p.gain)))
            .field("best_temperature_k", opt(sweep.best_point().map(|p| p.temperature)))
            .field("detection_limited_temperature_k", opt(floor));
        let rows: Vec<Vec<Value>> = sweep
            .points
            .iter()
            .map(|p| {
                let predicted = langevin::predicted_feedback_temperature(
                    mode.bath_temperature,
                    mode.gamma0(),
                    fb.with_gain(p.gain).gamma_fb(&mode),
                )
                .ok();
                vec![num(p.gain), num(p.temperature), num(p.temperature_error), opt(predicted), json!(p.unstable)]
            })
            .collect();
        let table = Table {
            name: "points",
            columns: vec!["gain", "temperature_k", "temperature_error_k", "cold_damping_k", "unstable"],
            rows,
        };
        let mut csv = String::from("gain,temperature_k,temperature_error_k,cold_damping_k,unstable\n");
        for r in &table.rows {
            let _ = writeln!(csv, "{}", r.iter().map(plain).collect::<Vec<_>>().join(","));
        }
        report.artifact("gain_sweep.csv", csv.into_bytes());
        report.artifact("gain_sweep.gp", gain_sweep_script().into_bytes());
        report.table = Some(table);
        return Ok(report);
    }

    if let Some(n) = cfg.simulation.ensemble.filter(|n| *n > 1) {
        let st = langevin::ensemble_steady_state(&mode, &noise, &fb, &run, n)?;
        report
            .field("runs", n)
            .field("unstable", st.unstable)
            .field("mean_square", num(st.mean_square))
            .field("mean_square_error", num(st.mean_square_error))
            .field("temperature_k", num(st.temperature))
            .field("temperature_error_k", num(st.temperature_error))
            .field("predicted_temperature_k", opt(predicted_temperature(&mode, &fb)));
        return Ok(report);
    }

    let sim = langevin::simulate(&mode, &noise, &fb, &run)?;
    let burn_in = run.burn_in.unwrap_or_else(|| {
        let g = sim.predicted_total_damping;
        if g > 0.0 {
            (10.0 / g).min(0.5 * run.duration)
        } else {
            0.0
        }
    });
    let x = sim.series.channel(TRUE_POSITION).unwrap_or(&[]);
    let skip = ((burn_in * sim.series.sample_rate()).round() as usize).min(x.len());
    let tail = &x[skip..];
    let mean_square =
        if tail.is_empty() { f64::NAN } else { tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64 };
    report
        .field("samples", sim.series.len())
        .field("sample_rate_hz", num(sim.series.sample_rate()))
        .field("unstable", sim.unstable)
        .field("diverged_at_s", opt(sim.diverged_at))
        .field("predicted_total_damping_s", num(sim.predicted_total_damping))
        .field("mean_square", num(mean_square))
        .field("temperature_k", num(mode.temperature_from_variance(mean_square)))
        .field("predicted_temperature_k", opt(predicted_temperature(&mode, &fb)));
    if sim.unstable {
        warn!("run is unstable: predicted total damping {:.3e} /s", sim.predicted_total_damping);
    }
    let mut csv = Vec::new();
    sim.series.write_csv(&mut csv)?;
    report.artifact("series.csv", csv);
    report.artifact("series.gp", series_script(&sim.series).into_bytes());
    Ok(report)
}

fn predicted_temperature(mode: &ModeSpec, fb: &FeedbackConfig) -> Option<f64> {
    langevin::predicted_feedback_temperature(mode.bath_temperature, mode.gamma0(), fb.gamma_fb(mode)).ok()
}

fn read_series(path: &Path) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|source| Error::MissingInput { path: path.to_path_buf(), source })?;
    let is_binary = path.extension().is_some_and(|e| e == "bin");
    if is_binary {
        TimeSeries::read_binary(BufReader::new(file))
    } else {
        TimeSeries::read_csv(file)
    }
}

fn input_path(cli: &Cli, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli.input.clone().or_else(|| cfg.analysis.input.clone())
}

fn pick_channel(series: &TimeSeries, wanted: Option<&str>, preferred: &str) -> Result<String> {
    if let Some(w) = wanted {
        return series
            .channel(w)
            .map(|_| w.to_string())
            .ok_or_else(|| Error::invalid(format!("series has no channel '{w}'")));
    }
    if series.channel(preferred).is_some() {
        return Ok(preferred.to_string());
    }
    series
        .channels()
        .first()
        .map(|c| c.name.clone())
        .ok_or_else(|| Error::InsufficientData("series has no channels".into()))
}

fn analyze(cli: &Cli, cfg: &ExperimentConfig) -> Result<Report> {
    let path = input_path(cli, cfg).ok_or_else(|| Error::config(None, "analyze needs --input or analysis.input"))?;
    let mode = cfg.mode()?;
    let series = read_series(&path)?;
    let channel = pick_channel(&series, cfg.analysis.channel.as_deref(), MEASURED_POSITION)?;
    let mut options = AnalysisOptions { segment_length: cfg.analysis.segment_length, ..Default::default() };
    if let Some(o) = cfg.analysis.overlap {
        options.overlap_fraction = o;
    }
    if let Some(l) = cfg.analysis.rms_linewidths {
        options.rms_linewidths = l;
    }
    let result = spectral::analyze(&series, &channel, mode.inertia, &options)?;
    let fit = &result.fit;
    let report_fit = result.report();
    let mut report = Report::new("analyze");
    report
        .field("input", path.display().to_string())
        .field("channel", channel.clone())
        .field("configured_bath_temperature_k", num(mode.bath_temperature))
        .field("resolution_bandwidth_hz", num(result.psd.resolution_bandwidth))
        .field("averages", result.psd.averages);
    fit_fields(&mut report, &report_fit);
    report.field("frequency_hz", num(fit.frequency_hz())).field("fit_temperature_k", num(result.fit_temperature));

    if let (Some(t_ref), Some(v_ref)) = (cfg.analysis.reference_temperature, cfg.analysis.reference_rms) {
        let reference = CalibrationReference::new(t_ref, v_ref)?;
        let half_width = options.rms_linewidths * fit.gamma_total / (2.0 * std::f64::consts::PI);
        let rms = spectral::band_rms(&result.psd, fit.frequency_hz(), half_width)?;
        report
            .field("band_rms", num(rms))
            .field("calibrated_temperature_k", num(spectral::mode_temperature(rms, &reference)?));
    }

    let mut psd_csv = Vec::new();
    result.psd.write_csv(&mut psd_csv)?;
    report.artifact("psd.csv", psd_csv);
    report.artifact("psd.gp", psd_script(fit).into_bytes());
    Ok(report)
}

fn fit_fields(report: &mut Report, fit: &FitReport) {
    report
        .field("omega0_rad_s", opt(fit.omega0_rad_s))
        .field("gamma_total_s", opt(fit.gamma_total_s))
        .field("q_factor", opt(fit.q_factor))
        .field("q_error", opt(fit.q_error))
        .field("temperature_k", opt(fit.temperature_k));
}

fn ringdown(cli: &Cli, cfg: &ExperimentConfig) -> Result<Report> {
    let mode = *cfg.mode()?;
    let periods = cfg.analysis.ringdown_periods.unwrap_or(10);
    let mut report = Report::new("ringdown");
    let (envelope, source) = match input_path(cli, cfg) {
        Some(path) => {
            let series = read_series(&path)?;
            let env = if series.channel(ENVELOPE).is_some() {
                series
            } else {
                let channel = pick_channel(&series, cfg.analysis.channel.as_deref(), TRUE_POSITION)?;
                spectral::demodulate_envelope(&series, &channel, mode.omega0, periods)?
            };
            (env, path.display().to_string())
        }
        None => {
            let x0 = cfg.simulation.initial_displacement.unwrap_or(1e-6);
            let tau = 2.0 * mode.quality_factor / mode.omega0;
            let mut run = run_config(cfg, &mode, 0.0);
            run.duration = (5.0 * tau).max(100.0 * mode.period());
            if cfg.simulation.record_stride.is_none() {
                run = run.with_stride(10);
            }
            run = run.with_initial(x0, 0.0);
            let sim = langevin::simulate(&mode, &NoiseConfig::silent(), &FeedbackConfig::off(), &run)?;
            report.field("initial_displacement", num(x0)).field("duration_s", num(run.duration));
            let env = spectral::demodulate_envelope(&sim.series, TRUE_POSITION, mode.omega0, periods)?;
            (env, "simulated".to_string())
        }
    };
    let fit = spectral::fit_ringdown(&envelope, mode.omega0)?;
    report
        .field("source", source)
        .field("configured_q", num(mode.quality_factor))
        .field("tau_s", num(fit.tau))
        .field("amplitude0", num(fit.amplitude0));
    fit_fields(&mut report, &FitReport::from_ringdown(&fit));
    let mut csv = Vec::new();
    envelope.write_csv(&mut csv)?;
    report.artifact("envelope.csv", csv);
    report.artifact("envelope.gp", envelope_script(fit.amplitude0, fit.tau).into_bytes());
    Ok(report)
}

fn dipole_source(cfg: &ExperimentConfig, explicit: Option<f64>) -> Result<DipoleSource> {
    let moment = match (explicit, &cfg.magnet) {
        (Some(m), _) => m,
        (None, Some(magnet)) => dipole_moment(magnet)?,
        (None, None) => return Err(Error::config(None, "coil needs a [magnet] section or coil.moment")),
    };
    DipoleSource::along_x(moment)
}

fn limits_cmd(cfg: &ExperimentConfig) -> Result<Report> {
    let mode = cfg.mode()?;
    let noise = cfg.noise.unwrap_or_default();
    let mut report = Report::new("limits");
    mode_fields(&mut report, mode);
    let budget = if noise.detector_noise_psd > 0.0 {
        NoiseBudget::new(langevin::thermal_force_psd(mode), noise.detector_noise_psd)
    } else {
        let coil = cfg
            .coil
            .as_ref()
            .ok_or_else(|| Error::config(None, "limits needs noise.detector_noise_psd or a [coil] with SQUID noise"))?;
        let squid = coil.squid_flux_noise.ok_or_else(|| Error::config(None, "coil.squid_flux_noise is required"))?;
        let ratio =
            coil.flux_transfer_ratio.ok_or_else(|| Error::config(None, "coil.flux_transfer_ratio is required"))?;
        let source = dipole_source(cfg, coil.moment)?;
        let coupling = coil_coupling::coupling_dz(&coil.geometry, &source)?;
        NoiseBudget::from_squid(mode, squid * squid, coupling, ratio)?
    };
    let lim = limits::min_temperature(mode, &budget)?;
    report
        .field("force_noise_asd", num(budget.force_psd.sqrt()))
        .field("detector_noise_asd", num(budget.detector_psd.sqrt()))
        .field("flux_coupling", opt(budget.flux_coupling))
        .field("t_min_k", num(lim.t_min))
        .field("n_min", num(lim.n_min))
        .field("min_amplitude", num(lim.min_amplitude))
        .field("caveat", lim.caveat);
    Ok(report)
}

fn coil_optimize(cfg: &ExperimentConfig) -> Result<Report> {
    let coil = cfg.coil.as_ref().ok_or_else(|| Error::config(None, "coil-optimize needs a [coil] section"))?;
    let source = dipole_source(cfg, coil.moment)?;
    let g = &coil.geometry;
    let bounds = coil.search.clone().unwrap_or_else(|| GeometryBounds {
        lateral_offset: (0.0, 2.0 * g.lateral_offset.max(g.loop_radius)),
        separation: (0.5 * g.separation, 2.0 * g.separation),
        orientations: coil_coupling::Orientation::BOTH.to_vec(),
    });
    let best = coil_coupling::optimize_geometry(&source, g.turns, g.loop_radius, &bounds, coil.grid)?;
    let map = coil_coupling::coupling_map(&source, g.turns, g.loop_radius, &bounds, coil.grid)?;
    let current = coil_coupling::coupling_dz(g, &source)?;
    let mut report = Report::new("coil-optimize");
    report
        .field("moment_a_m2", num(source.moment))
        .field("configured_coupling_wb_per_m", num(current.abs()))
        .field("best_orientation", best.geometry.orientation.to_string())
        .field("best_lateral_offset_m", num(best.geometry.lateral_offset))
        .field("best_separation_m", num(best.geometry.separation))
        .field("best_coupling_wb_per_m", num(best.coupling))
        .field("best_grid_coupling_wb_per_m", num(best.best_grid_coupling));
    if let Some(r) = cfg.magnet.as_ref().map(|m| m.radius) {
        report.field("near_field", best.geometry.is_near_field(r));
    }
    let mut csv = Vec::new();
    coil_coupling::write_coupling_csv(&map, &mut csv)?;
    report.artifact("coupling_map.csv", csv);
    report.artifact("coupling_map.gp", coupling_script().into_bytes());
    Ok(report)
}

fn table_check(cli: &Cli) -> Result<Report> {
    let fixture = match &cli.input {
        Some(path) => TableFixture::load(path)?,
        None => TableFixture::builtin()?,
    };
    let tolerance = cli.tolerance.unwrap_or(0.05);
    if !(tolerance > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tolerance}")));
    }
    let table = limits::table_report(&fixture, tolerance)?;
    let mut report = Report::new("table-check");
    let failures = table.failures().len();
    report
        .field("tolerance", num(tolerance))
        .field("derivable_rows", table.derivable().count())
        .field("failures", failures)
        .field("all_within_tolerance", table.all_within_tolerance());
    report.table = Some(Table {
        name: "rows",
        columns: vec!["key", "symbol", "unit", "reference", "computed", "deviation", "within_tolerance", "missing"],
        rows: table
            .rows
            .iter()
            .map(|r| {
                vec![
                    json!(r.key),
                    json!(r.symbol),
                    json!(r.unit),
                    num(r.reference),
                    opt(r.computed),
                    opt(r.deviation),
                    r.within_tolerance.map(Value::Bool).unwrap_or(Value::Null),
                    json!(r.missing.join("; ")),
                ]
            })
            .collect(),
    });
    report.text = Some(table.to_text());
    if failures > 0 {
        report.status = EXIT_TOLERANCE;
    }
    Ok(report)
}

fn pressure_correct(
    cfg: &ExperimentConfig,
    gauge: &Option<String>,
    warm: &Option<String>,
    cold: &Option<String>,
) -> Result<Report> {
    let arg = |v: &Option<String>, dim| v.as_deref().map(|s| parse_quantity(s, dim)).transpose();
    let base = cfg.pressure;
    let gauge_value = arg(gauge, Dimension::Pressure)?
        .or(base.map(|p| p.gauge_value))
        .ok_or_else(|| Error::config(None, "pressure-correct needs --gauge or pressure.gauge_value"))?;
    let warm_given = arg(warm, Dimension::Temperature)?.or(base.map(|p| p.warm_temperature));
    let warm_temperature = warm_given.unwrap_or(295.0);
    let cold_temperature = arg(cold, Dimension::Temperature)?
        .or(base.map(|p| p.cold_temperature))
        .ok_or_else(|| Error::config(None, "pressure-correct needs --cold or pressure.cold_temperature"))?;
    let reading = PressureReading::new(gauge_value, warm_temperature, cold_temperature)?;
    let c = correct_pressure(&reading)?;
    let mut report = Report::new("pressure-correct");
    report
        .field("gauge_mbar", num(reading.gauge_value))
        .field("warm_temperature_k", num(reading.warm_temperature))
        .field("warm_temperature_assumed", warm_given.is_none())
        .field("cold_temperature_k", num(reading.cold_temperature))
        .field("gas_factor", num(c.gas_factor))
        .field("gas_corrected_mbar", num(c.gas_corrected))
        .field("cold_side_mbar", num(c.cold_side))
        .field("total_factor", num(c.total_factor));
    Ok(report)
}

fn series_script(series: &TimeSeries) -> String {
    let columns: Vec<String> = series
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.name != crate::langevin::FEEDBACK_FORCE)
        .map(|(i, c)| format!("'series.csv' using 1:{} with lines title '{}'", i + 2, c.name))
        .collect();
    format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
         set xlabel 'time (s)'\nset ylabel 'displacement ({})'\nplot {}\n",
        series.unit(),
        columns.join(", \\\n     ")
    )
}

fn psd_script(fit: &spectral::LorentzianFit) -> String {
    format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
         set logscale y\nset xlabel 'frequency (Hz)'\nset ylabel 'PSD'\n\
         w0 = {:?}\ng = {:?}\nd = {:?}\n\
         fit_psd(f) = d / ((w0**2 - (2*pi*f)**2)**2 + g**2 * (2*pi*f)**2)\n\
         set xrange [{:?}:{:?}]\n\
         plot 'psd.csv' using 1:2 with lines title 'Welch', fit_psd(x) with lines title 'Lorentzian fit'\n",
        fit.omega0,
        fit.gamma_total,
        fit.drive_strength,
        (fit.frequency_hz() - 20.0 * fit.gamma_total / (2.0 * std::f64::consts::PI)).max(0.0),
        fit.frequency_hz() + 20.0 * fit.gamma_total / (2.0 * std::f64::consts::PI),
    )
}

fn envelope_script(a0: f64, tau: f64) -> String {
    format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
         set logscale y\nset xlabel 'time (s)'\nset ylabel 'amplitude'\n\
         plot 'envelope.csv' using 1:2 with points title 'envelope', {a0:?}*exp(-x/{tau:?}) with lines title 'fit'\n"
    )
}

fn gain_sweep_script() -> String {
    "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\n\
     set xlabel 'gain (feedback / intrinsic damping)'\nset ylabel 'mode temperature (K)'\n\
     plot 'gain_sweep.csv' using 1:2:3 with yerrorbars title 'simulated', \
     '' using 1:4 with lines title 'cold damping'\n"
        .to_string()
}

fn coupling_script() -> String {
    "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'x (m)'\nset ylabel 'z (m)'\n\
     set view map\nset logscale cb\n\
     splot 'coupling_map.csv' using 1:2:(strcol(3) eq 'perpendicular' ? abs($4) : 1/0) with points palette pointtype 5 title 'perpendicular'\n\
     pause -1\n\
     splot 'coupling_map.csv' using 1:2:(strcol(3) eq 'parallel' ? abs($4) : 1/0) with points palette pointtype 5 title 'parallel'\n"
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_categories_have_distinct_codes() {
        let io = || std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(exit_code(&Error::config(Some(1), "x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::invalid("x")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Fit("x".into())), EXIT_FIT);
        assert_eq!(exit_code(&Error::NonConvergence { iterations: 1, residual: 0.0 }), EXIT_FIT);
        assert_eq!(exit_code(&Error::MissingInput { path: "a".into(), source: io() }), EXIT_INPUT);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run(["levcool", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["levcool"]), EXIT_USAGE);
    }

    #[test]
    fn render_formats() {
        let mut r = Report::new("x");
        r.field("a", num(1.5)).field("b", "s");
        assert!(r.render(OutputFormat::Text).unwrap().contains("a  1.5"));
        let v: Value = serde_json::from_str(&r.render(OutputFormat::Json).unwrap()).unwrap();
        assert_eq!(v["a"], json!(1.5));
        assert_eq!(r.render(OutputFormat::Csv).unwrap(), "key,value\na,1.5\nb,s\n");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
