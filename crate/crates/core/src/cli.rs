//! Command-line front end. [`run`] is what the binary calls; it never exits
//! the process itself, so it can be driven from tests.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, MIN_MC_FRAMES};
use crate::decoy::{analytic_rate, secure_key_rate, sweep_loss, ObservedGains, RateBreakdown};
use crate::encoding::{compile_schedule, encode_symbol, parse_symbol_stream, voltage_for_phase};
use crate::error::{Error, Result};
use crate::linksim::{
    compare_with_analytic, simulate_frames_mc, Deviation, LinkParams, TallyCounts,
};
use crate::secprops::run_verification;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dmqkd",
    version,
    about = "Directly modulated decoy-state BB84 transmitter toolkit"
)]
pub struct Cli {
    /// Configuration file (key = value or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the Monte Carlo and verification seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub loss_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub loss_max: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub loss_step: Option<f64>,
    /// Monte Carlo frame count.
    #[arg(long, global = true)]
    pub frames: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a symbol stream into a waveform schedule.
    Encode {
        /// Whitespace-separated tokens such as `Z0s Y1s Z0d`.
        stream: PathBuf,
    },
    /// Key rate and QBER against channel loss.
    Sweep,
    /// Monte Carlo link simulation compared with the closed form.
    Mc,
    /// Leakage property suite.
    Verify,
    /// Write the default configuration.
    WriteDefaults,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ModelValidity(_) => EXIT_MODEL,
        _ => EXIT_USAGE,
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.mc.seed = s;
        cfg.verify.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    if let Some(v) = cli.loss_min {
        cfg.sweep.loss_min = v;
    }
    if let Some(v) = cli.loss_max {
        cfg.sweep.loss_max = v;
    }
    if let Some(v) = cli.loss_step {
        cfg.sweep.loss_step = v;
    }
    if let Some(n) = cli.frames {
        cfg.mc.n_frames = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents)?;
    Ok(p)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = resolve_config(cli)?;
    let dir = PathBuf::from(&cfg.output.dir);
    match &cli.command {
        Command::Encode { stream } => cmd_encode(&cfg, stream, &dir, out),
        Command::Sweep => cmd_sweep(&cfg, &dir, out),
        Command::Mc => cmd_mc(&cfg, &dir, out),
        Command::Verify => cmd_verify(&cfg, &dir, out),
        Command::WriteDefaults => {
            let d = RunConfig {
                output: cfg.output.clone(),
                ..RunConfig::default()
            };
            let a = write_file(&dir, "config.txt", &d.to_kv())?;
            let b = write_file(&dir, "config.json", &(d.to_json() + "\n"))?;
            writeln!(out, "wrote {} and {}", a.display(), b.display())?;
            Ok(EXIT_OK)
        }
    }
}

pub fn cmd_encode(cfg: &RunConfig, stream: &Path, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(stream)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", stream.display())))?;
    let symbols = parse_symbol_stream(&text)?;
    if symbols.is_empty() {
        return Err(Error::Config("symbol stream is empty".into()));
    }
    let table = cfg.decoy_table()?;
    let sched = compile_schedule(&symbols, &cfg.timing, &cfg.calibration, &table)?;
    write_file(dir, "schedule.txt", &sched.to_text())?;
    let json = serde_json::to_string_pretty(&sched).map_err(|e| Error::Io(e.to_string()))?;
    write_file(dir, "schedule.json", &(json + "\n"))?;

    writeln!(
        out,
        "{:>6} {:>6} {:>10} {:>10} {:>9} {:>9}",
        "index", "symbol", "phi12", "phi23", "v12", "v23"
    )?;
    for (i, sym) in symbols.iter().enumerate() {
        let pp = encode_symbol(sym, &table)?;
        writeln!(
            out,
            "{:>6} {:>6} {:>10.6} {:>10.6} {:>9.6} {:>9.6}",
            i,
            sym.to_string(),
            pp.phi12.radians(),
            pp.phi23.radians(),
            voltage_for_phase(pp.phi12, &cfg.calibration),
            voltage_for_phase(pp.phi23, &cfg.calibration),
        )?;
    }
    writeln!(
        out,
        "{} symbols, {} events",
        sched.symbol_count(),
        sched.events.len()
    )?;
    Ok(EXIT_OK)
}

/// Loss at which `r_bps` is quoted on the sweep summary line.
pub const REFERENCE_LOSS_DB: f64 = 15.0;

pub fn cmd_sweep(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let s = &cfg.sweep;
    let sweep = sweep_loss(
        s.loss_min,
        s.loss_max,
        s.loss_step,
        &cfg.link,
        &cfg.intensities,
    )?;
    let p = write_file(dir, "sweep.csv", &sweep.to_csv())?;
    let reference = analytic_rate(
        &LinkParams {
            loss_db: REFERENCE_LOSS_DB,
            ..cfg.link
        },
        &cfg.intensities,
    )?;
    writeln!(out, "wrote {} ({} rows)", p.display(), sweep.points.len())?;
    match sweep.cutoff_db() {
        Some(c) => writeln!(out, "cutoff_db = {c}")?,
        None => writeln!(out, "cutoff_db = none")?,
    }
    writeln!(
        out,
        "r_bps_at_{REFERENCE_LOSS_DB}dB = {:e}",
        reference.r_bps
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct McReport<'a> {
    seed: u64,
    n_frames: u64,
    loss_db: f64,
    tallies: &'a TallyCounts,
    deviations: &'a [Deviation],
    max_abs_z: f64,
    analytic_bounds: RateBreakdown,
    empirical_bounds: std::result::Result<RateBreakdown, String>,
}

pub fn cmd_mc(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    if cfg.mc.n_frames < MIN_MC_FRAMES {
        return Err(Error::Config(format!(
            "mc needs at least {MIN_MC_FRAMES} frames, got {}",
            cfg.mc.n_frames
        )));
    }
    let tally = simulate_frames_mc(
        cfg.mc.n_frames,
        &cfg.link,
        &cfg.intensities,
        &cfg.mix,
        cfg.mc.seed,
    )?;
    let deviations = compare_with_analytic(&tally, &cfg.link, &cfg.intensities)?;
    let max_abs_z = deviations.iter().map(|d| d.z.abs()).fold(0.0, f64::max);
    let analytic_bounds = analytic_rate(&cfg.link, &cfg.intensities)?;
    let empirical_bounds = ObservedGains::from_tally(&tally)
        .and_then(|g| secure_key_rate(&g, &cfg.link, &cfg.intensities))
        .map_err(|e| e.to_string());
    let report = McReport {
        seed: cfg.mc.seed,
        n_frames: cfg.mc.n_frames,
        loss_db: cfg.link.loss_db,
        tallies: &tally,
        deviations: &deviations,
        max_abs_z,
        analytic_bounds,
        empirical_bounds: empirical_bounds.clone(),
    };
    write_file(dir, "tallies.csv", &tally.to_csv())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    write_file(dir, "mc_report.json", &(json + "\n"))?;

    writeln!(
        out,
        "{:>7} {:>5} {:>5} {:>14} {:>14} {:>8}",
        "class", "basis", "metric", "empirical", "analytic", "z"
    )?;
    for d in &deviations {
        writeln!(
            out,
            "{:>7} {:>5} {:>5} {:>14.6e} {:>14.6e} {:>8.3}",
            d.class.as_str(),
            d.basis.to_string(),
            d.metric,
            d.empirical,
            d.analytic,
            d.z
        )?;
    }
    match &empirical_bounds {
        Ok(b) => writeln!(
            out,
            "r_bps empirical = {:e}, analytic = {:e}",
            b.r_bps, analytic_bounds.r_bps
        )?,
        Err(e) => writeln!(out, "empirical bounds unavailable: {e}")?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let report = run_verification(&cfg.verify)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?;
    write_file(dir, "verify.json", &(json + "\n"))?;
    for p in &report.properties {
        let tag = match (p.gating, p.passed) {
            (true, true) => "PASS",
            (true, false) => "FAIL",
            (false, _) => "info",
        };
        let pv = p.p_value.map(|v| format!(" p={v:.3e}")).unwrap_or_default();
        writeln!(
            out,
            "[{tag}] {} stat={:.6e}{pv} threshold={:e}",
            p.name, p.statistic, p.threshold
        )?;
    }
    if report.passed {
        writeln!(out, "all properties hold")?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "{} properties failed", report.failures().count())?;
        Ok(EXIT_PROPERTY)
    }
}
