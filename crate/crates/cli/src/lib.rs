//! Command-line front end for `swsense`.
//!
//! Every command reads one configuration (bundled defaults, `--config`, or
//! `SWSENSE_CONFIG`), writes its artifacts under `--out`, and reports what it
//! wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use swsense::controller::{AgcWindow, ControllerConfig};
use swsense::coupling::{tap_sparams, ResistiveTapParams};
use swsense::estimator::{
    build_calibration, estimate, place_nodes, resolution, settled_readout, CalibrationTable, GridSpec,
};
use swsense::filters::NotchModel;
use swsense::sim::{prepare, write_controller_csv, write_snapshots_csv, write_trace_csv, Scenario};
use swsense::{ChainConfig, Frequency, PowerLevel, SignalDescriptor, TapCodes, Tone};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.json");

/// Scenarios shipped with the binary, by name.
pub const BUNDLED_SCENARIOS: [(&str, &str); 5] = [
    ("pulse_response", include_str!("../scenarios/pulse_response.json")),
    ("limiter", include_str!("../scenarios/limiter.json")),
    ("cascade", include_str!("../scenarios/cascade.json")),
    ("instability_tap", include_str!("../scenarios/instability_tap.json")),
    ("instability_coupler", include_str!("../scenarios/instability_coupler.json")),
];

pub const SPARAMS_HEADER: [&str; 3] = ["freq_hz", "s11_db", "s21_db"];
pub const RESOLUTION_HEADER: [&str; 5] = ["bits", "freq_hz", "tap", "delta_f_ghz", "delta_f_pct"];
pub const RUNS_HEADER: [&str; 4] = ["seed", "response_time_engage_s", "response_time_release_s", "limit_cycle"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] swsense::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Frequency sweep for the S-parameter command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub f_start_hz: f64,
    pub f_stop_hz: f64,
    pub f_step_hz: f64,
    /// Extra coupling resistors to tabulate next to the configured one.
    pub extra_r_c: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { f_start_hz: 1e9, f_stop_hz: 16e9, f_step_hz: 50e6, extra_r_c: vec![210.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResolutionConfig {
    pub bits: Vec<u32>,
    pub f_step_hz: f64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self { bits: vec![8, 10, 12, 14], f_step_hz: 100e6 }
    }
}

/// Everything the commands need; scenario stages inherit `chain`,
/// `controller` and `filter` unless they override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub chain: ChainConfig,
    pub controller: ControllerConfig,
    pub filter: NotchModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<GridSpec>,
    pub sweep: SweepConfig,
    pub resolution: ResolutionConfig,
}

impl Config {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|source| CliError::Json { path: origin.to_string(), source })?;
        cfg.chain.validate()?;
        cfg.controller.validate()?;
        cfg.filter.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&fs::read_to_string(p).map_err(io_err(p))?, &p.display().to_string()),
            None => Self::from_json(DEFAULT_CONFIG, "bundled default config"),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.calibration.clone().unwrap_or_else(|| GridSpec::for_chain(&self.chain))
    }
}

/// Exit status and the files a command wrote.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifact_paths: Vec<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "swsense", version, about = "Standing-wave interference detector toolkit")]
pub struct Cli {
    /// Configuration JSON; the bundled defaults are used when absent.
    #[arg(long, global = true, env = "SWSENSE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = "swsense-out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate S11/S21 of the main line with and without the tap.
    SweepSparams(SweepArgs),
    /// Build the calibration look-up table.
    Calibrate,
    /// Estimate frequency and power from three ADC codes, or from a tone.
    Estimate(EstimateArgs),
    /// Frequency resolution per tap across ADC bit depths.
    Resolution,
    /// Place the second sensing node for a target relative resolution.
    PlaceNodes(PlaceArgs),
    /// Run a scenario file or a bundled scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub f_start: Option<f64>,
    #[arg(long)]
    pub f_stop: Option<f64>,
    #[arg(long)]
    pub f_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Open-end, l1 and l2 codes, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["freq", "power"])]
    pub codes: Option<Vec<u32>>,
    /// Attenuation in effect when the codes were read.
    #[arg(long, default_value_t = 0.0)]
    pub att: f64,
    /// Tone frequency in Hz; the chain is read out at AGC equilibrium.
    #[arg(long, requires = "power")]
    pub freq: Option<f64>,
    /// Tone power in dBm.
    #[arg(long, requires = "freq", allow_negative_numbers = true)]
    pub power: Option<f64>,
    /// Stem of a saved calibration (`<stem>.csv` + `<stem>.json`).
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlaceArgs {
    /// Bijective limit of the first node, Hz.
    #[arg(default_value_t = 16e9)]
    pub f_max: f64,
    /// Target relative resolution.
    #[arg(default_value_t = 0.0025)]
    pub rel_res: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON path or bundled scenario name.
    #[arg(default_value = "pulse_response")]
    pub scenario: String,
    /// Repeat with consecutive seeds and tabulate the latencies.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// List the bundled scenarios and exit.
    #[arg(long)]
    pub list: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))
}

fn sweep_points(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(CliError::Usage(format!("bad frequency sweep {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + step * i as f64).collect())
}

fn write_sparams(path: &Path, freqs: &[f64], s11: f64, s21: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SPARAMS_HEADER)?;
    for f in freqs {
        w.write_record([f.to_string(), format!("{s11:.6}"), format!("{s21:.6}")])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn cmd_sweep_sparams(cfg: &Config, args: &SweepArgs, out: &Path) -> Result<CommandResult> {
    out_dir(out)?;
    let s = &cfg.sweep;
    let freqs = sweep_points(
        args.f_start.unwrap_or(s.f_start_hz),
        args.f_stop.unwrap_or(s.f_stop_hz),
        args.f_step.unwrap_or(s.f_step_hz),
    )?;
    let mut res = CommandResult::default();
    let (s11, s21) = tap_sparams(&cfg.chain.tap);
    let path = out.join("sparams_tap.csv");
    write_sparams(&path, &freqs, s11, s21)?;
    res.artifact_paths.push(path);
    // an unloaded matched line
    let path = out.join("sparams_no_tap.csv");
    write_sparams(&path, &freqs, f64::NEG_INFINITY, 0.0)?;
    res.artifact_paths.push(path);
    for &r_c in &s.extra_r_c {
        let tap = ResistiveTapParams::new(r_c, cfg.chain.tap.z0)?;
        let (s11, s21) = tap_sparams(&tap);
        let path = out.join(format!("sparams_tap_rc{r_c}.csv"));
        write_sparams(&path, &freqs, s11, s21)?;
        res.artifact_paths.push(path);
    }
    Ok(res)
}

pub fn cmd_calibrate(cfg: &Config, out: &Path) -> Result<CommandResult> {
    out_dir(out)?;
    let cal = build_calibration(&cfg.chain, &cfg.grid())?;
    let (csv_path, json_path) = cal.save(out.join("calibration"))?;
    Ok(CommandResult { exit_code: 0, artifact_paths: vec![csv_path, json_path] })
}

fn load_or_build(cfg: &Config, stem: Option<&Path>) -> Result<CalibrationTable> {
    match stem {
        Some(s) => Ok(CalibrationTable::load(s)?),
        None => Ok(build_calibration(&cfg.chain, &cfg.grid())?),
    }
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    codes: TapCodes,
    freq_hz: f64,
    power_dbm: f64,
    tap_used: swsense::estimator::TapId,
    confidence: swsense::estimator::Confidence,
}

pub fn cmd_estimate(cfg: &Config, args: &EstimateArgs, out: &Path) -> Result<CommandResult> {
    let cal = load_or_build(cfg, args.calibration.as_deref())?;
    let codes = match (&args.codes, args.freq, args.power) {
        (Some(c), _, _) if c.len() == 3 => {
            TapCodes { code_oc: c[0], code_l1: c[1], code_l2: c[2], att_db: args.att, t: 0.0 }
        }
        (None, Some(f), Some(p)) => {
            let tone = Tone::cw(Frequency::try_hz(f)?, PowerLevel::dbm(p));
            settled_readout(&cal.chain, &AgcWindow::for_chain(&cal.chain), &SignalDescriptor::single(tone))
        }
        _ => return Err(CliError::Usage("give either --codes OC,L1,L2 or both --freq and --power".into())),
    };
    let e = estimate(&codes, &cal)?;
    let report = EstimateReport {
        codes,
        freq_hz: e.freq.as_hz(),
        power_dbm: e.power.as_dbm(),
        tap_used: e.tap_used,
        confidence: e.confidence,
    };
    println!("freq_hz: {}", report.freq_hz);
    println!("power_dbm: {}", report.power_dbm);
    println!("tap: {:?}", report.tap_used);
    out_dir(out)?;
    let path = out.join("estimate.json");
    write_json(&path, &report)?;
    Ok(CommandResult { exit_code: 0, artifact_paths: vec![path] })
}

pub fn cmd_resolution(cfg: &Config, out: &Path) -> Result<CommandResult> {
    out_dir(out)?;
    let path = out.join("resolution.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(RESOLUTION_HEADER)?;
    let step = cfg.resolution.f_step_hz;
    for &bits in &cfg.resolution.bits {
        let adc = swsense::readout::AdcParams { bits, ..cfg.chain.adc };
        for tap in &cfg.chain.stub.taps {
            for f in sweep_points(step, tap.f_max.as_hz(), step)? {
                let df = resolution(Frequency::hz(f), tap.f_max, &cfg.chain.detector, &adc);
                if !df.is_finite() || df <= 0.0 {
                    continue;
                }
                w.write_record([
                    bits.to_string(),
                    f.to_string(),
                    tap.name.clone(),
                    format!("{:.6}", df / 1e9),
                    format!("{:.6}", 100.0 * df / f),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(CommandResult { exit_code: 0, artifact_paths: vec![path] })
}

#[derive(Debug, Serialize)]
struct Placement {
    f_max_1_hz: f64,
    rel_res: f64,
    f_max_2_hz: f64,
    f_min_hz: f64,
}

pub fn cmd_place_nodes(cfg: &Config, args: &PlaceArgs, out: &Path) -> Result<CommandResult> {
    let f1 = Frequency::try_hz(args.f_max)?;
    let (f2, fmin) = place_nodes(f1, args.rel_res, &cfg.chain.detector, &cfg.chain.adc)?;
    println!("f_max_2_hz: {:.2e}", f2.as_hz());
    println!("f_min_hz: {:.2e}", fmin.as_hz());
    out_dir(out)?;
    let path = out.join("place_nodes.json");
    let p = Placement { f_max_1_hz: args.f_max, rel_res: args.rel_res, f_max_2_hz: f2.as_hz(), f_min_hz: fmin.as_hz() };
    write_json(&path, &p)?;
    Ok(CommandResult { exit_code: 0, artifact_paths: vec![path] })
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads a scenario, filling each stage's chain, controller and filter from
/// the configuration where the scenario is silent.
pub fn load_scenario(cfg: &Config, name_or_path: &str) -> Result<Scenario> {
    let (text, origin) = match BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name_or_path) {
        Some((n, t)) => (t.to_string(), format!("bundled scenario {n}")),
        None => {
            let p = Path::new(name_or_path);
            (fs::read_to_string(p).map_err(io_err(p))?, p.display().to_string())
        }
    };
    let json_err = |source| CliError::Json { path: origin.clone(), source };
    let mut raw: Value = serde_json::from_str(&text).map_err(json_err)?;
    let base = serde_json::json!({
        "chain": cfg.chain,
        "controller": cfg.controller,
        "filter": cfg.filter,
    });
    if let Some(stages) = raw.get_mut("stages").and_then(Value::as_array_mut) {
        for st in stages {
            let mut merged = base.clone();
            // a different filter kind brings its own defaults
            let kind = st.pointer("/filter/kind").cloned();
            if kind.is_some() && kind.as_ref() != merged.pointer("/filter/kind") {
                merged["filter"] = Value::Object(Default::default());
            }
            merge(&mut merged, st.take());
            *st = merged;
        }
    }
    let sc: Scenario = serde_json::from_value(raw).map_err(json_err)?;
    sc.validate()?;
    Ok(sc)
}

pub fn cmd_simulate(cfg: &Config, args: &SimulateArgs, seed: Option<u64>, out: &Path) -> Result<CommandResult> {
    if args.list {
        for (n, _) in BUNDLED_SCENARIOS {
            println!("{n}");
        }
        return Ok(CommandResult::default());
    }
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let mut sc = load_scenario(cfg, &args.scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let n_tones = sc.sources.len();
    let prepared = prepare(sc)?;
    let first = prepared.run()?;
    out_dir(out)?;
    let mut res = CommandResult::default();

    let path = out.join("trace.csv");
    write_trace_csv(&first.trace, n_tones, create(&path)?)?;
    res.artifact_paths.push(path);
    for (k, log) in first.trace.samples.iter().enumerate() {
        let path = out.join(format!("controller_s{}.csv", k + 1));
        write_controller_csv(log, create(&path)?)?;
        res.artifact_paths.push(path);
    }
    if !first.trace.snapshots.is_empty() {
        let path = out.join("snapshots.csv");
        write_snapshots_csv(&first.trace, create(&path)?)?;
        res.artifact_paths.push(path);
    }
    let path = out.join("metrics.json");
    write_json(&path, &first.metrics)?;
    res.artifact_paths.push(path);
    if !first.trace.diagnostics.is_empty() {
        let path = out.join("diagnostics.txt");
        fs::write(&path, first.trace.diagnostics.join("\n") + "\n").map_err(io_err(&path))?;
        res.artifact_paths.push(path);
    }
    if args.runs > 1 {
        let path = out.join("runs.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(RUNS_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let base = prepared.scenario.seed;
        for i in 0..args.runs {
            let s = base.wrapping_add(i);
            let m = if i == 0 { first.metrics.clone() } else { prepared.run_with_seed(s)?.metrics };
            w.write_record([
                s.to_string(),
                opt(m.response_time_engage),
                opt(m.response_time_release),
                m.limit_cycle.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
        res.artifact_paths.push(path);
    }

    let m = &first.metrics;
    let show = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
    println!("response_time_engage_s: {}", show(m.response_time_engage));
    println!("response_time_release_s: {}", show(m.response_time_release));
    println!("limit_cycle: {}", m.limit_cycle);
    for (i, p) in m.final_output_dbm.iter().enumerate() {
        println!("tone {} final output: {p:.2} dBm", i + 1);
    }
    for d in first.trace.diagnostics.iter().take(5) {
        eprintln!("warning: {d}");
    }
    Ok(res)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<CommandResult> {
    let cfg = Config::load(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::SweepSparams(a) => cmd_sweep_sparams(&cfg, a, out),
        Command::Calibrate => cmd_calibrate(&cfg, out),
        Command::Estimate(a) => cmd_estimate(&cfg, a, out),
        Command::Resolution => cmd_resolution(&cfg, out),
        Command::PlaceNodes(a) => cmd_place_nodes(&cfg, a, out),
        Command::Simulate(a) => cmd_simulate(&cfg, a, cli.seed, out),
    }
}
