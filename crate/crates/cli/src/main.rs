//! Operator surface for the intersection simulator: run single scenarios,
//! sweep configuration grids across seed ranges, train detector thresholds,
//! fit plant coefficients from traces, and validate configuration files.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric fault
//! while stepping a scenario, 4 sweep completed with per-item failures (the
//! sweep report lists each one).
//!
//! Artifacts are pure functions of the configuration and seed: no
//! timestamps, hostnames, or paths are embedded, so re-running the same
//! inputs reproduces every output byte for byte. `--provenance` opts into a
//! separate provenance.json carrying a wall-clock stamp.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crosslight_core::config::{self, ScenarioConfig};
use crosslight_core::estimate::{fit_occupancy_params, fit_report, FitReport};
use crosslight_core::sim::{regression_samples, run_scenario, sweep, train_thresholds, RunOutput};
use crosslight_core::trace::{parse_step_records, write_cycle_records, write_step_records};
use crosslight_core::trace::MetricsReport;
use crosslight_core::{Error, Result};

const SWEEP_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "crosslight",
    version,
    about = "Deterministic traffic-intersection simulator with sensor-replay detection",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario; write trace.csv, cycles.csv, and metrics.json.
    Run(RunArgs),
    /// Run a scenario across a value grid and a seed range; write sweep.json.
    Sweep(SweepArgs),
    /// Train the per-pair occupancy-difference thresholds; write them as TOML.
    TrainThreshold(TrainThresholdArgs),
    /// Fit occupancy coefficients from a trace CSV; write a pair-parameter file.
    FitParams(FitParamsArgs),
    /// Parse and validate a scenario configuration.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario configuration file (TOML).
    #[arg(short = 'c', long = "config", value_name = "FILE")]
    config: PathBuf,
    /// Dotted-path override, e.g. attack.enabled=false or pair.0.k=0.004.
    /// Values use TOML syntax. Unknown keys are hard errors. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed override. Wins over CROSSLIGHT_SEED, which wins over the file.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for trace.csv, cycles.csv, and metrics.json.
    #[arg(short = 'o', long = "out", value_name = "DIR")]
    out: PathBuf,
    /// Also write provenance.json with a wall-clock stamp.
    #[arg(long)]
    provenance: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for sweep.json.
    #[arg(short = 'o', long = "out", value_name = "DIR")]
    out: PathBuf,
    /// Grid axis as KEY=V1,V2,... (dotted config key, TOML values).
    /// Repeatable; axes combine as a cartesian product in flag order.
    #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
    /// Seeds per grid point: base seed, base+1, ... (wrapping).
    #[arg(long, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Worker threads for the sweep; 0 uses the default parallelism.
    /// Results are identical for every worker count.
    #[arg(long, value_name = "N", default_value_t = 0)]
    workers: usize,
    /// Also write provenance.json with a wall-clock stamp.
    #[arg(long)]
    provenance: bool,
}

#[derive(Args)]
struct TrainThresholdArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output TOML file for the trained thresholds.
    #[arg(short = 'o', long = "out", value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct FitParamsArgs {
    /// Trace CSV produced by `run` (the trace.csv artifact).
    #[arg(long, value_name = "FILE")]
    trace: PathBuf,
    /// Output TOML file with fitted [[pair]] coefficient blocks.
    #[arg(short = 'o', long = "out", value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::TrainThreshold(args) => cmd_train_threshold(args),
        Cmd::FitParams(args) => cmd_fit_params(args),
        Cmd::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFault { .. } => 3,
        Error::SweepPartial { .. } => 4,
        _ => 2,
    }
}

/// Loads, overrides, seeds, and (optionally) validates a configuration.
/// Seed precedence: --seed, then CROSSLIGHT_SEED, then overrides/file.
fn load_config(args: &ConfigArgs, extra_overrides: &[String], validate: bool) -> Result<ScenarioConfig> {
    let text = read_input(&args.config)?;
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra_overrides);
    let mut cfg = config::from_toml_str_with_overrides(&text, &overrides)?;
    apply_seed(&mut cfg, args.seed)?;
    if validate {
        cfg.validate()?;
    }
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn apply_seed(cfg: &mut ScenarioConfig, flag: Option<u64>) -> Result<()> {
    if let Some(seed) = flag {
        cfg.scenario.seed = seed;
        return Ok(());
    }
    match std::env::var("CROSSLIGHT_SEED") {
        Ok(raw) => {
            cfg.scenario.seed = raw.trim().parse().map_err(|e| {
                Error::Config(format!("CROSSLIGHT_SEED '{raw}' is not a valid seed: {e}"))
            })?;
            Ok(())
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(Error::Config(format!("CROSSLIGHT_SEED: {e}"))),
    }
}

fn write_bytes(path: &Path, build: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    build(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_provenance(dir: &Path) -> Result<()> {
    let unix_time_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = serde_json::json!({
        "unix_time_s": unix_time_s,
        "hostname": std::env::var("HOSTNAME").ok(),
    });
    let body = serde_json::to_string_pretty(&doc).expect("provenance serialize");
    fs::write(dir.join("provenance.json"), body + "\n")?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(&args.config, &[], true)?;
    let out = run_scenario(&cfg)?;
    fs::create_dir_all(&args.out)?;
    write_bytes(&args.out.join("trace.csv"), |w| write_step_records(w, &out.steps))?;
    write_bytes(&args.out.join("cycles.csv"), |w| write_cycle_records(w, &out.cycles))?;
    fs::write(args.out.join("metrics.json"), out.metrics.to_json() + "\n")?;
    if args.provenance {
        write_provenance(&args.out)?;
    }
    let m = &out.metrics;
    println!(
        "run: seed {}, {} cycles, final green [{:.3}, {:.3}] s",
        m.seed, m.cycles, m.final_green[0], m.final_green[1]
    );
    match m.detection_time_s {
        Some(t) => println!("detection at {t} s (residual {:?}, threshold {:?})",
            m.residual_alarm_time_s, m.threshold_alarm_time_s),
        None => println!("no detection"),
    }
    println!(
        "wrote {} step rows, {} cycle rows -> {}",
        out.steps.len(),
        out.cycles.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let cfg = load_config(&args.config, &[], true)?;
    println!(
        "configuration valid: {} pairs, {} cycles of {} steps, seed {}",
        cfg.pairs.len(),
        cfg.total_cycles(),
        cfg.steps_per_cycle(),
        cfg.scenario.seed
    );
    Ok(())
}

fn cmd_train_threshold(args: &TrainThresholdArgs) -> Result<()> {
    let cfg = load_config(&args.config, &[], true)?;
    let trained = train_thresholds(&cfg)?;
    let body = toml::to_string(&trained)
        .map_err(|e| Error::Config(format!("serialize thresholds: {e}")))?;
    fs::write(&args.out, body)?;
    println!(
        "trained thresholds [{}, {}] (kappa {}, {} samples per pair) -> {}",
        trained.thrsh[0],
        trained.thrsh[1],
        trained.kappa,
        trained.training_samples,
        args.out.display()
    );
    Ok(())
}

/// Formats a float as a TOML float token. Display output is
/// shortest-round-trip; integral values still need a trailing `.0` to stay
/// typed as floats.
fn toml_float(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || s.contains('e') || s.contains('E') {
        s
    } else {
        s + ".0"
    }
}

fn cmd_fit_params(args: &FitParamsArgs) -> Result<()> {
    let text = read_input(&args.trace)?;
    let steps = parse_step_records(&text)?;
    let mut reports: Vec<FitReport> = Vec::with_capacity(2);
    for pair in 0..2 {
        let samples = regression_samples(&steps, pair);
        let fit = fit_occupancy_params(&samples)?;
        reports.push(fit_report(&fit));
    }
    let mut body = String::from(
        "# Occupancy-recursion coefficients recovered from a step trace by\n\
         # ordinary least squares. The file is a valid scenario fragment:\n\
         # merge it into a configuration or run it directly (unlisted keys\n\
         # keep their defaults).\n",
    );
    for (i, r) in reports.iter().enumerate() {
        body += &format!(
            "# pair {i}: rmse = {}, samples = {}, excluded = {}\n",
            r.rmse, r.n, r.excluded
        );
    }
    for r in &reports {
        body += &format!(
            "\n[[pair]]\nk = {}\nbeta = {}\nlambda = {}\n",
            toml_float(r.k),
            toml_float(r.beta),
            toml_float(r.lambda)
        );
    }
    fs::write(&args.out, body)?;
    println!(
        "fitted pair coefficients from {} samples -> {}",
        steps.len().saturating_sub(1),
        args.out.display()
    );
    Ok(())
}

struct GridAxis {
    key: String,
    values: Vec<String>,
}

fn parse_grid(specs: &[String]) -> Result<Vec<GridAxis>> {
    specs
        .iter()
        .map(|spec| {
            let (key, values) = spec.split_once('=').ok_or_else(|| {
                Error::Config(format!("--grid '{spec}': expected KEY=V1,V2,..."))
            })?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(String::from)
                .collect();
            if values.is_empty() {
                return Err(Error::Config(format!("--grid '{spec}': no values given")));
            }
            Ok(GridAxis {
                key: key.trim().to_string(),
                values,
            })
        })
        .collect()
}

/// Cartesian product of the axes, preserving axis order and value order.
/// No axes yields the single empty point (a pure seed sweep).
fn grid_points(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for value in &axis.values {
                let mut extended = point.clone();
                extended.push((axis.key.clone(), value.clone()));
                next.push(extended);
            }
        }
        points = next;
    }
    points
}

/// A run counts as detected only when an alarm exists and does not precede
/// the attack; alarms without an attack are false positives, not detections.
fn detected(m: &MetricsReport) -> bool {
    match (m.detection_time_s, m.attack_start_s) {
        (Some(t), Some(start)) => t >= start,
        _ => false,
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    // Parse and seed every grid point up front: unknown keys and malformed
    // values are configuration errors before anything runs. Value-level
    // invariants are checked per item by the runner so one bad grid point
    // cannot abort the rest of the sweep.
    let axes = parse_grid(&args.grid)?;
    let points = grid_points(&axes);
    let base = load_config(&args.config, &[], false)?;
    let base_seed = base.scenario.seed;
    let mut configs = Vec::with_capacity(points.len() * args.seeds as usize);
    let mut labels = Vec::with_capacity(configs.capacity());
    for point in &points {
        let point_overrides: Vec<String> =
            point.iter().map(|(k, v)| format!("{k}={v}")).collect();
        for j in 0..args.seeds {
            let mut cfg = load_config(&args.config, &point_overrides, false)?;
            cfg.scenario.seed = base_seed.wrapping_add(j);
            labels.push((point, cfg.scenario.seed));
            configs.push(cfg);
        }
    }

    let results = sweep(&configs, args.workers, run_scenario)?;

    let items: Vec<serde_json::Value> = results
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(index, (result, (point, seed)))| {
            let grid: serde_json::Map<String, serde_json::Value> = point
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            match result {
                Ok(out) => serde_json::json!({
                    "index": index,
                    "grid": grid,
                    "seed": seed,
                    "status": "ok",
                    "metrics": serde_json::to_value(&out.metrics).expect("metrics serialize"),
                }),
                Err(e) => serde_json::json!({
                    "index": index,
                    "grid": grid,
                    "seed": seed,
                    "status": "error",
                    "error": e.to_string(),
                }),
            }
        })
        .collect();

    // Per grid point: run/failure counts, detection rate over completed
    // runs, and mean latency over detected runs.
    let mut levels = Vec::with_capacity(points.len());
    for (p, point) in points.iter().enumerate() {
        let chunk = &results[p * args.seeds as usize..(p + 1) * args.seeds as usize];
        let failed = chunk.iter().filter(|r| r.is_err()).count();
        let completed = chunk.len() - failed;
        let hits: Vec<&RunOutput> = chunk
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .filter(|out| detected(&out.metrics))
            .collect();
        let latencies: Vec<f64> = hits
            .iter()
            .filter_map(|out| out.metrics.detection_latency_s)
            .collect();
        let grid: serde_json::Map<String, serde_json::Value> = point
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        levels.push(serde_json::json!({
            "grid": grid,
            "runs": chunk.len(),
            "failed": failed,
            "detected": hits.len(),
            "detection_rate": if completed == 0 {
                serde_json::Value::Null
            } else {
                serde_json::json!(hits.len() as f64 / completed as f64)
            },
            "mean_detection_latency_s": if latencies.is_empty() {
                serde_json::Value::Null
            } else {
                serde_json::json!(latencies.iter().sum::<f64>() / latencies.len() as f64)
            },
        }));
    }

    let report = serde_json::json!({
        "schema_version": SWEEP_SCHEMA_VERSION,
        "base_seed": base_seed,
        "seeds_per_point": args.seeds,
        "axes": axes.iter().map(|a| serde_json::json!({
            "key": a.key,
            "values": a.values,
        })).collect::<Vec<_>>(),
        "items": items,
        "levels": levels,
    });
    fs::create_dir_all(&args.out)?;
    let body = serde_json::to_string_pretty(&report).expect("sweep report serialize");
    fs::write(args.out.join("sweep.json"), body + "\n")?;
    if args.provenance {
        write_provenance(&args.out)?;
    }

    let total = results.len();
    let failed = results.iter().filter(|r| r.is_err()).count();
    for level in &levels {
        println!(
            "level {}: {} runs, {} failed, detection rate {}",
            level["grid"], level["runs"], level["failed"], level["detection_rate"]
        );
    }
    println!("sweep: {total} runs, {failed} failed -> {}", args.out.join("sweep.json").display());
    if failed > 0 {
        return Err(Error::SweepPartial { failed, total });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_map_the_error_classes() {
        assert_eq!(exit_code(&Error::Config("bad key".into())), 2);
        assert_eq!(exit_code(&Error::Parse("bad row".into())), 2);
        assert_eq!(
            exit_code(&Error::NumericFault {
                step: 3,
                quantity: "Q1".into(),
                value: f64::INFINITY,
                snapshot: String::new(),
            }),
            3
        );
        assert_eq!(exit_code(&Error::SweepPartial { failed: 1, total: 4 }), 4);
    }

    #[test]
    fn grid_points_form_an_ordered_cartesian_product() {
        let axes = parse_grid(&[
            "noise.meas_power_frac=0.1,0.2".into(),
            "detector.g=1.8".into(),
        ])
        .unwrap();
        let points = grid_points(&axes);
        assert_eq!(points.len(), 2);
        assert_eq!(points[0][0].1, "0.1");
        assert_eq!(points[1][0].1, "0.2");
        assert_eq!(points[0][1], ("detector.g".to_string(), "1.8".to_string()));
        assert_eq!(grid_points(&[]), vec![Vec::new()]);
    }

    #[test]
    fn grid_specs_require_keys_and_values() {
        assert!(parse_grid(&["novalues=".into()]).is_err());
        assert!(parse_grid(&["noequals".into()]).is_err());
    }

    #[test]
    fn toml_floats_stay_floats() {
        assert_eq!(toml_float(0.0035), "0.0035");
        assert_eq!(toml_float(3.0), "3.0");
        for v in [0.0035, 3.0, 1e-300, f64::MAX] {
            assert_eq!(toml_float(v).parse::<f64>().unwrap(), v, "{v}");
        }
    }
}
