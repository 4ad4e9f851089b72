//! `farmctl sim|run|train|experiment-germination|replay`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::chamber::{run_scenario, ChamberParams, ChamberState, ScenarioSpec, SensorParams, SimError};
use crate::compensation::{
    error_table, generate_calibration, train, CalibrationSweep, ChannelErrors, CompModel, TrainError, TrainHyper,
};
use crate::config::Config;
use crate::daemon::{self, RunOptions};
use crate::experiment::{run_germination, GerminationOptions};
use crate::replay::{run_replay, ReplayOptions};
use crate::telemetry::{Actuator, Channel};

#[derive(Debug, Parser)]
#[command(name = "farmctl", version, about = "Home farm chamber controller")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file through the chamber simulator and write its trace.
    Sim(SimArgs),
    /// Run the control daemon against the device bus.
    Run(RunArgs),
    /// Generate calibration sweeps and train the drift compensation model.
    Train(TrainArgs),
    /// One simulated day of germination at a lowered lamp target.
    ExperimentGermination(ExperimentArgs),
    /// Serve a recorded log through the API.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    #[arg(long, default_value = "trace.jsonl")]
    pub out: PathBuf,
    /// Override the scenario duration, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Override the integration step, seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file; defaults apply when neither this nor FARMCTL_CONFIG is set.
    #[arg(long, env = "FARMCTL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Run the chamber simulator in-process instead of connecting to the bus.
    #[arg(long)]
    pub embedded_sim: bool,
    /// Stop after this many control periods.
    #[arg(long)]
    pub max_periods: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Calibration samples per channel.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Germination lamp target, lux.
    #[arg(long, default_value_t = 3500.0)]
    pub lux: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulated length, hours.
    #[arg(long, default_value_t = 24.0)]
    pub hours: f64,
    /// Compensation model to correct readings with.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Log directory or a single telemetry-<day>.jsonl file.
    pub log: PathBuf,
    /// Log seconds per wall-clock second; `inf` for as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    #[arg(long, default_value = crate::api::DEFAULT_BIND)]
    pub bind: String,
    /// Exit once the end of the log is reached.
    #[arg(long)]
    pub exit_when_done: bool,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("farmctl: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sim(a) => cmd_sim(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Train(a) => cmd_train(&a),
        Command::ExperimentGermination(a) => cmd_experiment(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}

/// Air temperature under constant heater and fan levels and constant ambient.
pub fn air_temp_exact(p: &ChamberParams, t_amb: f64, t0: f64, heater: f64, fan: f64, elapsed: f64) -> f64 {
    let k = p.k_loss + p.k_vent * fan;
    let t_inf = t_amb + p.p_heat * heater / k;
    t_inf + (t0 - t_inf) * (-k * elapsed).exp()
}

#[derive(Debug, Serialize)]
struct HeaterCheck {
    expected_t_air: f64,
    simulated_t_air: f64,
    error_c: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct SimSummary {
    steps: usize,
    final_t: f64,
    final_state: ChamberState,
    clamp_violations: usize,
    out: PathBuf,
    heater_check: Option<HeaterCheck>,
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn cmd_sim(a: &SimArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&a.scenario)?;
    if let Some(d) = a.duration {
        spec.duration_s = d;
    }
    if let Some(dt) = a.dt {
        spec.dt_s = dt;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage(format!("{}: {e}", a.scenario.display())))?;
    let trace = run_scenario(&spec, None).map_err(|e: SimError| runtime(e.to_string()))?;
    let file = File::create(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    trace
        .write_jsonl(BufWriter::new(file))
        .map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;

    let last = *trace.last_state().ok_or_else(|| runtime("empty trace"))?;
    let cmd = spec.actuators.unwrap_or_default();
    let heater_check = (spec.ambient.amp_c == 0.0 && cmd.get(Actuator::AirHeater) > 0.0).then(|| {
        let expected = air_temp_exact(
            &spec.chamber,
            spec.ambient.mean_c,
            spec.initial_state.t_air,
            cmd.get(Actuator::AirHeater),
            cmd.get(Actuator::Fan),
            last.clock.t - spec.initial_state.clock.t,
        );
        let error_c = (last.t_air - expected).abs();
        HeaterCheck {
            expected_t_air: expected,
            simulated_t_air: last.t_air,
            error_c,
            pass: error_c <= 0.02,
        }
    });
    let summary = SimSummary {
        steps: trace.len(),
        final_t: last.clock.t,
        final_state: last,
        clamp_violations: trace.clamp_violations(),
        out: a.out.clone(),
        heater_check,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        return Ok(());
    }
    println!("{} steps written to {}", summary.steps, summary.out.display());
    println!("final state at t = {} s", summary.final_t);
    let s = &summary.final_state;
    println!("  t_air    {:>10.4} °C", s.t_air);
    println!("  t_soil   {:>10.4} °C", s.t_soil);
    println!("  rh       {:>10.4} %", s.rh);
    println!("  co2      {:>10.4} ppm", s.co2);
    println!("  moisture {:>10.4} %", s.moisture);
    println!("  ph       {:>10.4}", s.ph_true);
    println!("  lux      {:>10.4}", s.lux);
    println!("clamp violations: {}", summary.clamp_violations);
    if let Some(c) = &summary.heater_check {
        println!(
            "heater step check: simulated {:.4} °C, closed form {:.4} °C, error {:.4} °C ({})",
            c.simulated_t_air,
            c.expected_t_air,
            c.error_c,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}

pub fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let config = match &a.config {
        Some(p) => Config::load(p).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    let opts = RunOptions {
        config,
        embedded_sim: a.embedded_sim,
        max_ticks: a.max_periods,
        handle_signals: true,
    };
    let summary = daemon::run(opts, Arc::new(AtomicBool::new(false)), |addr| {
        println!("api listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .map_err(|e| Failure {
        code: e.exit_code() as u8,
        message: e.to_string(),
    })?;
    println!(
        "stopped after {} periods, {} records logged",
        summary.ticks, summary.records
    );
    Ok(())
}

fn error_rows_json(rows: &[ChannelErrors]) -> serde_json::Value {
    serde_json::to_value(rows).expect("serializable")
}

fn print_error_table(rows: &[ChannelErrors]) {
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10}",
        "channel", "raw mean", "raw max", "comp mean", "comp max"
    );
    for r in rows {
        println!(
            "{:<16} {:>9.3}% {:>9.3}% {:>9.3}% {:>9.3}%",
            r.channel.name(),
            100.0 * r.raw_mean,
            100.0 * r.raw_max,
            100.0 * r.comp_mean,
            100.0 * r.comp_max
        );
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    if a.samples < 100 {
        return Err(usage("--samples must be at least 100 per channel"));
    }
    if a.epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    let sensors = SensorParams::default();
    let sweep = CalibrationSweep::with_samples(a.samples);
    let train_set = generate_calibration(&Channel::ALL, &sweep, &sensors, a.seed);
    let held_out = CalibrationSweep::held_out(sweep.t_amb_grid.len(), sweep.truth_fractions.len());
    let eval_set = generate_calibration(&Channel::ALL, &held_out, &sensors, a.seed.wrapping_add(1));
    let hyper = TrainHyper {
        epochs: a.epochs,
        seed: a.seed,
        ..TrainHyper::default()
    };
    let (model, reports) = match train(&train_set, &hyper) {
        Ok(r) => r,
        Err(TrainError::Diverged { report }) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            return Err(runtime(format!("{}: training diverged at epoch {}", report.channel, report.epochs)));
        }
        Err(e) => return Err(usage(e.to_string())),
    };
    model.save(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let rows = error_table(&model, &eval_set);
    if a.json {
        let out = json!({
            "model": a.out,
            "samples_per_channel": sweep.samples_per_channel(),
            "errors": error_rows_json(&rows),
            "training": reports.iter().map(|r| json!({
                "channel": r.channel,
                "best_epoch": r.best_epoch,
                "best_val_mse": r.best_val_mse,
                "train_mse": r.train_mse,
            })).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    } else {
        println!(
            "trained on {} samples per channel, model written to {}",
            sweep.samples_per_channel(),
            a.out.display()
        );
        print_error_table(&rows);
    }
    Ok(())
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    if !(a.lux.is_finite() && a.lux >= 0.0) {
        return Err(usage("--lux must be a non-negative number"));
    }
    if !(a.hours.is_finite() && a.hours > 0.0) {
        return Err(usage("--hours must be > 0"));
    }
    let model = match &a.model {
        Some(p) => Some(CompModel::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let opts = GerminationOptions {
        lux: a.lux,
        seed: a.seed,
        duration_s: a.hours * 3600.0,
        ..GerminationOptions::default()
    };
    let report = run_germination(&opts, model).map_err(|e| match e {
        SimError::Scenario(m) => usage(m),
        e => runtime(e.to_string()),
    })?;
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    if let Some(out) = &a.out {
        fs::write(out, &text).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    }
    if a.json {
        println!("{text}");
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<(), Failure> {
    let opts = ReplayOptions {
        log: a.log.clone(),
        speed: a.speed,
        bind: a.bind.clone(),
        exit_when_done: a.exit_when_done,
        handle_signals: true,
    };
    let summary = run_replay(&opts, Arc::new(AtomicBool::new(false)), |addr| {
        println!("api listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .map_err(|e| Failure {
        code: e.exit_code() as u8,
        message: e.to_string(),
    })?;
    println!(
        "replayed {} periods ({} records) in {:.2} s",
        summary.frames,
        summary.records,
        summary.wall.as_secs_f64()
    );
    Ok(())
}
