//! `hybrid-acc`: run scenario files, compare VDT on/off, check properties.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hybrid_acc::channel::write_delivery_csv;
use hybrid_acc::metrics::{self, MetricsOptions, RunMetrics};
use hybrid_acc::model::VehicleParams;
use hybrid_acc::properties::{run_all, CheckOptions};
use hybrid_acc::scenario::{parse_scenario, set_param, ScenarioFile, PARAM_KEYS};
use hybrid_acc::sim::{run, RunOutput, SimConfig, SimError};
use hybrid_acc::trace::{phase_portraits, write_events, write_trace};

const EXIT_USAGE: u8 = 1;
const EXIT_COLLISION: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser)]
#[command(name = "hybrid-acc", version, about = "Hybrid ACC platoon simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace, events, metrics and phase portraits.
    Simulate(SimulateArgs),
    /// Run a scenario with VDT on and off and print both metric sets.
    Compare(RunArgs),
    /// Run the sampling-based property suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory. `compare` writes nothing unless it is given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario time step, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Seed for the channel jitter.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Override the scenario's `vdt` setting.
    #[arg(long, value_enum)]
    vdt: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = CheckOptions::default().samples)]
    samples: usize,
    #[arg(long, default_value_t = CheckOptions::default().seed)]
    seed: u64,
    /// Vehicle parameter override `key=value`, applied without validation.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Take vehicle 1's parameters and the VDT section from this file.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let k = k.trim();
    if !PARAM_KEYS.contains(&k) {
        return Err(format!(
            "unknown parameter `{k}`, expected one of {}",
            PARAM_KEYS.join(", ")
        ));
    }
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a number", v.trim()))?;
    Ok((k.to_owned(), v))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load(path: &Path) -> Result<ScenarioFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file = parse_scenario(&text).with_context(|| format!("{}", path.display()))?;
    file.validate()
        .with_context(|| format!("{}", path.display()))?;
    Ok(file)
}

fn configure(file: &ScenarioFile, args: &RunArgs) -> Result<SimConfig> {
    let mut config = file.config();
    if let Some(dt) = args.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            bail!("--dt must be positive, got {dt}");
        }
        config.dt = dt;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

struct Finished {
    output: RunOutput,
    metrics: RunMetrics,
}

fn execute(file: &ScenarioFile, config: &SimConfig) -> Finished {
    let output = run(config, &file.scenario());
    let metrics = metrics::compute(
        &output.traces,
        &output.events,
        &file.all_params(),
        &MetricsOptions::default(),
    );
    Finished { output, metrics }
}

fn write_outputs(dir: &Path, done: &Finished) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let create = |name: &str| {
        let path = dir.join(name);
        fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))
    };
    write_trace(create("trace.csv")?, &done.output.traces)?;
    write_events(create("events.csv")?, &done.output.events)?;
    write_delivery_csv(create("deliveries.csv")?, &done.output.deliveries)?;
    fs::write(dir.join("metrics.txt"), metrics::report(&done.metrics))?;
    for (id, bytes) in phase_portraits(&done.output.traces) {
        fs::write(dir.join(format!("phase_v{id}.csv")), bytes)?;
    }
    Ok(())
}

/// Exit code for a finished run; errors other than a collision are reported
/// but the outputs are still written.
fn outcome(label: &str, done: &Finished) -> u8 {
    match &done.output.error {
        None => 0,
        Some(e @ SimError::Collision { .. }) => {
            eprintln!("{label}{e}");
            EXIT_COLLISION
        }
        Some(e) => {
            eprintln!("{label}run stopped: {e}");
            EXIT_USAGE
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let file = load(&args.run.scenario)?;
    let mut config = configure(&file, &args.run)?;
    if let Some(v) = args.vdt {
        config.vdt_enabled = matches!(v, Switch::On);
    }
    let done = execute(&file, &config);
    let out = args.run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&out, &done)?;
    print!("{}", metrics::report(&done.metrics));
    Ok(outcome("", &done))
}

fn compare(args: RunArgs) -> Result<u8> {
    let file = load(&args.scenario)?;
    let base = configure(&file, &args)?;
    let on = SimConfig {
        vdt_enabled: true,
        ..base.clone()
    };
    let off = SimConfig {
        vdt_enabled: false,
        ..base
    };
    let (done_on, done_off) = thread::scope(|s| {
        let a = s.spawn(|| execute(&file, &on));
        let b = s.spawn(|| execute(&file, &off));
        (
            a.join().expect("vdt on run panicked"),
            b.join().expect("vdt off run panicked"),
        )
    });
    if let Some(dir) = &args.out {
        write_outputs(&dir.join("vdt_on"), &done_on)?;
        write_outputs(&dir.join("vdt_off"), &done_off)?;
    }
    print!("{}", side_by_side(&done_on.metrics, &done_off.metrics));
    println!();
    print!("{}", delta_table(&done_on.metrics, &done_off.metrics));
    Ok(outcome("vdt on: ", &done_on).max(outcome("vdt off: ", &done_off)))
}

fn side_by_side(on: &RunMetrics, off: &RunMetrics) -> String {
    let on = metrics::report(on);
    let off = metrics::report(off);
    let rows: Vec<(&str, &str, &str)> = on
        .lines()
        .zip(off.lines())
        .filter_map(|(a, b)| {
            let (key, va) = a.split_once(" = ")?;
            let (_, vb) = b.split_once(" = ")?;
            Some((key, va, vb))
        })
        .collect();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6);
    let mut s = format!(
        "{:<width$}  {:>22}  {:>22}\n",
        "metric", "vdt_on", "vdt_off"
    );
    for (k, a, b) in rows {
        s += &format!("{k:<width$}  {a:>22}  {b:>22}\n");
    }
    s
}

fn diff(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!("{:.3}", a - b),
        _ => "none".into(),
    }
}

/// On minus off, per vehicle.
fn delta_table(on: &RunMetrics, off: &RunMetrics) -> String {
    let mut s = format!(
        "{:>7}  {:>14}  {:>14}  {:>16}\n",
        "vehicle", "d_onset_s", "d_oscillations", "d_peak_abs_a"
    );
    for a in &on.vehicles {
        let Some(b) = off.vehicle(a.id) else { continue };
        s += &format!(
            "{:>7}  {:>14}  {:>14}  {:>16.3}\n",
            a.id,
            diff(a.decel_onset, b.decel_onset),
            a.oscillations as i64 - b.oscillations as i64,
            a.peak_abs_accel - b.peak_abs_accel
        );
    }
    s
}

fn check(args: CheckArgs) -> Result<u8> {
    let (mut p, vp) = match &args.scenario {
        Some(path) => {
            let file = load(path)?;
            (file.params(1), file.vdt)
        }
        None => (VehicleParams::default(), Default::default()),
    };
    for (k, v) in &args.params {
        set_param(&mut p, k, *v);
    }
    if args.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let opts = CheckOptions {
        samples: args.samples,
        seed: args.seed,
    };
    let outcomes = run_all(&p, &vp, &opts);
    for o in &outcomes {
        println!("{o}");
    }
    Ok(if outcomes.iter().all(|o| o.passed()) {
        0
    } else {
        EXIT_PROPERTY
    })
}
