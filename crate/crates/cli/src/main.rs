//! Command-line runner for the NMPC walking pattern generator.
//!
//! Exit codes of `run`: 0 the episode completed, 2 the robot fell,
//! 3 the solver failed mid-episode, 1 configuration or I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gait_nmpc::scenario::Scenario;
use gait_nmpc::sim::{
    max_push_search, run_episode, run_parallel, scenario_catalog, timing_study, Outcome, PushAxis,
};

#[derive(Parser)]
#[command(
    name = "gait-nmpc",
    about = "Bipedal walking pattern generation by nonlinear MPC",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and write trajectory CSV + summary JSON.
    Run(RunArgs),
    /// Bisect the largest rejectable push force along one axis.
    Maxpush(MaxPushArgs),
    /// Sweep the SQP iteration budget on the timing gait and print the
    /// reachable threshold and the mean solve time per budget.
    Timing(TimingArgs),
    /// List the built-in scenarios, or write them out as TOML files.
    Scenarios(ScenariosArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file path, or the name of a built-in scenario.
    scenario: String,
    /// Override the balance-strategy combination (1-4).
    #[arg(long)]
    strategy: Option<u8>,
    /// Override the push force as `FX,FY` (newtons) on the scenario's
    /// disturbance.
    #[arg(long, value_name = "FX,FY")]
    push: Option<String>,
    /// Output directory for `<name>.csv` and `<name>.json`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MaxPushArgs {
    /// Scenario file path, or the name of a built-in scenario. Must
    /// declare exactly one disturbance.
    scenario: String,
    /// Push axis.
    #[arg(long, value_parser = ["x", "y"])]
    axis: String,
    /// Strategy combination (1-4); when omitted, runs all four in a
    /// worker pool and prints a table.
    #[arg(long)]
    strategy: Option<u8>,
}

#[derive(Args)]
struct TimingArgs {
    /// Largest SQP iteration budget to sweep.
    #[arg(long, default_value_t = 6)]
    ns: usize,
    /// Scenario file path or built-in name (defaults to the timing gait).
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Args)]
struct ScenariosArgs {
    /// Write every built-in scenario as `<dir>/<name>.toml`.
    #[arg(long)]
    emit: Option<PathBuf>,
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path).with_context(|| format!("loading {}", path.display()));
    }
    scenario_catalog()
        .into_iter()
        .find(|s| s.name == spec)
        .ok_or_else(|| {
            anyhow!(
                "`{spec}` is neither a file nor a built-in scenario (built-ins: {})",
                scenario_catalog()
                    .iter()
                    .map(|s| s.name.clone())
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        })
}

fn apply_overrides(
    mut scenario: Scenario,
    strategy: Option<u8>,
    push: Option<&str>,
) -> Result<Scenario> {
    if let Some(n) = strategy {
        scenario.toggles = None;
        scenario.strategy = Some(n);
    }
    if let Some(p) = push {
        let parts: Vec<&str> = p.split(',').collect();
        if parts.len() != 2 {
            bail!("--push expects FX,FY");
        }
        let fx: f64 = parts[0].trim().parse().context("parsing FX")?;
        let fy: f64 = parts[1].trim().parse().context("parsing FY")?;
        if scenario.disturbances.is_empty() {
            bail!("scenario has no disturbance to override");
        }
        scenario.disturbances[0].force_x_n = fx;
        scenario.disturbances[0].force_y_n = fy;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let scenario = apply_overrides(
        load_scenario(&args.scenario)?,
        args.strategy,
        args.push.as_deref(),
    )?;
    let log = run_episode(&scenario)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join(format!("{}.csv", scenario.name));
    let mut csv = fs::File::create(&csv_path)?;
    log.write_csv(&mut csv)?;
    let json_path = args.out.join(format!("{}.json", scenario.name));
    fs::write(&json_path, serde_json::to_string_pretty(&log.summary_json())?)?;

    let code = match log.outcome {
        Outcome::Completed => {
            println!(
                "completed: {} ticks, mean solve {:.2} ms -> {}",
                log.records.len(),
                log.mean_solve_time_s() * 1e3,
                csv_path.display()
            );
            ExitCode::SUCCESS
        }
        Outcome::Fallen { time_s } => {
            println!("fallen at {time_s:.3} s -> {}", csv_path.display());
            ExitCode::from(2)
        }
        Outcome::SolverFailed { time_s } => {
            println!("solver failed at {time_s:.3} s -> {}", csv_path.display());
            ExitCode::from(3)
        }
    };
    Ok(code)
}

fn cmd_maxpush(args: &MaxPushArgs) -> Result<ExitCode> {
    let axis = if args.axis == "x" { PushAxis::X } else { PushAxis::Y };
    let base = load_scenario(&args.scenario)?;
    let strategies: Vec<u8> = match args.strategy {
        Some(n) => vec![n],
        None => vec![1, 2, 3, 4],
    };
    let jobs: Vec<(u8, Scenario)> = strategies
        .iter()
        .map(|&n| Ok((n, apply_overrides(base.clone(), Some(n), None)?)))
        .collect::<Result<_>>()?;
    let results = run_parallel(jobs.clone(), |(_, s)| max_push_search(s, axis));
    println!("scenario: {}  axis: {}", base.name, args.axis);
    println!("strategy  max force [N]  episodes");
    for ((n, _), res) in jobs.iter().zip(results) {
        let res = res?;
        println!(
            "{:>8}  {:>13.0}  {:>8}{}",
            n,
            res.max_force_n,
            res.probes.len(),
            if res.saturated { "  (saturated)" } else { "" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_timing(args: &TimingArgs) -> Result<ExitCode> {
    let scenario = match &args.scenario {
        Some(s) => load_scenario(s)?,
        None => gait_nmpc::sim::timing_gait(),
    };
    let rows = timing_study(&scenario, args.ns)?;
    println!("scenario: {}", scenario.name);
    println!("N_s  reachable eps  mean time [ms]");
    for row in rows {
        println!(
            "{:>3}  {:>13.2e}  {:>14.2}",
            row.sqp_iters, row.eps_reachable, row.mean_solve_ms
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenarios(args: &ScenariosArgs) -> Result<ExitCode> {
    let catalog = scenario_catalog();
    match &args.emit {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for s in &catalog {
                let path = dir.join(format!("{}.toml", s.name));
                fs::write(&path, s.to_toml())?;
                println!("wrote {}", path.display());
            }
        }
        None => {
            for s in &catalog {
                println!(
                    "{:<22} {:>5.1} s  {} step entries{}",
                    s.name,
                    s.sim.total_s,
                    s.steps.len(),
                    if s.disturbances.is_empty() {
                        String::new()
                    } else {
                        format!(", push at {} s", s.disturbances[0].start_s)
                    }
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Maxpush(args) => cmd_maxpush(args),
        Command::Timing(args) => cmd_timing(args),
        Command::Scenarios(args) => cmd_scenarios(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
