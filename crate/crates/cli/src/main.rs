mod config;
mod inputs;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use nonholo::optimal::{reduce_oscillator, shoot, OscillatorReduction, ShootOptions, SolutionSummary};
use nonholo::steering::{self, Verification};
use nonholo::system::{default_step, step_count};
use nonholo::{
    classify, simulate, ControllabilityReport, ExtremalProblem, InputSignal, ProbeBudget, SteeringPlan, SystemModel,
};
use serde::Serialize;

use config::{Format, RunConfig};

#[derive(Parser)]
#[command(name = "nonholo", version, about = "Controllability, steering and minimum-energy transfers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify controllability of the configured system.
    Analyze {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Plan open-loop inputs to a target state and verify them.
    Steer {
        config: PathBuf,
        /// Target state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        /// Start state, comma separated (default: origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// Horizon of the loop phases.
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Shoot for the minimum-energy extremal to a target state.
    Optimal {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the system under given inputs.
    Simulate {
        config: PathBuf,
        /// Shape list such as "cos(2,6.283,0); sin(1,6.283,0)" or a JSON file.
        #[arg(long, allow_hyphen_values = true)]
        inputs: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long = "T")]
        horizon: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Integration step.
    #[arg(long, allow_hyphen_values = true)]
    step: Option<f64>,
    /// Numerical tolerance of the task.
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "NONHOLO_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

struct Settings {
    system: SystemModel,
    step: Option<f64>,
    tol: Option<f64>,
    seed: u64,
    out: PathBuf,
    format: Format,
}

fn positive(name: &str, v: Option<f64>) -> Result<Option<f64>> {
    if let Some(x) = v {
        ensure!(x > 0.0 && x.is_finite(), "{name} must be positive and finite, got {x}");
    }
    Ok(v)
}

fn settings(cfg: &RunConfig, common: &Common) -> Result<Settings> {
    let system = cfg.system.build()?;
    Ok(Settings {
        system,
        step: positive("--step", common.step.or(cfg.task.step))?,
        tol: positive("--tol", common.tol.or(cfg.task.tol))?,
        seed: common.seed.or(cfg.task.seed).unwrap_or(0),
        out: common.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        format: common.format.or(cfg.output.format).unwrap_or(Format::Both),
    })
}

fn state(name: &str, v: Option<Vec<f64>>, fallback: Option<&Vec<f64>>, sys: &SystemModel) -> Result<Vec<f64>> {
    let n = sys.state_dim();
    let v = v.or_else(|| fallback.cloned()).unwrap_or_else(|| vec![0.0; n]);
    ensure!(v.len() == n, "{name} needs {n} coordinates for {}, got {}", sys.name(), v.len());
    ensure!(v.iter().all(|x| x.is_finite()), "{name} has non-finite coordinates");
    Ok(v)
}

/// A validated task; running it can only fail for numerical reasons.
enum Job {
    Analyze { budget: ProbeBudget },
    Steer { from: Vec<f64>, to: Vec<f64>, horizon: f64 },
    Optimal { problem: ExtremalProblem, opts: ShootOptions },
    Simulate { from: Vec<f64>, inputs: InputSignal, horizon: f64, step: f64 },
}

fn prepare(command: Command) -> Result<(Settings, Job)> {
    let (path, common) = match &command {
        Command::Analyze { config, common }
        | Command::Steer { config, common, .. }
        | Command::Optimal { config, common, .. }
        | Command::Simulate { config, common, .. } => (config.clone(), common),
    };
    let cfg = config::load(&path)?;
    let s = settings(&cfg, common)?;
    let task = &cfg.task;
    let horizon = |flag: Option<f64>| -> Result<f64> { Ok(positive("--T", flag.or(task.horizon))?.unwrap_or(1.0)) };
    let job = match command {
        Command::Analyze { .. } => {
            let mut budget = task.probe.budget(s.seed, s.tol)?;
            if let Some(h) = s.step {
                let cells = 2.0 * budget.half_width / h;
                ensure!(cells.round() >= 1.0 && cells <= 4096.0, "--step {h} gives an unusable curl grid");
                budget.grid = cells.round() as usize + 1;
            }
            Job::Analyze { budget }
        }
        Command::Steer { to, from, horizon: t, .. } => {
            let to = to.or_else(|| task.to.clone()).context("steer needs --to or task.to")?;
            Job::Steer {
                from: state("--from", from, task.from.as_ref(), &s.system)?,
                to: state("--to", Some(to), None, &s.system)?,
                horizon: horizon(t)?,
            }
        }
        Command::Optimal { to, from, horizon: t, .. } => {
            let to = to.or_else(|| task.to.clone()).context("optimal needs --to or task.to")?;
            let horizon = horizon(t)?;
            if let Some(h) = s.step {
                step_count(horizon, h)?;
            }
            let from = state("--from", from, task.from.as_ref(), &s.system)?;
            let to = state("--to", Some(to), None, &s.system)?;
            let problem = ExtremalProblem::energy(s.system.clone(), from, to, horizon)?;
            let mut opts = ShootOptions { step: s.step, seed: s.seed, ..ShootOptions::default() };
            if let Some(t) = s.tol {
                opts.tol = t;
            }
            Job::Optimal { problem, opts }
        }
        Command::Simulate { inputs, from, horizon: t, .. } => {
            let horizon = horizon(t)?;
            let step = s.step.unwrap_or_else(|| default_step(horizon));
            step_count(horizon, step)?;
            let spec = inputs.or_else(|| task.inputs.clone()).context("simulate needs --inputs or task.inputs")?;
            Job::Simulate {
                from: state("--from", from, task.from.as_ref(), &s.system)?,
                inputs: inputs::resolve(&spec, s.system.n_inputs(), horizon)?,
                horizon,
                step,
            }
        }
    };
    Ok((s, job))
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    system: &'a str,
    seed: u64,
    report: ControllabilityReport,
}

#[derive(Serialize)]
struct SteerOutput<'a> {
    system: &'a str,
    from: Vec<f64>,
    to: Vec<f64>,
    plan: SteeringPlan,
    cost: f64,
    verification: Verification,
}

#[derive(Serialize)]
struct OptimalOutput<'a> {
    system: &'a str,
    from: &'a [f64],
    to: &'a [f64],
    horizon: f64,
    seed: u64,
    solution: SolutionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    oscillator: Option<OscillatorReduction>,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    system: &'a str,
    horizon: f64,
    step: f64,
    initial: &'a [f64],
    r#final: &'a [f64],
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = nonholo::json::to_string(value)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn write_csv(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn execute(s: Settings, job: Job) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&s.out).with_context(|| format!("cannot create {}", s.out.display()))?;
    let name = s.system.name();
    let mut files = Vec::new();
    match job {
        Job::Analyze { budget } => {
            let report = classify(&s.system, &budget)?;
            println!("verdict: {:?}", report.verdict);
            files.push(write_json(&s.out, "report.json", &AnalyzeOutput { system: name, seed: s.seed, report })?);
        }
        Job::Steer { from, to, horizon } => {
            let plan = steering::plan(&s.system, &from, &to, horizon)?;
            let mut verification = steering::verify_plan(&s.system, &plan, &from)?;
            if let Some(tol) = s.tol {
                verification.tolerance = tol;
                verification.pass = verification.error < tol;
            }
            if s.format.csv() {
                let duration = plan.duration();
                let requested = s.step.unwrap_or(duration / steering::VERIFY_STEPS as f64);
                let step = duration / (duration / requested).ceil();
                let traj = simulate(&s.system, &plan.signal()?, &from, duration, step)?;
                files.push(write_csv(&s.out, "trajectory.csv", |w| traj.write_csv(w))?);
            }
            let pass = verification.pass;
            let error = verification.error;
            println!("method: {}, verification error {error:e}", plan.method);
            let cost = plan.cost();
            let out = SteerOutput { system: name, from, to, plan, cost, verification };
            if s.format.json() {
                files.push(write_json(&s.out, "plan.json", &out)?);
            }
            if !pass {
                bail!("plan verification failed: endpoint error {error:e} exceeds {:e}", out.verification.tolerance);
            }
        }
        Job::Optimal { problem, opts } => {
            let sol = shoot(&problem, &opts)?;
            let oscillator = match &s.system {
                SystemModel::GeneralR2 { .. } | SystemModel::Classic => reduce_oscillator(&sol).ok(),
                _ => None,
            };
            println!("lambda {:e}, cost {:e}, residual {:e}", sol.lambda, sol.cost, sol.residual);
            if s.format.json() {
                let out = OptimalOutput {
                    system: name,
                    from: &problem.from,
                    to: &problem.to,
                    horizon: problem.horizon,
                    seed: s.seed,
                    solution: sol.summary(),
                    oscillator,
                };
                files.push(write_json(&s.out, "solution.json", &out)?);
            }
            if s.format.csv() {
                files.push(write_csv(&s.out, "trajectory.csv", |w| sol.trajectory.write_csv(w))?);
            }
        }
        Job::Simulate { from, inputs, horizon, step } => {
            let traj = simulate(&s.system, &inputs, &from, horizon, step)?;
            if s.format.csv() {
                files.push(write_csv(&s.out, "trajectory.csv", |w| traj.write_csv(w))?);
            }
            if s.format.json() {
                let out = SimulateOutput { system: name, horizon, step, initial: &from, r#final: traj.final_state() };
                files.push(write_json(&s.out, "summary.json", &out)?);
            }
        }
    }
    Ok(files)
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .or_else(|| info.payload().downcast_ref::<&str>().copied())
            .unwrap_or("unknown");
        eprintln!("error: internal failure: {}", msg.replace('\n', " "));
    }));
    let (settings, job) = match prepare(cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            return ExitCode::from(2);
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute(settings, job))) {
        Ok(Ok(files)) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}
