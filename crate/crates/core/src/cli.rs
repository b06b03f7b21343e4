//! Command-line front end.
//!
//! Exit statuses: 0 on success, 1 on usage errors (nothing is written),
//! 2 on runtime or validation failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::agent::QLearner;
use crate::cartpole::{default_config, make_cartpole_env, DEFAULT_FORCE};
use crate::env::EnvConfig;
use crate::error::Result;
use crate::experiment::{
    run_experiment, run_sweep, train_with, Execution, ExperimentResult, ExperimentSpec, Sweep,
    TrainOptions,
};
use crate::report::{Report, QTABLE_FILE};
use crate::validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "cosim-gym", version, about = "Cart-Pole Q-learning over a co-simulation backend")]
pub struct CliInvocation {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Train a single agent and optionally dump its Q-table.
    Train(RunArgs),
    /// Repeat training with seeds seed, seed+1, ... and aggregate.
    Experiment(RunArgs),
    /// Run one of the canned parameter sweeps.
    Sweep {
        #[arg(long, value_parser = parse_sweep)]
        sweep: Sweep,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the physics, integrator and learner self-checks.
    Validate,
}

/// Overrides shared by the training subcommands. Unset flags keep the value
/// from `--config` (or the built-in default configuration).
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct RunArgs {
    /// Environment configuration as JSON.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Force magnitude applied by either action, N.
    #[arg(long, value_parser = positive)]
    pub force: Option<f64>,
    #[arg(long = "m-cart", value_parser = positive)]
    pub m_cart: Option<f64>,
    #[arg(long = "m-pole", value_parser = positive)]
    pub m_pole: Option<f64>,
    /// Initial pole angle in degrees from the +x axis (90 is upright).
    #[arg(long = "theta0-deg", value_parser = finite, allow_hyphen_values = true)]
    pub theta0_deg: Option<f64>,
    #[arg(long = "time-step", value_parser = positive)]
    pub time_step: Option<f64>,
    #[arg(long = "pos-reward", value_parser = finite, allow_hyphen_values = true)]
    pub pos_reward: Option<f64>,
    #[arg(long = "neg-reward", value_parser = finite, allow_hyphen_values = true)]
    pub neg_reward: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: Option<u64>,
    #[arg(long = "max-steps", value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the CSV files; nothing is written without it.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write one CSV per episode with every step.
    #[arg(long)]
    pub trajectory: bool,
    /// Print a text render of the state before every step.
    #[arg(long)]
    pub visualize: bool,
    /// Decay ε once per episode instead of once per step.
    #[arg(long = "decay-per-episode")]
    pub decay_per_episode: bool,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn finite(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    s.parse::<Sweep>().map_err(|e| e.to_string())
}

/// Parses `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> std::result::Result<CliInvocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    CliInvocation::try_parse_from(argv)
}

impl RunArgs {
    /// Builds the experiment description, loading `--config` and applying
    /// every override. The environment is constructed once so that invalid
    /// combinations fail here, before anything is written.
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let mut cfg = match &self.config {
            Some(path) => EnvConfig::from_json_file(path)?,
            None => default_config(),
        };
        let params = &mut cfg.model_parameters;
        if let Some(v) = self.m_cart {
            params.insert("m_cart".into(), v);
        }
        if let Some(v) = self.m_pole {
            params.insert("m_pole".into(), v);
        }
        if let Some(v) = self.theta0_deg {
            params.insert("theta_0".into(), v.to_radians());
        }
        if let Some(v) = self.time_step {
            cfg.time_step = v;
        }
        if let Some(v) = self.pos_reward {
            cfg.positive_reward = v;
        }
        if let Some(v) = self.neg_reward {
            cfg.negative_reward = v;
        }
        cfg.validate()?;

        let mut spec = ExperimentSpec {
            env_config: cfg,
            force_magnitude: self.force.unwrap_or(DEFAULT_FORCE),
            base_seed: self.seed,
            record_trajectories: self.trajectory,
            visualize: self.visualize,
            ..Default::default()
        };
        spec.learner.decay_per_episode = self.decay_per_episode;
        if let Some(n) = self.episodes {
            spec.n_episodes = n;
        }
        if let Some(n) = self.repeats {
            spec.n_repeats = n as usize;
        }
        if let Some(n) = self.max_steps {
            spec.max_steps = n as usize;
        }
        spec.learner.validate()?;
        make_cartpole_env(spec.env_config.clone(), spec.force_magnitude)?;
        Ok(spec)
    }
}

fn summary_line(label: &str, r: &ExperimentResult) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "{label}: final average smoothed length {}, {} s/step ({} repeats x {} episodes, {:.3} s)",
        fmt(r.final_smoothed()),
        r.per_step_time().map_or_else(|_| "n/a".to_string(), |v| format!("{v:.3e}")),
        r.lengths.len(),
        r.spec.n_episodes,
        r.wall_time()
    )
}

/// One training run. Kept apart from [`run_experiment`] so that the learned
/// Q-table is available for export.
fn train_once(spec: &ExperimentSpec) -> Result<(ExperimentResult, Vec<u8>)> {
    let mut env = make_cartpole_env(spec.env_config.clone(), spec.force_magnitude)?;
    let mut learner = QLearner::cartpole(spec.learner, spec.base_seed)?;
    let r = train_with(
        &mut env,
        &mut learner,
        &TrainOptions {
            n_episodes: spec.n_episodes,
            max_steps: spec.max_steps,
            visualize: spec.visualize,
            record_trajectories: spec.record_trajectories,
        },
    )?;
    let mut table = Vec::new();
    learner.table().write_csv(&mut table)?;
    let mut spec = spec.clone();
    spec.n_repeats = 1;
    let result = ExperimentResult {
        lengths: vec![r.episode_lengths],
        exec_times: vec![r.wall_time],
        steps_total: vec![r.steps_total],
        seeds: vec![learner.seed()],
        trajectories: if spec.record_trajectories { vec![r.trajectories] } else { Vec::new() },
        spec,
    };
    Ok((result, table))
}

fn execute(command: &Command) -> Result<Vec<String>> {
    let mut report = Report::new();
    let mut lines = Vec::new();
    let out = match command {
        Command::Validate => unreachable!("handled by run"),
        Command::Train(args) => {
            let spec = args.to_spec()?;
            let (result, table) = train_once(&spec)?;
            lines.push(summary_line("train", &result));
            report.add_experiment("train", "base", &result);
            report.add_file(QTABLE_FILE, table);
            &args.out
        }
        Command::Experiment(args) => {
            let spec = args.to_spec()?;
            let result = run_experiment(&spec, Execution::Parallel)?;
            lines.push(summary_line("experiment", &result));
            report.add_experiment("experiment", "base", &result);
            &args.out
        }
        Command::Sweep { sweep, run } => {
            let spec = run.to_spec()?;
            let exec = if spec.visualize { Execution::Sequential } else { Execution::Parallel };
            let result = run_sweep(*sweep, &spec, run.episodes, run.repeats.map(|n| n as usize), exec)?;
            for (label, r) in &result.points {
                lines.push(summary_line(&format!("{sweep} {label}"), r));
            }
            report.add_sweep(&result);
            &run.out
        }
    };
    if let Some(dir) = out {
        let written = report.write_to(dir)?;
        lines.push(format!("wrote {} files to {}", written.len(), dir.display()));
    }
    Ok(lines)
}

/// Runs a parsed invocation and returns the process exit status.
pub fn run(invocation: CliInvocation) -> i32 {
    match &invocation.command {
        Command::Validate => {
            let checks = validate::run_all();
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed == 0 {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        command => match execute(command) {
            Ok(lines) => {
                for l in lines {
                    println!("{l}");
                }
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
    }
}

/// Parses and runs; what the binary does.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(argv) {
        Ok(inv) => run(inv),
        Err(e) => {
            let _ = e.print();
            parse_error_status(&e)
        }
    }
}

/// `--help` and `--version` surface as parse "errors" that should exit 0.
pub fn parse_error_status(e: &clap::Error) -> i32 {
    if e.use_stderr() {
        EXIT_USAGE
    } else {
        EXIT_OK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<CliInvocation, clap::Error> {
        parse_args(std::iter::once("cosim-gym").chain(args.iter().copied()))
    }

    #[test]
    fn experiment_overrides() {
        let inv = parse(&[
            "experiment", "--episodes", "100", "--repeats", "5", "--force", "17", "--seed", "7",
            "--out", "r/",
        ])
        .unwrap();
        let Command::Experiment(args) = inv.command else { panic!() };
        assert_eq!(args.episodes, Some(100));
        assert_eq!(args.repeats, Some(5));
        assert_eq!(args.force, Some(17.0));
        assert_eq!(args.out, Some(PathBuf::from("r/")));
        let spec = args.to_spec().unwrap();
        assert_eq!((spec.base_seed, spec.force_magnitude, spec.n_repeats), (7, 17.0, 5));
    }

    #[test]
    fn sweep_requires_a_known_name() {
        let inv = parse(&["sweep", "--sweep", "force", "--out", "r/"]).unwrap();
        assert!(matches!(inv.command, Command::Sweep { sweep: Sweep::Force, .. }));
        assert!(parse(&["sweep", "--sweep", "gravity"]).is_err());
        assert!(parse(&["sweep"]).is_err());
    }

    #[test]
    fn usage_errors() {
        for bad in [
            &["train", "--bogus"][..],
            &["train", "--force"],
            &["train", "--force", "0"],
            &["train", "--m-cart", "-1"],
            &["train", "--time-step", "nan"],
            &["train", "--repeats", "0"],
            &["train", "--episodes", "-3"],
            &["frobnicate"],
            &[],
        ] {
            let e = parse(bad).unwrap_err();
            assert!(e.use_stderr(), "{bad:?}");
        }
    }

    #[test]
    fn degrees_become_radians() {
        let inv = parse(&["train", "--theta0-deg", "80", "--neg-reward", "-50"]).unwrap();
        let Command::Train(args) = inv.command else { panic!() };
        let spec = args.to_spec().unwrap();
        let th = spec.env_config.model_parameters["theta_0"];
        assert!((th - 80f64.to_radians()).abs() < 1e-15);
        assert_eq!(spec.env_config.negative_reward, -50.0);
    }

    #[test]
    fn zero_episodes_is_accepted() {
        let inv = parse(&["train", "--episodes", "0"]).unwrap();
        assert_eq!(run(inv), EXIT_OK);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(parse_error_status(&parse(&["--help"]).unwrap_err()), EXIT_OK);
        assert_eq!(parse_error_status(&parse(&["--version"]).unwrap_err()), EXIT_OK);
        assert_eq!(parse_error_status(&parse(&["train", "--nope"]).unwrap_err()), EXIT_USAGE);
    }
}
