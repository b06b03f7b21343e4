//! Training loop, repeated experiments, parameter sweeps and learning-curve
//! aggregation.
//!
//! Repeats of an experiment and points of a sweep are independent: each owns
//! a private environment and learner. With the `parallel` feature they run on
//! the rayon pool; results are always assembled in repeat/grid order, so the
//! output does not depend on the execution mode.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::agent::{LearnerParams, QLearner};
use crate::cartpole::{make_cartpole_env, DEFAULT_FORCE};
use crate::cosim::Backend;
use crate::env::{EnvConfig, ModelEnv, Task};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_STEPS: usize = 200;
pub const SMOOTHING_WINDOW: usize = 20;

/// Sequential or data-parallel execution of independent runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when built with the `parallel` feature and falls
    /// back to sequential execution otherwise.
    #[default]
    Parallel,
}

impl Execution {
    /// Maps `f` over `items` keeping their order.
    pub fn map<I, O, F>(self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.into_par_iter().map(f).collect(),
            _ => items.into_iter().map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub n_episodes: usize,
    pub max_steps: usize,
    /// Print a text render of the environment before every step.
    pub visualize: bool,
    pub record_trajectories: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            n_episodes: 100,
            max_steps: DEFAULT_MAX_STEPS,
            visualize: false,
            record_trajectories: false,
        }
    }
}

/// One environment step as seen by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub observation: Vec<f64>,
    pub inputs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub episode_lengths: Vec<usize>,
    pub wall_time: f64,
    pub steps_total: u64,
    /// Per-episode step records; empty unless trajectories were requested.
    pub trajectories: Vec<Vec<TrajectoryRow>>,
}

/// Trains `learner` in `env` for `n_episodes` episodes of at most
/// `max_steps` steps.
pub fn train<B: Backend, T: Task>(
    env: &mut ModelEnv<B, T>,
    learner: &mut QLearner,
    n_episodes: usize,
    max_steps: usize,
    visualize: bool,
) -> Result<TrainResult> {
    train_with(
        env,
        learner,
        &TrainOptions {
            n_episodes,
            max_steps,
            visualize,
            record_trajectories: false,
        },
    )
}

pub fn train_with<B: Backend, T: Task>(
    env: &mut ModelEnv<B, T>,
    learner: &mut QLearner,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    if opts.max_steps == 0 {
        return Err(Error::Config("max_steps must be >= 1".into()));
    }
    let start = Instant::now();
    let per_episode_decay = learner.params().decay_per_episode;
    let mut lengths = Vec::with_capacity(opts.n_episodes);
    let mut trajectories = Vec::new();
    let mut steps_total = 0u64;

    for _ in 0..opts.n_episodes {
        let initial = env.reset()?;
        let mut state = learner.state_id(&initial)?;
        let mut action = learner.random_action();
        let mut trajectory = Vec::new();

        for step in 1..=opts.max_steps {
            if opts.visualize {
                println!("{}", env.render()?);
            }
            let res = env.step(action)?;
            let next = learner.state_id(&res.observation)?;
            learner.update(state, action, res.reward, next, res.done);
            action = learner.choose_action(next);
            if !per_episode_decay {
                learner.decay();
            }
            if opts.record_trajectories {
                trajectory.push(TrajectoryRow {
                    t: env.time(),
                    observation: res.observation.to_vec(),
                    inputs: env.last_inputs().to_vec(),
                    reward: res.reward,
                    done: res.done,
                });
            }
            state = next;
            if res.done || step == opts.max_steps {
                lengths.push(step);
                steps_total += step as u64;
                break;
            }
        }
        if per_episode_decay {
            learner.decay();
        }
        if opts.record_trajectories {
            trajectories.push(trajectory);
        }
    }

    Ok(TrainResult {
        episode_lengths: lengths,
        wall_time: start.elapsed().as_secs_f64(),
        steps_total,
        trajectories,
    })
}

/// Everything needed to reproduce one Cart-Pole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub env_config: EnvConfig,
    pub force_magnitude: f64,
    pub learner: LearnerParams,
    pub n_repeats: usize,
    pub n_episodes: usize,
    pub max_steps: usize,
    pub base_seed: u64,
    pub record_trajectories: bool,
    /// Print a render before every step; forces sequential execution so the
    /// output of different repeats does not interleave.
    pub visualize: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            env_config: crate::cartpole::default_config(),
            force_magnitude: DEFAULT_FORCE,
            learner: LearnerParams::default(),
            n_repeats: 5,
            n_episodes: 100,
            max_steps: DEFAULT_MAX_STEPS,
            base_seed: 0,
            record_trajectories: false,
            visualize: false,
        }
    }
}

impl ExperimentSpec {
    pub fn seed_for(&self, repeat: usize) -> u64 {
        self.base_seed.wrapping_add(repeat as u64)
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            n_episodes: self.n_episodes,
            max_steps: self.max_steps,
            visualize: self.visualize,
            record_trajectories: self.record_trajectories,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    /// `n_repeats × n_episodes` episode lengths.
    pub lengths: Vec<Vec<usize>>,
    pub exec_times: Vec<f64>,
    pub steps_total: Vec<u64>,
    pub seeds: Vec<u64>,
    /// Indexed `[repeat][episode]`; empty unless requested.
    pub trajectories: Vec<Vec<Vec<TrajectoryRow>>>,
}

impl ExperimentResult {
    pub fn lengths_f64(&self) -> Vec<Vec<f64>> {
        self.lengths
            .iter()
            .map(|row| row.iter().map(|&l| l as f64).collect())
            .collect()
    }

    /// Mean over repeats of the smoothed learning curves.
    pub fn average_smoothed(&self) -> Result<Vec<f64>> {
        average_smoothed(&self.lengths_f64())
    }

    /// Last value of the average smoothed curve, if there are episodes.
    pub fn final_smoothed(&self) -> Option<f64> {
        self.average_smoothed().ok()?.last().copied()
    }

    pub fn per_step_time(&self) -> Result<f64> {
        per_step_time(&self.exec_times, &self.steps_total)
    }

    pub fn wall_time(&self) -> f64 {
        self.exec_times.iter().sum()
    }

    /// Median of the last `n` episode lengths pooled over repeats.
    pub fn tail_median(&self, n: usize) -> Option<f64> {
        let mut tail: Vec<f64> = self
            .lengths
            .iter()
            .flat_map(|row| row[row.len().saturating_sub(n)..].iter().map(|&l| l as f64))
            .collect();
        median(&mut tail)
    }
}

pub fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    })
}

/// Repeats training `n_repeats` times with fresh learners seeded
/// `base_seed + i`, each repeat starting from a freshly reset environment.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<ExperimentResult> {
    let cfg = spec.env_config.clone();
    let force = spec.force_magnitude;
    run_experiment_with(spec, exec, || make_cartpole_env(cfg.clone(), force))
}

/// [`run_experiment`] over an arbitrary two-action environment factory.
///
/// Sequential execution builds one environment and resets it between
/// repeats; parallel execution gives every repeat its own instance.
pub fn run_experiment_with<B, T, F>(
    spec: &ExperimentSpec,
    exec: Execution,
    make_env: F,
) -> Result<ExperimentResult>
where
    B: Backend,
    T: Task,
    F: Fn() -> Result<ModelEnv<B, T>> + Sync + Send,
{
    if spec.n_repeats == 0 {
        return Err(Error::Config("n_repeats must be >= 1".into()));
    }
    spec.learner.validate()?;
    let opts = spec.train_options();
    let seeds: Vec<u64> = (0..spec.n_repeats).map(|i| spec.seed_for(i)).collect();

    let run_one = |env: &mut ModelEnv<B, T>, seed: u64| -> Result<TrainResult> {
        let mut learner = QLearner::cartpole(spec.learner, seed)?;
        train_with(env, &mut learner, &opts)
    };

    let exec = if spec.visualize { Execution::Sequential } else { exec };
    let outcomes: Vec<Result<TrainResult>> = match exec {
        Execution::Sequential => {
            let mut env = make_env()?;
            seeds
                .iter()
                .map(|&seed| {
                    let out = run_one(&mut env, seed);
                    env.reset()?;
                    out
                })
                .collect()
        }
        Execution::Parallel => exec.map(seeds.clone(), |seed| {
            let mut env = make_env()?;
            run_one(&mut env, seed)
        }),
    };

    let mut result = ExperimentResult {
        spec: spec.clone(),
        lengths: Vec::with_capacity(spec.n_repeats),
        exec_times: Vec::with_capacity(spec.n_repeats),
        steps_total: Vec::with_capacity(spec.n_repeats),
        seeds,
        trajectories: Vec::new(),
    };
    let mut failures = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => {
                result.lengths.push(r.episode_lengths);
                result.exec_times.push(r.wall_time);
                result.steps_total.push(r.steps_total);
                if spec.record_trajectories {
                    result.trajectories.push(r.trajectories);
                }
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::RepeatsFailed {
            total: spec.n_repeats,
            failures,
        });
    }
    Ok(result)
}

/// Trailing moving average; the first `window - 1` outputs average the
/// available prefix.
pub fn moving_average(xs: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Domain("moving-average window must be >= 1".into()));
    }
    Ok((0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &xs[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Smooths every row with a window of 20 and averages the rows elementwise.
pub fn average_smoothed(lengths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = lengths
        .first()
        .ok_or_else(|| Error::Shape("no rows to average".into()))?;
    if let Some(row) = lengths.iter().find(|r| r.len() != first.len()) {
        return Err(Error::Shape(format!(
            "ragged matrix: rows of length {} and {}",
            first.len(),
            row.len()
        )));
    }
    let mut acc = vec![0.0; first.len()];
    for row in lengths {
        for (a, v) in acc.iter_mut().zip(moving_average(row, SMOOTHING_WINDOW)?) {
            *a += v;
        }
    }
    let n = lengths.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Pooled wall time per simulation step.
pub fn per_step_time(wall_times: &[f64], steps: &[u64]) -> Result<f64> {
    let total_steps: u64 = steps.iter().sum();
    if total_steps == 0 {
        return Err(Error::UndefinedMetric(
            "seconds per step with zero simulated steps".into(),
        ));
    }
    Ok(wall_times.iter().sum::<f64>() / total_steps as f64)
}

/// The four parameter studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sweep {
    Force,
    Mass,
    Reward,
    TimeStep,
}

impl Sweep {
    pub const ALL: [Sweep; 4] = [Sweep::Force, Sweep::Mass, Sweep::Reward, Sweep::TimeStep];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Force => "force",
            Sweep::Mass => "mass",
            Sweep::Reward => "reward",
            Sweep::TimeStep => "timestep",
        }
    }

    pub fn default_episodes(self) -> usize {
        match self {
            Sweep::Mass => 200,
            _ => 100,
        }
    }

    pub fn default_repeats(self) -> usize {
        5
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sweep::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown sweep '{s}' (expected force, mass, reward or timestep)"
                ))
            })
    }
}

/// Parameter values studied by each sweep.
pub struct SweepGrid;

impl SweepGrid {
    pub const FORCES: [f64; 3] = [5.0, 11.0, 17.0];
    /// (m_cart, m_pole) in kg.
    pub const MASSES: [(f64, f64); 5] = [(1.0, 10.0), (5.0, 10.0), (10.0, 10.0), (10.0, 5.0), (10.0, 1.0)];
    /// (positive, negative) rewards.
    pub const REWARDS: [(f64, f64); 3] = [(1.0, -200.0), (1.0, -100.0), (1.0, -50.0)];
    pub const TIME_STEPS: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

    /// Labelled experiment specs for `sweep`, each a copy of `base` with the
    /// swept parameter replaced.
    pub fn points(sweep: Sweep, base: &ExperimentSpec) -> Vec<GridPoint> {
        let with = |label: String, edit: &dyn Fn(&mut ExperimentSpec)| {
            let mut spec = base.clone();
            edit(&mut spec);
            GridPoint { label, spec }
        };
        match sweep {
            Sweep::Force => Self::FORCES
                .iter()
                .map(|&f| with(format!("{f}"), &|s| s.force_magnitude = f))
                .collect(),
            Sweep::Mass => Self::MASSES
                .iter()
                .map(|&(mc, mp)| {
                    with(format!("{mc};{mp}"), &|s| {
                        s.env_config.model_parameters.insert("m_cart".into(), mc);
                        s.env_config.model_parameters.insert("m_pole".into(), mp);
                    })
                })
                .collect(),
            Sweep::Reward => Self::REWARDS
                .iter()
                .map(|&(pos, neg)| {
                    with(format!("{pos};{neg}"), &|s| {
                        s.env_config.positive_reward = pos;
                        s.env_config.negative_reward = neg;
                    })
                })
                .collect(),
            Sweep::TimeStep => Self::TIME_STEPS
                .iter()
                .map(|&dt| with(format!("{dt}"), &|s| s.env_config.time_step = dt))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub sweep: Sweep,
    /// (grid label, result) in grid order.
    pub points: Vec<(String, ExperimentResult)>,
}

impl SweepResult {
    pub fn get(&self, label: &str) -> Option<&ExperimentResult> {
        self.points
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, r)| r)
    }
}

/// Runs `sweep` around `base`. `n_episodes` / `n_repeats` override the
/// sweep defaults when given; every grid point uses `base.base_seed`.
pub fn run_sweep(
    sweep: Sweep,
    base: &ExperimentSpec,
    n_episodes: Option<usize>,
    n_repeats: Option<usize>,
    exec: Execution,
) -> Result<SweepResult> {
    let mut base = base.clone();
    base.n_episodes = n_episodes.unwrap_or(sweep.default_episodes());
    base.n_repeats = n_repeats.unwrap_or(sweep.default_repeats());
    let grid = SweepGrid::points(sweep, &base);
    let results = exec.map(grid, |p| {
        run_experiment(&p.spec, exec).map(|r| (p.label, r))
    });
    Ok(SweepResult {
        sweep,
        points: results.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn moving_average_cases() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 1.5, 2.5, 3.5]);
        let xs = [3.0, -1.0, 7.5, 0.25];
        assert_eq!(moving_average(&xs, 1).unwrap(), xs.to_vec());
        for v in moving_average(&[4.2; 50], 20).unwrap() {
            assert_relative_eq!(v, 4.2, max_relative = 1e-14);
        }
        assert!(moving_average(&[], 20).unwrap().is_empty());
        assert!(moving_average(&[1.0], 0).is_err());
    }

    #[test]
    fn average_smoothed_cases() {
        let row: Vec<f64> = (0..40).map(|i| (i * i % 17) as f64).collect();
        let smooth = moving_average(&row, 20).unwrap();
        assert_eq!(average_smoothed(std::slice::from_ref(&row)).unwrap(), smooth);
        assert_eq!(average_smoothed(&[row.clone(), row.clone()]).unwrap(), smooth);
        for v in average_smoothed(&[vec![3.0; 30], vec![8.0; 30]]).unwrap() {
            assert_relative_eq!(v, 5.5, max_relative = 1e-14);
        }
        assert!(matches!(average_smoothed(&[vec![1.0; 3], vec![1.0; 4]]), Err(Error::Shape(_))));
        assert!(average_smoothed(&[]).is_err());
    }

    #[test]
    fn per_step_time_cases() {
        assert_relative_eq!(per_step_time(&[10.0], &[1000]).unwrap(), 0.01);
        assert_relative_eq!(per_step_time(&[5.0, 5.0], &[500, 500]).unwrap(), 0.01);
        assert!(matches!(per_step_time(&[1.0], &[0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn grids_match_study_values() {
        let base = ExperimentSpec::default();
        let labels = |s| {
            SweepGrid::points(s, &base)
                .into_iter()
                .map(|p| p.label)
                .collect::<Vec<_>>()
        };
        assert_eq!(labels(Sweep::Force), ["5", "11", "17"]);
        assert_eq!(labels(Sweep::Mass), ["1;10", "5;10", "10;10", "10;5", "10;1"]);
        assert_eq!(labels(Sweep::Reward), ["1;-200", "1;-100", "1;-50"]);
        assert_eq!(labels(Sweep::TimeStep), ["0.01", "0.05", "0.1", "0.5", "1"]);

        let mass = SweepGrid::points(Sweep::Mass, &base);
        assert_eq!(mass[3].spec.env_config.model_parameters["m_cart"], 10.0);
        assert_eq!(mass[3].spec.env_config.model_parameters["m_pole"], 5.0);
        assert_eq!(mass[3].spec.force_magnitude, 11.0);
        let dt = SweepGrid::points(Sweep::TimeStep, &base);
        assert_eq!(dt[4].spec.env_config.time_step, 1.0);
        assert_eq!(dt[4].spec.env_config.negative_reward, -100.0);
    }

    #[test]
    fn sweep_names_round_trip() {
        for s in Sweep::ALL {
            assert_eq!(s.name().parse::<Sweep>().unwrap(), s);
        }
        assert!("speed".parse::<Sweep>().is_err());
        assert_eq!(Sweep::Mass.default_episodes(), 200);
        assert_eq!(Sweep::Force.default_episodes(), 100);
    }

    proptest! {
        #[test]
        fn moving_average_is_affine(
            xs in prop::collection::vec(-100f64..100.0, 0..60),
            w in 1usize..25, c in -50f64..50.0, k in -4f64..4.0,
        ) {
            let base = moving_average(&xs, w).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| k * x + c).collect();
            let out = moving_average(&shifted, w).unwrap();
            prop_assert_eq!(out.len(), xs.len());
            for (o, b) in out.iter().zip(&base) {
                prop_assert!((o - (k * b + c)).abs() <= 1e-9 * (1.0 + o.abs()));
            }
        }
    }
}
