//! Environment contract shared by every backend-driven environment.
//!
//! [`ModelEnv`] owns the logic common to all co-simulation environments:
//! configuration checks, the reset/step lifecycle, the simulation clock and the
//! default reward policy. Model-specific behavior (action mapping, termination,
//! spaces, reward overrides) lives behind the [`Task`] trait.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::cosim::{first_duplicate, Backend};
use crate::error::{Error, Result};

fn default_positive_reward() -> f64 {
    1.0
}

fn default_negative_reward() -> f64 {
    -100.0
}

fn one_or_many<'de, D>(de: D) -> std::result::Result<Vec<String>, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// Model-specific environment configuration.
///
/// Deserializes from JSON with the keys `model_input_names` (a string or a
/// list), `model_output_names`, `model_parameters`, `time_step`,
/// `positive_reward` and `negative_reward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub model_input_names: Vec<String>,
    pub model_output_names: Vec<String>,
    #[serde(default)]
    pub model_parameters: BTreeMap<String, f64>,
    pub time_step: f64,
    #[serde(default = "default_positive_reward")]
    pub positive_reward: f64,
    #[serde(default = "default_negative_reward")]
    pub negative_reward: f64,
}

impl EnvConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("EnvConfig is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::Config(format!(
                "time_step must be > 0, got {}",
                self.time_step
            )));
        }
        for (kind, names) in [
            ("model_input_names", &self.model_input_names),
            ("model_output_names", &self.model_output_names),
        ] {
            if names.is_empty() {
                return Err(Error::Config(format!("{kind} must not be empty")));
            }
            if let Some(dup) = first_duplicate(names) {
                return Err(Error::Config(format!("{kind} lists '{dup}' twice")));
            }
        }
        let inputs: BTreeSet<&str> = self.model_input_names.iter().map(String::as_str).collect();
        let outputs: BTreeSet<&str> = self.model_output_names.iter().map(String::as_str).collect();
        if let Some(n) = inputs.intersection(&outputs).next() {
            return Err(Error::Config(format!(
                "'{n}' appears in both model_input_names and model_output_names"
            )));
        }
        if let Some(n) = self
            .model_parameters
            .keys()
            .find(|k| inputs.contains(k.as_str()) || outputs.contains(k.as_str()))
        {
            return Err(Error::Config(format!(
                "model parameter '{n}' collides with an input or output name"
            )));
        }
        if let Some((k, v)) = self.model_parameters.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("model parameter '{k}' = {v} is not finite")));
        }
        Ok(())
    }
}

/// Action or observation space descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum Space {
    Discrete { n: usize },
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl Space {
    pub fn discrete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("discrete space needs n >= 1".into()));
        }
        Ok(Space::Discrete { n })
    }

    pub fn boxed(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::Shape(format!(
                "box bounds have lengths {} and {}",
                low.len(),
                high.len()
            )));
        }
        if let Some(i) = (0..low.len()).find(|&i| !(low[i] <= high[i])) {
            return Err(Error::Config(format!(
                "box bound {i}: low {} > high {}",
                low[i], high[i]
            )));
        }
        Ok(Space::Box { low, high })
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (Space::Discrete { n }, Action::Discrete(a)) => a < n,
            (Space::Box { low, high }, Action::Continuous(v)) => {
                v.len() == low.len()
                    && v.iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (lo, hi))| lo <= x && x <= hi)
            }
            _ => false,
        }
    }

    /// Number of dimensions (1 for discrete spaces).
    pub fn dim(&self) -> usize {
        match self {
            Space::Discrete { .. } => 1,
            Space::Box { low, .. } => low.len(),
        }
    }
}

/// An element of an action space.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl From<usize> for Action {
    fn from(a: usize) -> Self {
        Action::Discrete(a)
    }
}

impl From<Vec<f64>> for Action {
    fn from(v: Vec<f64>) -> Self {
        Action::Continuous(v)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Discrete(a) => write!(f, "{a}"),
            Action::Continuous(v) => write!(f, "{v:?}"),
        }
    }
}

/// Observed outputs, ordered as `model_output_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Simulation(format!(
                "observation component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// `negative_reward` on termination, `positive_reward` otherwise.
pub fn default_reward(done: bool, cfg: &EnvConfig) -> f64 {
    if done {
        cfg.negative_reward
    } else {
        cfg.positive_reward
    }
}

/// Model-specific hooks of an environment.
pub trait Task {
    fn action_space(&self) -> Space;

    fn observation_space(&self) -> Space;

    /// Maps a validated action to backend inputs.
    fn inputs_for(&self, action: &Action) -> Vec<f64>;

    fn is_done(&self, observation: &[f64]) -> bool;

    fn reward(&self, done: bool, cfg: &EnvConfig) -> f64 {
        default_reward(done, cfg)
    }

    fn render(&self, names: &[String], observation: &[f64]) -> String {
        names
            .iter()
            .zip(observation)
            .map(|(n, v)| format!("{n}={v:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A gym-style environment over a co-simulation [`Backend`].
///
/// One driver per instance; instances are independent and can live on
/// different threads.
#[derive(Debug, Clone)]
pub struct ModelEnv<B, T> {
    config: EnvConfig,
    backend: B,
    task: T,
    action_space: Space,
    observation_space: Space,
    observation: Option<Observation>,
    last_inputs: Vec<f64>,
    steps: u64,
    done: bool,
}

impl<B: Backend, T: Task> ModelEnv<B, T> {
    pub fn new(config: EnvConfig, backend: B, task: T) -> Result<Self> {
        config.validate()?;
        let desc = backend.descriptor();
        if config.model_input_names != desc.input_names {
            return Err(Error::Config(format!(
                "model_input_names {:?} do not match backend inputs {:?}",
                config.model_input_names, desc.input_names
            )));
        }
        if config.model_output_names != desc.output_names {
            return Err(Error::Config(format!(
                "model_output_names {:?} do not match backend outputs {:?}",
                config.model_output_names, desc.output_names
            )));
        }
        if let Some(k) = config
            .model_parameters
            .keys()
            .find(|k| !desc.parameter_names.contains(k))
        {
            return Err(Error::Config(format!(
                "unknown model parameter '{k}'; backend accepts {:?}",
                desc.parameter_names
            )));
        }
        let action_space = task.action_space();
        let observation_space = task.observation_space();
        if let Space::Box { low, .. } = &observation_space {
            if low.len() != config.model_output_names.len() {
                return Err(Error::Shape(format!(
                    "observation space has {} dimensions, model has {} outputs",
                    low.len(),
                    config.model_output_names.len()
                )));
            }
        }
        let n_inputs = desc.input_names.len();
        Ok(Self {
            config,
            backend,
            task,
            action_space,
            observation_space,
            observation: None,
            last_inputs: vec![0.0; n_inputs],
            steps: 0,
            done: false,
        })
    }

    /// Re-initializes the backend and returns the initial observation.
    pub fn reset(&mut self) -> Result<Observation> {
        self.observation = None;
        self.backend
            .initialize(&self.config.model_parameters)
            .map_err(|e| match e {
                Error::Initialization(_) => e,
                other => Error::Initialization(other.to_string()),
            })?;
        let obs = self.read_outputs()?;
        self.last_inputs.iter_mut().for_each(|u| *u = 0.0);
        self.steps = 0;
        self.done = false;
        self.observation = Some(obs.clone());
        Ok(obs)
    }

    /// Applies `action` for one `time_step`.
    pub fn step(&mut self, action: impl Into<Action>) -> Result<StepResult> {
        let action = action.into();
        if self.observation.is_none() {
            return Err(Error::State("step called before reset".into()));
        }
        if self.done {
            return Err(Error::State("episode is over; call reset".into()));
        }
        if !self.action_space.contains(&action) {
            return Err(Error::Domain(format!(
                "action {action} is outside {:?}",
                self.action_space
            )));
        }
        let inputs = self.task.inputs_for(&action);
        self.backend.set_inputs(&inputs)?;
        self.backend.do_step(self.config.time_step)?;
        let observation = self.read_outputs()?;
        let done = self.task.is_done(&observation);
        let reward = self.task.reward(done, &self.config);
        self.last_inputs = inputs;
        self.steps += 1;
        self.done = done;
        self.observation = Some(observation.clone());
        Ok(StepResult {
            observation,
            reward,
            done,
        })
    }

    /// One-line text dump of the current observation.
    pub fn render(&self) -> Result<String> {
        let obs = self
            .observation
            .as_ref()
            .ok_or_else(|| Error::State("render called before reset".into()))?;
        Ok(self.task.render(&self.config.model_output_names, obs))
    }

    /// Nothing to release for text rendering; kept for interface parity.
    pub fn close(&mut self) {}

    fn read_outputs(&self) -> Result<Observation> {
        let out = self.backend.get_outputs();
        if out.len() != self.config.model_output_names.len() {
            return Err(Error::Shape(format!(
                "backend returned {} outputs, expected {}",
                out.len(),
                self.config.model_output_names.len()
            )));
        }
        Observation::new(out)
    }

    pub fn action_space(&self) -> &Space {
        &self.action_space
    }

    pub fn observation_space(&self) -> &Space {
        &self.observation_space
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn task(&self) -> &T {
        &self.task
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    /// Simulation clock in seconds since the last reset.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.config.time_step
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.observation.as_ref()
    }

    /// Inputs applied during the most recent step.
    pub fn last_inputs(&self) -> &[f64] {
        &self.last_inputs
    }

    /// Replaces the current observation after the backend state was edited
    /// directly (see [`crate::cartpole::CartPoleEnv::set_state`]).
    pub(crate) fn resync(&mut self) -> Result<()> {
        let obs = self.read_outputs()?;
        self.done = self.task.is_done(&obs);
        self.observation = Some(obs);
        Ok(())
    }
}
