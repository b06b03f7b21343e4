//! State discretization and the tabular Q-learning agent.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BIN_COUNT: usize = 10;

/// Value range and bin count for one state variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl BinSpec {
    pub fn new(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Config(format!(
                "bin bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if count < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {count}")));
        }
        Ok(Self {
            lower,
            upper,
            count,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// The `count - 1` interior edges `lower + k·w`.
    pub fn edges(&self) -> Vec<f64> {
        let w = self.width() / self.count as f64;
        (1..self.count).map(|k| self.lower + k as f64 * w).collect()
    }

    pub fn bin(&self, value: f64) -> usize {
        to_bin(value, self.lower, self.upper, self.count)
    }
}

/// Index of the left-closed cell containing `value`. The first cell extends to
/// −∞ and the last to +∞, so every real maps somewhere.
pub fn to_bin(value: f64, lo: f64, hi: f64, n: usize) -> usize {
    let w = (hi - lo) / n as f64;
    (1..n).take_while(|&k| value >= lo + k as f64 * w).count()
}

/// Positional concatenation of four decimal bin indices (x, ẋ, θ, θ̇).
pub fn encode(bins: [usize; 4]) -> Result<usize> {
    bins.iter().try_fold(0, |acc, &b| {
        if b >= 10 {
            Err(Error::Domain(format!("bin index {b} is outside [0, 10)")))
        } else {
            Ok(acc * 10 + b)
        }
    })
}

/// Bins for x, ẋ, θ and θ̇, ten per variable.
pub fn default_bins() -> [BinSpec; 4] {
    let b = |lower, upper| BinSpec {
        lower,
        upper,
        count: DEFAULT_BIN_COUNT,
    };
    [
        b(-2.4, 2.4),
        b(-1.0, 1.0),
        b((90.0 - 12.0) / 180.0 * PI, (90.0 + 12.0) / 180.0 * PI),
        b(-2.0, 2.0),
    ]
}

/// Maps continuous observations to dense state ids by mixed-radix
/// concatenation of per-variable bin indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    specs: Vec<BinSpec>,
    edges: Vec<Vec<f64>>,
}

impl Discretizer {
    pub fn new(specs: Vec<BinSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("discretizer needs at least one variable".into()));
        }
        for s in &specs {
            BinSpec::new(s.lower, s.upper, s.count)?;
        }
        let edges = specs.iter().map(BinSpec::edges).collect();
        Ok(Self { specs, edges })
    }

    pub fn specs(&self) -> &[BinSpec] {
        &self.specs
    }

    pub fn n_states(&self) -> usize {
        self.specs.iter().map(|s| s.count).product()
    }

    pub fn bins(&self, observation: &[f64]) -> Vec<usize> {
        observation
            .iter()
            .zip(&self.edges)
            .map(|(v, e)| e.partition_point(|edge| *edge <= *v))
            .collect()
    }

    pub fn encode_bins(&self, bins: &[usize]) -> Result<usize> {
        if bins.len() != self.specs.len() {
            return Err(Error::Shape(format!(
                "{} bin indices for {} variables",
                bins.len(),
                self.specs.len()
            )));
        }
        bins.iter().zip(&self.specs).try_fold(0, |acc, (&b, s)| {
            if b >= s.count {
                Err(Error::Domain(format!(
                    "bin index {b} is outside [0, {})",
                    s.count
                )))
            } else {
                Ok(acc * s.count + b)
            }
        })
    }

    pub fn state_id(&self, observation: &[f64]) -> Result<usize> {
        if observation.len() != self.specs.len() {
            return Err(Error::Shape(format!(
                "observation has {} components, discretizer expects {}",
                observation.len(),
                self.specs.len()
            )));
        }
        self.encode_bins(&self.bins(observation))
    }
}

impl Default for Discretizer {
    fn default() -> Self {
        Self::new(default_bins().to_vec()).expect("default bins are valid")
    }
}

/// Q-learning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub learning_rate: f64,
    pub discount_factor: f64,
    pub exploration_rate: f64,
    pub exploration_decay_rate: f64,
    /// Decay ε once per episode instead of once per step.
    #[serde(default)]
    pub decay_per_episode: bool,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            discount_factor: 1.0,
            exploration_rate: 0.5,
            exploration_decay_rate: 0.99,
            decay_per_episode: false,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("learning_rate", self.learning_rate, self.learning_rate > 0.0 && self.learning_rate <= 1.0),
            ("discount_factor", self.discount_factor, (0.0..=1.0).contains(&self.discount_factor)),
            ("exploration_rate", self.exploration_rate, (0.0..=1.0).contains(&self.exploration_rate)),
            (
                "exploration_decay_rate",
                self.exploration_decay_rate,
                self.exploration_decay_rate > 0.0 && self.exploration_decay_rate <= 1.0,
            ),
        ];
        match checks.iter().find(|c| !c.2) {
            Some((name, v, _)) => Err(Error::Config(format!("{name} = {v} is out of range"))),
            None => Ok(()),
        }
    }
}

/// Dense action-value table, row-major over (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    /// Entries drawn uniformly from [−1, 1].
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        Self {
            n_states,
            n_actions,
            values: (0..n_states * n_actions)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, state: usize) -> f64 {
        self.row(state)[self.argmax(state)]
    }

    /// Writes `state,action,value` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state", "action", "value"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.write_record([s.to_string(), a.to_string(), format!("{:?}", self.get(s, a))])?;
            }
        }
        out.flush().map_err(|e| Error::io("<q-table>", e))?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv). Every
    /// (state, action) cell of the given shape must appear exactly once.
    pub fn read_csv<R: Read>(r: R, n_states: usize, n_actions: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            state: usize,
            action: usize,
            value: f64,
        }
        let mut table = Self::zeros(n_states, n_actions);
        let mut seen = vec![false; n_states * n_actions];
        for row in csv::Reader::from_reader(r).deserialize() {
            let Row {
                state,
                action,
                value,
            } = row?;
            if state >= n_states || action >= n_actions {
                return Err(Error::Shape(format!(
                    "cell ({state}, {action}) outside {n_states}x{n_actions}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::Domain(format!("Q({state}, {action}) is not finite")));
            }
            let i = state * n_actions + action;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!("cell ({state}, {action}) repeated")));
            }
            table.values[i] = value;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Shape(format!(
                "cell ({}, {}) missing",
                i / n_actions,
                i % n_actions
            )));
        }
        Ok(table)
    }
}

/// ε-greedy choice: greedy with probability 1 − ε, uniform otherwise.
pub fn choose_action<R: Rng + ?Sized>(q: &QTable, state: usize, epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.n_actions())
    } else {
        q.argmax(state)
    }
}

/// One Q-learning backup. Terminal transitions do not bootstrap.
#[allow(clippy::too_many_arguments)]
pub fn update(
    q: &mut QTable,
    s: usize,
    a: usize,
    reward: f64,
    next: usize,
    done: bool,
    p: &LearnerParams,
) {
    let target = if done {
        reward
    } else {
        reward + p.discount_factor * q.max(next)
    };
    let old = q.get(s, a);
    q.set(s, a, old + p.learning_rate * (target - old));
}

pub fn decay(epsilon: f64, rate: f64) -> f64 {
    epsilon * rate
}

/// Tabular Q-learner with its own seeded random stream.
///
/// The stream is consumed first by table initialization, then by action
/// draws, so a seed fixes the whole training run.
#[derive(Debug, Clone)]
pub struct QLearner {
    params: LearnerParams,
    discretizer: Discretizer,
    table: QTable,
    epsilon: f64,
    rng: ChaCha8Rng,
    seed: u64,
}

impl QLearner {
    pub fn new(params: LearnerParams, discretizer: Discretizer, n_actions: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if n_actions == 0 {
            return Err(Error::Config("learner needs at least one action".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = QTable::random(discretizer.n_states(), n_actions, &mut rng);
        Ok(Self {
            epsilon: params.exploration_rate,
            params,
            discretizer,
            table,
            rng,
            seed,
        })
    }

    /// Default Cart-Pole learner: 10⁴ states, two actions.
    pub fn cartpole(params: LearnerParams, seed: u64) -> Result<Self> {
        Self::new(params, Discretizer::default(), 2, seed)
    }

    pub fn state_id(&self, observation: &[f64]) -> Result<usize> {
        self.discretizer.state_id(observation)
    }

    pub fn random_action(&mut self) -> usize {
        self.rng.random_range(0..self.table.n_actions())
    }

    pub fn choose_action(&mut self, state: usize) -> usize {
        choose_action(&self.table, state, self.epsilon, &mut self.rng)
    }

    pub fn update(&mut self, s: usize, a: usize, reward: f64, next: usize, done: bool) {
        update(&mut self.table, s, a, reward, next, done, &self.params);
    }

    pub fn decay(&mut self) {
        self.epsilon = decay(self.epsilon, self.params.exploration_decay_rate);
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut QTable {
        &mut self.table
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.discretizer
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
