//! Gym-style reinforcement-learning environments driven by a co-simulation
//! backend, a native Cart-Pole model, a tabular Q-learning agent and the
//! experiment harness used to study how physical and reward parameters shape
//! learning.
//!
//! The pieces compose like this:
//!
//! ```text
//! EnvConfig ──► ModelEnv<NativeBackend<CartPoleModel>, CartPoleTask>
//!                  │ reset / step / render
//!                  ▼
//!            QLearner (Discretizer + QTable, ε-greedy)
//!                  │
//!                  ▼
//!   train ─► run_experiment ─► run_sweep ─► CSV reports
//! ```

pub mod agent;
pub mod cartpole;
pub mod cli;
pub mod cosim;
pub mod env;
pub mod error;
pub mod experiment;
pub mod report;
pub mod validate;

pub use error::{Error, Result};
