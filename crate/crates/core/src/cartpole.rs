//! Cart-Pole physics and environment.
//!
//! The pole is a point-mass pendulum: the bob carries the whole pole mass and
//! sits at half the pole length above a frictionless pivot in the middle of
//! the cart, which moves on a frictionless 1-d track.
//!
//! Angles follow the convention of the observation vector: `theta` is
//! measured from the positive x-axis to the pole, so upright is `π/2` and a
//! pole with `theta < π/2` leans toward `+x`. Internally the equations use the
//! lean `ψ = π/2 − θ` (positive toward `+x`):
//!
//! ```text
//! ψ̈ = [g·sin ψ − cos ψ·(f + m_p·L·ψ̇²·sin ψ)/M] / [L·(1 − m_p·cos²ψ/M)]
//! ẍ = [f + m_p·L·(ψ̇²·sin ψ − ψ̈·cos ψ)] / M
//! θ̈ = −ψ̈
//! ```
//!
//! with `L = pole_length / 2` and `M = m_cart + m_pole`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::cosim::{BackendDescriptor, NativeBackend, OdeModel, DEFAULT_SUBSTEP};
use crate::env::{Action, EnvConfig, ModelEnv, Space, Task};
use crate::error::{Error, Result};

pub const DEFAULT_POLE_LENGTH: f64 = 1.0;
pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_FORCE: f64 = 11.0;

pub const INPUT_NAMES: [&str; 1] = ["f"];
pub const OUTPUT_NAMES: [&str; 4] = ["x", "x_dot", "theta", "theta_dot"];
pub const PARAMETER_NAMES: [&str; 8] = [
    "m_cart",
    "m_pole",
    "theta_0",
    "theta_dot_0",
    "x_0",
    "x_dot_0",
    "pole_length",
    "g",
];
const REQUIRED_PARAMETERS: [&str; 4] = ["m_cart", "m_pole", "theta_0", "theta_dot_0"];

// Boundary angles built from degrees may round a few ulps past the threshold.
const ANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub m_cart: f64,
    pub m_pole: f64,
    /// Full pole length; the bob sits at half of it.
    pub pole_length: f64,
    pub g: f64,
    pub force_magnitude: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            m_cart: 10.0,
            m_pole: 1.0,
            pole_length: DEFAULT_POLE_LENGTH,
            g: DEFAULT_GRAVITY,
            force_magnitude: DEFAULT_FORCE,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_cart", self.m_cart),
            ("m_pole", self.m_pole),
            ("pole_length", self.pole_length),
            ("g", self.g),
            ("force_magnitude", self.force_magnitude),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Pendulum length (pivot to bob).
    pub fn half_length(&self) -> f64 {
        self.pole_length / 2.0
    }

    pub fn total_mass(&self) -> f64 {
        self.m_cart + self.m_pole
    }

    /// Reads physical constants from `model_parameters`, defaulting
    /// `pole_length` and `g`.
    pub fn from_parameters(params: &BTreeMap<String, f64>, force_magnitude: f64) -> Result<Self> {
        let p = Self {
            m_cart: required(params, "m_cart")?,
            m_pole: required(params, "m_pole")?,
            pole_length: params
                .get("pole_length")
                .copied()
                .unwrap_or(DEFAULT_POLE_LENGTH),
            g: params.get("g").copied().unwrap_or(DEFAULT_GRAVITY),
            force_magnitude,
        };
        p.validate()?;
        Ok(p)
    }
}

fn required(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| Error::Config(format!("missing model parameter '{key}'")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            x: v[0],
            x_dot: v[1],
            theta: v[2],
            theta_dot: v[3],
        }
    }

    /// Reflection through the vertical axis at `x = 0`.
    pub fn mirror(self) -> Self {
        Self {
            x: -self.x,
            x_dot: -self.x_dot,
            theta: PI - self.theta,
            theta_dot: -self.theta_dot,
        }
    }

    /// Total mechanical energy, zero potential at pivot height.
    pub fn energy(&self, p: &CartPoleParams) -> f64 {
        let l = p.half_length();
        let (sin_t, cos_t) = self.theta.sin_cos();
        let bob_vx = self.x_dot - l * sin_t * self.theta_dot;
        let bob_vy = l * cos_t * self.theta_dot;
        0.5 * p.m_cart * self.x_dot * self.x_dot
            + 0.5 * p.m_pole * (bob_vx * bob_vx + bob_vy * bob_vy)
            + p.m_pole * p.g * l * sin_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub x_threshold: f64,
    pub theta_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            x_threshold: 2.4,
            theta_threshold: 12.0 * PI / 180.0,
        }
    }
}

/// Time derivative `(ẋ, ẍ, θ̇, θ̈)` under a signed cart force `f`.
pub fn dynamics(s: &CartPoleState, f: f64, p: &CartPoleParams) -> [f64; 4] {
    let l = p.half_length();
    let m = p.total_mass();
    let lean = FRAC_PI_2 - s.theta;
    let lean_dot = -s.theta_dot;
    let (sin_l, cos_l) = lean.sin_cos();

    let lean_acc = (p.g * sin_l - cos_l * (f + p.m_pole * l * lean_dot * lean_dot * sin_l) / m)
        / (l * (1.0 - p.m_pole * cos_l * cos_l / m));
    let x_acc = (f + p.m_pole * l * (lean_dot * lean_dot * sin_l - lean_acc * cos_l)) / m;

    [s.x_dot, x_acc, s.theta_dot, -lean_acc]
}

/// True once the cart leaves the track bounds or the pole deflects past the
/// angle threshold. Exactly reaching a threshold still counts as standing.
pub fn is_done(s: &CartPoleState, t: &Thresholds) -> bool {
    s.x.abs() > t.x_threshold || (s.theta - FRAC_PI_2).abs() > t.theta_threshold + ANGLE_SLACK
}

/// Cart-Pole equations of motion as a co-simulation model with input `f`.
#[derive(Debug, Clone)]
pub struct CartPoleModel {
    params: CartPoleParams,
}

impl CartPoleModel {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl OdeModel for CartPoleModel {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(INPUT_NAMES, OUTPUT_NAMES, PARAMETER_NAMES)
            .expect("static Cart-Pole descriptor is valid")
    }

    fn initialize(&mut self, params: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.params = CartPoleParams::from_parameters(params, self.params.force_magnitude)?;
        Ok(vec![
            params.get("x_0").copied().unwrap_or(0.0),
            params.get("x_dot_0").copied().unwrap_or(0.0),
            required(params, "theta_0")?,
            required(params, "theta_dot_0")?,
        ])
    }

    fn derivative(&self, state: &[f64], inputs: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&dynamics(
            &CartPoleState::from_slice(state),
            inputs[0],
            &self.params,
        ));
    }
}

/// Cart-Pole task hooks: two discrete actions of fixed force magnitude.
#[derive(Debug, Clone)]
pub struct CartPoleTask {
    pub force_magnitude: f64,
    pub thresholds: Thresholds,
}

impl CartPoleTask {
    /// Signed force for a discrete action: 0 pushes left, 1 pushes right.
    pub fn force_for(&self, action: usize) -> f64 {
        if action == 1 {
            self.force_magnitude
        } else {
            -self.force_magnitude
        }
    }
}

impl Task for CartPoleTask {
    fn action_space(&self) -> Space {
        Space::Discrete { n: 2 }
    }

    fn observation_space(&self) -> Space {
        let x = 2.0 * self.thresholds.x_threshold;
        let th = 2.0 * self.thresholds.theta_threshold;
        Space::Box {
            low: vec![-x, f64::NEG_INFINITY, FRAC_PI_2 - th, f64::NEG_INFINITY],
            high: vec![x, f64::INFINITY, FRAC_PI_2 + th, f64::INFINITY],
        }
    }

    fn inputs_for(&self, action: &Action) -> Vec<f64> {
        match action {
            Action::Discrete(a) => vec![self.force_for(*a)],
            Action::Continuous(v) => vec![v[0]],
        }
    }

    fn is_done(&self, observation: &[f64]) -> bool {
        is_done(&CartPoleState::from_slice(observation), &self.thresholds)
    }

    fn render(&self, _names: &[String], o: &[f64]) -> String {
        format!(
            "x={:.4} m, x_dot={:.4} m/s, theta={:.4} rad, theta_dot={:.4} rad/s",
            o[0], o[1], o[2], o[3]
        )
    }
}

pub type CartPoleEnv = ModelEnv<NativeBackend<CartPoleModel>, CartPoleTask>;

/// Cart-Pole configuration with masses 10/1 kg, a 5° initial lean,
/// 0.05 s time step and rewards +1/−100.
pub fn default_config() -> EnvConfig {
    EnvConfig {
        model_input_names: vec!["f".into()],
        model_output_names: OUTPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        model_parameters: BTreeMap::from([
            ("m_cart".to_string(), 10.0),
            ("m_pole".to_string(), 1.0),
            ("theta_0".to_string(), 85.0 / 180.0 * PI),
            ("theta_dot_0".to_string(), 0.0),
        ]),
        time_step: 0.05,
        positive_reward: 1.0,
        negative_reward: -100.0,
    }
}

/// Builds a Cart-Pole environment with force magnitude `force_magnitude`.
pub fn make_cartpole_env(cfg: EnvConfig, force_magnitude: f64) -> Result<CartPoleEnv> {
    make_cartpole_env_with(cfg, force_magnitude, DEFAULT_SUBSTEP)
}

pub fn make_cartpole_env_with(
    cfg: EnvConfig,
    force_magnitude: f64,
    substep_target: f64,
) -> Result<CartPoleEnv> {
    for key in REQUIRED_PARAMETERS {
        required(&cfg.model_parameters, key)?;
    }
    let params = CartPoleParams::from_parameters(&cfg.model_parameters, force_magnitude)?;
    let backend = NativeBackend::with_substep(CartPoleModel::new(params), substep_target)?;
    let task = CartPoleTask {
        force_magnitude,
        thresholds: Thresholds::default(),
    };
    ModelEnv::new(cfg, backend, task)
}

impl CartPoleEnv {
    /// Teleports the system to `state`; the episode continues from there.
    pub fn set_state(&mut self, state: CartPoleState) -> Result<()> {
        if self.observation().is_none() {
            return Err(Error::State("set_state before reset".into()));
        }
        self.backend_mut().set_state(&state.to_array())?;
        self.resync()
    }

    pub fn physics(&self) -> &CartPoleParams {
        self.backend().model().params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn upright() -> CartPoleState {
        CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: FRAC_PI_2,
            theta_dot: 0.0,
        }
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let d = dynamics(&upright(), 0.0, &CartPoleParams::default());
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn hanging_rest_is_equilibrium() {
        let s = CartPoleState {
            theta: -FRAC_PI_2,
            ..upright()
        };
        let d = dynamics(&s, 0.0, &CartPoleParams::default());
        // sin(fl(π)) ≈ 1.2e-16 is the only residue
        assert!(d[1].abs() < 1e-14 && d[3].abs() < 1e-14, "{d:?}");
    }

    #[test]
    fn pushed_upright_pole() {
        let p = CartPoleParams {
            m_cart: 10.0,
            m_pole: 1.0,
            pole_length: 1.0,
            ..Default::default()
        };
        let d = dynamics(&upright(), 11.0, &p);
        // lean acceleration −2.2 rad/s² ⇒ θ̈ = +2.2
        assert_relative_eq!(d[3], 2.2, max_relative = 1e-12);
        assert_relative_eq!(d[1], 1.1, max_relative = 1e-12);
        // pendulum constraint L·ψ̈ + ẍ·cos ψ − g·sin ψ = 0 at ψ = 0
        assert!((0.5 * -d[3] + d[1]).abs() < 1e-12);
    }

    #[test]
    fn tilted_pole_keeps_falling() {
        let s = CartPoleState {
            theta: 85f64.to_radians(),
            ..upright()
        };
        assert!(dynamics(&s, 0.0, &CartPoleParams::default())[3] < 0.0);
        let s = s.mirror();
        assert!(dynamics(&s, 0.0, &CartPoleParams::default())[3] > 0.0);
    }

    #[test]
    fn dynamics_mirror_symmetry() {
        let p = CartPoleParams::default();
        let s = CartPoleState {
            x: 0.3,
            x_dot: -0.7,
            theta: 1.3,
            theta_dot: 0.9,
        };
        let a = dynamics(&s, 11.0, &p);
        let b = dynamics(&s.mirror(), -11.0, &p);
        for (u, v) in [(a[0], -b[0]), (a[1], -b[1]), (a[2], -b[2]), (a[3], -b[3])] {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn done_cases() {
        let t = Thresholds::default();
        assert!(!is_done(&upright(), &t));
        assert!(is_done(&CartPoleState { x: 2.5, ..upright() }, &t));
        assert!(is_done(&CartPoleState { x: -2.5, ..upright() }, &t));
        assert!(!is_done(&CartPoleState { x: 2.4, ..upright() }, &t));
        for theta in [
            (90.0 + 12.0) * PI / 180.0,
            (90.0 + 12.0) / 180.0 * PI,
            102f64.to_radians(),
            78f64.to_radians(),
        ] {
            assert!(!is_done(&CartPoleState { theta, ..upright() }, &t), "{theta}");
        }
        assert!(is_done(
            &CartPoleState {
                theta: 102.01f64.to_radians(),
                ..upright()
            },
            &t
        ));
    }

    #[test]
    fn env_reset_matches_config() {
        let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
        let obs = env.reset().unwrap();
        let want = [0.0, 0.0, 1.48353, 0.0];
        for (o, w) in obs.iter().zip(want) {
            assert!((o - w).abs() < 1e-5);
        }
        assert!((obs[2] - 85.0 * PI / 180.0).abs() < 1e-9);
        assert_eq!(env.action_space(), &Space::Discrete { n: 2 });
    }

    #[test]
    fn initial_position_overrides() {
        let mut cfg = default_config();
        cfg.model_parameters.insert("x_0".into(), 0.5);
        cfg.model_parameters.insert("x_dot_0".into(), -0.1);
        let mut env = make_cartpole_env(cfg, 11.0).unwrap();
        let obs = env.reset().unwrap();
        assert_eq!((obs[0], obs[1]), (0.5, -0.1));
    }

    #[test]
    fn action_sets_force_direction() {
        let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
        env.reset().unwrap();
        let r = env.step(1).unwrap();
        assert_eq!(env.last_inputs(), &[11.0]);
        assert!(r.observation[1] > 0.0);
        assert_eq!(r.reward, 1.0);

        env.reset().unwrap();
        let r = env.step(0).unwrap();
        assert_eq!(env.last_inputs(), &[-11.0]);
        assert!(r.observation[1] < 0.0);
    }

    #[test]
    fn one_sided_push_terminates() {
        let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
        env.reset().unwrap();
        let mut last = None;
        for _ in 0..1000 {
            let r = env.step(0).unwrap();
            if r.done {
                last = Some(r);
                break;
            }
        }
        let r = last.expect("episode should terminate");
        assert_eq!(r.reward, -100.0);
    }

    #[test]
    fn render_dump() {
        let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
        env.reset().unwrap();
        let line = env.render().unwrap();
        assert!(line.contains("x=0.0000"), "{line}");
        assert!(line.contains("theta=1.4835"), "{line}");
        assert!(!line.contains('\n'));
        assert_eq!(line, env.render().unwrap());
        env.step(1).unwrap();
        assert_ne!(line, env.render().unwrap());
    }

    #[test]
    fn missing_parameter_is_named() {
        for key in REQUIRED_PARAMETERS {
            let mut cfg = default_config();
            cfg.model_parameters.remove(key);
            match make_cartpole_env(cfg, 11.0) {
                Err(Error::Config(msg)) => assert!(msg.contains(key), "{msg}"),
                other => panic!("expected config error for {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_non_positive_physics() {
        let mut cfg = default_config();
        cfg.model_parameters.insert("m_pole".into(), 0.0);
        assert!(make_cartpole_env(cfg, 11.0).is_err());
        assert!(make_cartpole_env(default_config(), 0.0).is_err());
    }

    #[test]
    fn set_state_requires_reset() {
        let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
        assert!(env.set_state(upright()).is_err());
        env.reset().unwrap();
        env.set_state(CartPoleState { x: 3.0, ..upright() }).unwrap();
        assert!(env.is_done());
    }
}
