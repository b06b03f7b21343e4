//! Co-simulation backend contract and a fixed-step RK4 master.
//!
//! A [`Backend`] plays the role of a co-simulation unit: it is initialized
//! from a parameter map, receives inputs, advances over a communication
//! interval with those inputs held constant, and exposes outputs. Native
//! models implement [`OdeModel`] and are wrapped by [`NativeBackend`], which
//! integrates them with classical RK4 over equal substeps.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Default upper bound on the RK4 substep size, in seconds.
pub const DEFAULT_SUBSTEP: f64 = 0.005;

/// Variable interface exposed by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub parameter_names: Vec<String>,
}

impl BackendDescriptor {
    pub fn new<I, O, P>(inputs: I, outputs: O, parameters: P) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Into<String>,
        O: IntoIterator,
        O::Item: Into<String>,
        P: IntoIterator,
        P::Item: Into<String>,
    {
        let desc = Self {
            input_names: inputs.into_iter().map(Into::into).collect(),
            output_names: outputs.into_iter().map(Into::into).collect(),
            parameter_names: parameters.into_iter().map(Into::into).collect(),
        };
        desc.validate()?;
        Ok(desc)
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, names) in [
            ("input", &self.input_names),
            ("output", &self.output_names),
            ("parameter", &self.parameter_names),
        ] {
            if let Some(dup) = first_duplicate(names) {
                return Err(Error::Config(format!("duplicate {kind} name '{dup}'")));
            }
        }
        let outputs: BTreeSet<&str> = self.output_names.iter().map(String::as_str).collect();
        if let Some(both) = self
            .input_names
            .iter()
            .find(|n| outputs.contains(n.as_str()))
        {
            return Err(Error::Config(format!(
                "'{both}' is declared both as input and output"
            )));
        }
        Ok(())
    }
}

pub(crate) fn first_duplicate(names: &[String]) -> Option<&str> {
    let mut seen = BTreeSet::new();
    names
        .iter()
        .find(|n| !seen.insert(n.as_str()))
        .map(String::as_str)
}

/// Co-simulation contract.
///
/// After [`initialize`](Backend::initialize), [`get_outputs`](Backend::get_outputs)
/// reflects the initial conditions. Outputs only change through
/// [`do_step`](Backend::do_step), which advances exactly `dt` seconds.
pub trait Backend {
    fn descriptor(&self) -> &BackendDescriptor;

    /// (Re)initializes the model from parameters and initial conditions and
    /// resets the backend clock to zero.
    fn initialize(&mut self, params: &BTreeMap<String, f64>) -> Result<()>;

    /// Sets the inputs, ordered as `descriptor().input_names`.
    fn set_inputs(&mut self, values: &[f64]) -> Result<()>;

    fn do_step(&mut self, dt: f64) -> Result<()>;

    /// Outputs ordered as `descriptor().output_names`.
    fn get_outputs(&self) -> Vec<f64>;

    /// Simulated time since the last initialization.
    fn time(&self) -> f64;
}

/// A continuous-time model `ẏ = F(y, u)` that can be wrapped by
/// [`NativeBackend`].
pub trait OdeModel {
    fn descriptor(&self) -> BackendDescriptor;

    /// Applies parameters and returns the initial state vector.
    fn initialize(&mut self, params: &BTreeMap<String, f64>) -> Result<Vec<f64>>;

    /// Writes `F(state, inputs)` into `out`.
    fn derivative(&self, state: &[f64], inputs: &[f64], out: &mut [f64]);

    /// Maps the state to the outputs. Defaults to the state itself.
    fn outputs(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
}

/// One classical fourth-order Runge–Kutta step of size `h`.
///
/// `derivative(y, dy)` must write `ẏ` at `y` into `dy`; any input it depends
/// on is held constant over the step.
pub fn rk4_step<F>(state: &[f64], mut derivative: F, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("RK4 step size must be > 0, got {h}")));
    }
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let mut eval = |y: &[f64], k: &mut [f64]| -> Result<()> {
        derivative(y, k);
        match k.iter().position(|v| !v.is_finite()) {
            Some(component) => Err(Error::Numerical {
                component,
                value: k[component],
            }),
            None => Ok(()),
        }
    };

    eval(state, &mut k1)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * h * k1[i];
    }
    eval(&tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * h * k2[i];
    }
    eval(&tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = state[i] + h * k3[i];
    }
    eval(&tmp, &mut k4)?;

    Ok((0..n)
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// How a communication interval is split into RK4 substeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepPlan {
    pub count: usize,
    pub size: f64,
}

impl SubstepPlan {
    /// `count = ceil(dt / target)` equal substeps of `dt / count`.
    pub fn new(dt: f64, target: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("interval must be > 0, got {dt}")));
        }
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::Domain(format!(
                "substep target must be > 0, got {target}"
            )));
        }
        let count = ((dt / target).ceil() as usize).max(1);
        Ok(Self {
            count,
            size: dt / count as f64,
        })
    }
}

/// Advances `state` by `dt` under constant `inputs` (zero-order hold).
pub fn advance<M: OdeModel + ?Sized>(
    model: &M,
    state: &mut Vec<f64>,
    inputs: &[f64],
    dt: f64,
    substep_target: f64,
) -> Result<SubstepPlan> {
    let plan = SubstepPlan::new(dt, substep_target)?;
    for _ in 0..plan.count {
        *state = rk4_step(state, |y, dy| model.derivative(y, inputs, dy), plan.size)?;
    }
    Ok(plan)
}

/// Runs an [`OdeModel`] behind the [`Backend`] contract.
#[derive(Debug, Clone)]
pub struct NativeBackend<M> {
    model: M,
    descriptor: BackendDescriptor,
    substep_target: f64,
    state: Vec<f64>,
    inputs: Vec<f64>,
    time: f64,
    initialized: bool,
}

impl<M: OdeModel> NativeBackend<M> {
    pub fn new(model: M) -> Result<Self> {
        Self::with_substep(model, DEFAULT_SUBSTEP)
    }

    pub fn with_substep(model: M, substep_target: f64) -> Result<Self> {
        if !(substep_target > 0.0 && substep_target.is_finite()) {
            return Err(Error::Config(format!(
                "substep target must be > 0, got {substep_target}"
            )));
        }
        let descriptor = model.descriptor();
        descriptor.validate()?;
        Ok(Self {
            inputs: vec![0.0; descriptor.input_names.len()],
            model,
            descriptor,
            substep_target,
            state: Vec::new(),
            time: 0.0,
            initialized: false,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Overwrites the internal state; used to start from arbitrary points.
    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("backend not initialized".into()));
        }
        if state.len() != self.state.len() {
            return Err(Error::Shape(format!(
                "state has {} components, expected {}",
                state.len(),
                self.state.len()
            )));
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn substep_target(&self) -> f64 {
        self.substep_target
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }
}

impl<M: OdeModel> Backend for NativeBackend<M> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn initialize(&mut self, params: &BTreeMap<String, f64>) -> Result<()> {
        let state = self
            .model
            .initialize(params)
            .map_err(|e| Error::Initialization(e.to_string()))?;
        if let Some(i) = state.iter().position(|v| !v.is_finite()) {
            return Err(Error::Initialization(format!(
                "initial state component {i} is not finite"
            )));
        }
        self.state = state;
        self.inputs.iter_mut().for_each(|u| *u = 0.0);
        self.time = 0.0;
        self.initialized = true;
        Ok(())
    }

    fn set_inputs(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "got {} inputs, expected {}",
                values.len(),
                self.inputs.len()
            )));
        }
        self.inputs.copy_from_slice(values);
        Ok(())
    }

    fn do_step(&mut self, dt: f64) -> Result<()> {
        if !self.initialized {
            return Err(Error::State("do_step before initialize".into()));
        }
        advance(
            &self.model,
            &mut self.state,
            &self.inputs,
            dt,
            self.substep_target,
        )?;
        self.time += dt;
        Ok(())
    }

    fn get_outputs(&self) -> Vec<f64> {
        self.model.outputs(&self.state)
    }

    fn time(&self) -> f64 {
        self.time
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// ẏ = y
    struct Growth;

    impl OdeModel for Growth {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor::new(["u"], ["y"], ["y0"]).unwrap()
        }
        fn initialize(&mut self, params: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
            Ok(vec![params.get("y0").copied().unwrap_or(1.0)])
        }
        fn derivative(&self, state: &[f64], inputs: &[f64], out: &mut [f64]) {
            out[0] = state[0] + inputs[0];
        }
    }

    #[test]
    fn zero_derivative_is_a_fixed_point() {
        let y = [1.5, -2.0, 1e300];
        for h in [1e-6, 0.1, 10.0] {
            assert_eq!(rk4_step(&y, |_, dy| dy.fill(0.0), h).unwrap(), y);
        }
    }

    #[test]
    fn exponential_single_step() {
        let y = rk4_step(&[1.0], |y, dy| dy[0] = y[0], 0.1).unwrap();
        assert!((y[0] - 1.105170918).abs() < 1e-7, "{}", y[0]);
    }

    #[test]
    fn constant_acceleration_is_exact() {
        let a = 3.7;
        let (x0, v0, h) = (0.25, -1.5, 0.3);
        let y = rk4_step(
            &[x0, v0],
            |y, dy| {
                dy[0] = y[1];
                dy[1] = a;
            },
            h,
        )
        .unwrap();
        assert_relative_eq!(y[0], x0 + v0 * h + a * h * h / 2.0, max_relative = 1e-15);
        assert_relative_eq!(y[1], v0 + a * h, max_relative = 1e-15);
    }

    #[test]
    fn non_finite_derivative_names_component() {
        let err = rk4_step(
            &[1.0, 0.0, 2.0],
            |_, dy| {
                dy[0] = 0.0;
                dy[1] = 1.0;
                dy[2] = f64::NAN;
            },
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { component: 2, .. }));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(rk4_step(&[1.0], |_, dy| dy[0] = 0.0, 0.0).is_err());
        assert!(rk4_step(&[1.0], |_, dy| dy[0] = 0.0, -0.1).is_err());
    }

    #[test]
    fn substep_plans() {
        let p = SubstepPlan::new(0.05, 0.005).unwrap();
        assert_eq!(p.count, 10);
        assert_relative_eq!(p.size, 0.005, max_relative = 1e-15);

        let p = SubstepPlan::new(0.001, 0.005).unwrap();
        assert_eq!(p.count, 1);
        assert_eq!(p.size, 0.001);

        assert!(SubstepPlan::new(0.0, 0.005).is_err());
        assert!(SubstepPlan::new(0.05, 0.0).is_err());
    }

    #[test]
    fn substeps_sum_to_interval() {
        for (dt, target) in [(0.05, 0.005), (1.0, 0.005), (0.01, 0.003), (0.5, 0.007)] {
            let p = SubstepPlan::new(dt, target).unwrap();
            let total: f64 = (0..p.count).map(|_| p.size).sum();
            assert!((total - dt).abs() <= p.count as f64 * f64::EPSILON * dt);
            assert!(p.size <= target * (1.0 + 1e-12));
        }
    }

    #[test]
    fn one_long_interval_matches_many_short_ones() {
        let params = BTreeMap::from([("y0".to_string(), 1.0)]);
        let mut long = NativeBackend::new(Growth).unwrap();
        long.initialize(&params).unwrap();
        long.set_inputs(&[0.3]).unwrap();
        long.do_step(1.0).unwrap();

        let mut short = NativeBackend::new(Growth).unwrap();
        short.initialize(&params).unwrap();
        short.set_inputs(&[0.3]).unwrap();
        for _ in 0..20 {
            short.do_step(0.05).unwrap();
        }
        let (a, b) = (long.get_outputs()[0], short.get_outputs()[0]);
        assert!(((a - b) / a).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn backend_lifecycle() {
        let mut b = NativeBackend::new(Growth).unwrap();
        assert!(matches!(b.do_step(0.1), Err(Error::State(_))));
        b.initialize(&BTreeMap::from([("y0".to_string(), 2.0)]))
            .unwrap();
        assert_eq!(b.get_outputs(), vec![2.0]);
        assert_eq!(b.get_outputs(), b.get_outputs());
        assert!(matches!(b.set_inputs(&[1.0, 2.0]), Err(Error::Shape(_))));
        b.do_step(0.1).unwrap();
        assert_relative_eq!(b.time(), 0.1);
        b.initialize(&BTreeMap::new()).unwrap();
        assert_eq!(b.time(), 0.0);
        assert_eq!(b.get_outputs(), vec![1.0]);
    }

    #[test]
    fn descriptor_rejects_overlap_and_duplicates() {
        assert!(BackendDescriptor::new(["a"], ["a"], Vec::<String>::new()).is_err());
        assert!(BackendDescriptor::new(["a", "a"], ["b"], Vec::<String>::new()).is_err());
        assert!(BackendDescriptor::new(["a"], ["b"], ["p", "p"]).is_err());
    }
}
