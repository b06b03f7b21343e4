//! Self-checks of the physics, integrator and learner against closed-form or
//! exhaustive references. Run from the CLI with `cosim-gym validate`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{encode, update, LearnerParams, QTable};
use crate::cartpole::{
    default_config, dynamics, make_cartpole_env, CartPoleModel, CartPoleParams, CartPoleState,
};
use crate::cosim::{advance, rk4_step};
use crate::error::Result;

pub const ENERGY_DRIFT_TOL: f64 = 1e-6;
pub const RK4_MIN_RATIO: f64 = 12.0;
pub const MIRROR_TOL: f64 = 1e-9;
pub const PERIOD_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<22} measured={:<12.4e} threshold={:<10.3e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

/// Maximum relative energy drift of the unforced system over `duration`
/// seconds from a 5° lean, integrated with substep `h`.
pub fn energy_drift(duration: f64, h: f64) -> Result<f64> {
    let params = CartPoleParams::default();
    let model = CartPoleModel::new(params);
    let start = CartPoleState {
        x: 0.0,
        x_dot: 0.0,
        theta: 85f64.to_radians(),
        theta_dot: 0.0,
    };
    let e0 = start.energy(&params);
    let mut state = start.to_array().to_vec();
    let interval = 0.05;
    let n = (duration / interval).round() as usize;
    let mut worst = 0.0f64;
    for _ in 0..n {
        advance(&model, &mut state, &[0.0], interval, h)?;
        let e = CartPoleState::from_slice(&state).energy(&params);
        worst = worst.max(((e - e0) / e0).abs());
    }
    Ok(worst)
}

/// Error ratios for `ẏ = y` on [0, 1] at `h, h/2, h/4, h/8`.
pub fn rk4_convergence_ratios(h: f64) -> Result<Vec<f64>> {
    let exact = 1f64.exp();
    let errors = (0..4)
        .map(|k| {
            let step = h / f64::powi(2.0, k);
            let n = (1.0 / step).round() as usize;
            let mut y = vec![1.0];
            for _ in 0..n {
                y = rk4_step(&y, |y, dy| dy[0] = y[0], step)?;
            }
            Ok((y[0] - exact).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.windows(2).map(|w| w[0] / w[1]).collect())
}

/// Largest componentwise mismatch between stepping a state and stepping its
/// mirror image with the mirrored action, over `samples` random cases.
pub fn mirror_mismatch(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a_env = make_cartpole_env(default_config(), 11.0)?;
    let mut b_env = a_env.clone();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let s = CartPoleState {
            x: rng.random_range(-2.0..2.0),
            x_dot: rng.random_range(-2.0..2.0),
            theta: FRAC_PI_2 + rng.random_range(-0.2..0.2),
            theta_dot: rng.random_range(-2.0..2.0),
        };
        let action = rng.random_range(0..2usize);
        a_env.reset()?;
        a_env.set_state(s)?;
        b_env.reset()?;
        b_env.set_state(s.mirror())?;
        let a = a_env.step(action)?;
        let b = b_env.step(1 - action)?;
        let mirrored = CartPoleState::from_slice(&b.observation).mirror().to_array();
        for (u, v) in a.observation.iter().zip(mirrored) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

/// Largest absolute acceleration at the upright and hanging rest points.
pub fn equilibrium_residual() -> f64 {
    let p = CartPoleParams::default();
    [FRAC_PI_2, -FRAC_PI_2]
        .into_iter()
        .map(|theta| {
            let d = dynamics(
                &CartPoleState {
                    x: 0.0,
                    x_dot: 0.0,
                    theta,
                    theta_dot: 0.0,
                },
                0.0,
                &p,
            );
            d[1].abs().max(d[3].abs())
        })
        .fold(0.0, f64::max)
}

/// Measured and linearized small-oscillation periods about the hanging
/// position for amplitude `amplitude` radians. The cart is free, so the bob
/// swings about the common centre of mass: ω² = g·M / (L·m_cart).
pub fn hanging_period(params: CartPoleParams, amplitude: f64) -> Result<(f64, f64)> {
    let l = params.half_length();
    let expected = 2.0 * PI * (l * params.m_cart / (params.g * params.total_mass())).sqrt();
    let model = CartPoleModel::new(params);
    let rest = -FRAC_PI_2;
    let mut state = vec![0.0, 0.0, rest + amplitude, 0.0];
    let h = 1e-3;
    let mut crossings = Vec::new();
    let mut t = 0.0;
    let mut prev = amplitude;
    while crossings.len() < 7 && t < 20.0 * expected {
        advance(&model, &mut state, &[0.0], h, h)?;
        t += h;
        let dev = state[2] - rest;
        if prev > 0.0 && dev <= 0.0 || prev < 0.0 && dev >= 0.0 {
            crossings.push(t - h * dev / (dev - prev));
        }
        prev = dev;
    }
    let measured = if crossings.len() >= 3 {
        2.0 * (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64
    } else {
        f64::NAN
    };
    Ok((measured, expected))
}

/// Runs every oracle. Errors inside an oracle are reported as failures.
pub fn run_all() -> Vec<OracleCheck> {
    let mut checks = Vec::new();
    let fail = |name, threshold, e: crate::Error| OracleCheck {
        name,
        measured: f64::NAN,
        threshold,
        passed: false,
        detail: format!("error: {e}"),
    };

    let t = Instant::now();
    checks.push(match energy_drift(10.0, 1e-3) {
        Ok(d) => OracleCheck {
            name: "energy_conservation",
            measured: d,
            threshold: ENERGY_DRIFT_TOL,
            passed: d <= ENERGY_DRIFT_TOL,
            detail: format!("10 s, substep 1 ms, {:.3} s", t.elapsed().as_secs_f64()),
        },
        Err(e) => fail("energy_conservation", ENERGY_DRIFT_TOL, e),
    });

    let r = equilibrium_residual();
    checks.push(OracleCheck {
        name: "equilibria",
        measured: r,
        threshold: 1e-14,
        passed: r <= 1e-14,
        detail: "upright and hanging rest, f = 0".into(),
    });

    checks.push(match mirror_mismatch(1000, 7) {
        Ok(m) => OracleCheck {
            name: "mirror_symmetry",
            measured: m,
            threshold: MIRROR_TOL,
            passed: m <= MIRROR_TOL,
            detail: "1000 random states, one step each".into(),
        },
        Err(e) => fail("mirror_symmetry", MIRROR_TOL, e),
    });

    checks.push(match rk4_convergence_ratios(0.1) {
        Ok(ratios) => {
            let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            OracleCheck {
                name: "rk4_order",
                measured: min,
                threshold: RK4_MIN_RATIO,
                passed: min >= RK4_MIN_RATIO,
                detail: format!("error ratios per halving {ratios:.2?}"),
            }
        }
        Err(e) => fail("rk4_order", RK4_MIN_RATIO, e),
    });

    checks.push(match hanging_period(CartPoleParams::default(), 0.01) {
        Ok((measured, expected)) => {
            let rel = ((measured - expected) / expected).abs();
            OracleCheck {
                name: "small_oscillation",
                measured: rel,
                threshold: PERIOD_TOL,
                passed: rel <= PERIOD_TOL,
                detail: format!("period {measured:.5} s vs linearized {expected:.5} s"),
            }
        }
        Err(e) => fail("small_oscillation", PERIOD_TOL, e),
    });

    let mut seen = vec![false; 10_000];
    let mut ok = true;
    for id in 0..10_000usize {
        let bins = [id / 1000, id / 100 % 10, id / 10 % 10, id % 10];
        match encode(bins) {
            Ok(e) if e < seen.len() && !seen[e] => seen[e] = true,
            _ => ok = false,
        }
    }
    ok &= seen.iter().all(|&s| s);
    checks.push(OracleCheck {
        name: "discretizer_bijection",
        measured: seen.iter().filter(|&&s| s).count() as f64,
        threshold: 10_000.0,
        passed: ok,
        detail: "encode over {0..9}^4".into(),
    });

    let p = LearnerParams::default();
    let mut q = QTable::zeros(2, 2);
    q.set(1, 0, 2.0);
    update(&mut q, 0, 0, 1.0, 1, false, &p);
    let bootstrap = q.get(0, 0);
    let mut q = QTable::zeros(2, 2);
    q.set(0, 1, 1.0);
    update(&mut q, 0, 1, -100.0, 1, true, &p);
    let terminal = q.get(0, 1);
    let err = (bootstrap - 0.6).abs().max((terminal + 19.2).abs());
    checks.push(OracleCheck {
        name: "q_update",
        measured: err,
        threshold: 1e-12,
        passed: err <= 1e-12,
        detail: format!("bootstrap {bootstrap} (want 0.6), terminal {terminal} (want -19.2)"),
    });

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_is_conserved() {
        let d = energy_drift(10.0, 1e-3).unwrap();
        assert!(d <= ENERGY_DRIFT_TOL, "{d}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        for r in rk4_convergence_ratios(0.1).unwrap() {
            assert!(r >= RK4_MIN_RATIO, "{r}");
        }
    }

    #[test]
    fn small_oscillation_period() {
        for (mc, mp) in [(10.0, 1.0), (100.0, 1.0), (1.0, 1.0)] {
            let p = CartPoleParams {
                m_cart: mc,
                m_pole: mp,
                ..Default::default()
            };
            let (measured, expected) = hanging_period(p, 0.01).unwrap();
            assert!(((measured - expected) / expected).abs() <= PERIOD_TOL, "{measured} vs {expected}");
        }
    }

    #[test]
    fn every_oracle_passes() {
        for c in run_all() {
            assert!(c.passed, "{c}");
        }
    }
}
