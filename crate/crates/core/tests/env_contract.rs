use cosim_gym::cartpole::{default_config, make_cartpole_env};
use cosim_gym::env::{Action, EnvConfig, Space};
use cosim_gym::Error;

#[test]
fn reset_step_until_done() {
    let mut env = make_cartpole_env(default_config(), 11.0).unwrap();
    assert!(matches!(env.step(0), Err(Error::State(_))));

    let obs = env.reset().unwrap();
    assert_eq!(obs.len(), 4);
    assert!((obs[2] - 85f64.to_radians()).abs() < 1e-12);
    assert_eq!(env.action_space(), &Space::Discrete { n: 2 });

    // Pushing the way the pole leans cannot keep it up for long.
    let mut steps = 0;
    loop {
        let r = env.step(0).unwrap();
        steps += 1;
        if r.done {
            assert_eq!(r.reward, -100.0);
            break;
        }
        assert_eq!(r.reward, 1.0);
        assert!(steps < 200);
    }
    assert!((env.time() - steps as f64 * 0.05).abs() < 1e-12);
    assert!(matches!(env.step(1), Err(Error::State(_))));

    let again = env.reset().unwrap();
    assert_eq!(&*again, &*obs);
    assert!(matches!(env.step(2), Err(Error::Domain(_))));
    assert!(matches!(
        env.step(Action::Continuous(vec![1.0])),
        Err(Error::Domain(_))
    ));
    env.close();
}

#[test]
fn config_round_trips_through_json() {
    let text = r#"{
        "model_input_names": "f",
        "model_output_names": ["x", "x_dot", "theta", "theta_dot"],
        "model_parameters": {"m_cart": 10, "m_pole": 1, "theta_0": 1.4835298641951802, "theta_dot_0": 0},
        "time_step": 0.05
    }"#;
    let cfg = EnvConfig::from_json_str(text).unwrap();
    assert_eq!(cfg.model_input_names, vec!["f".to_string()]);
    assert_eq!(cfg.negative_reward, -100.0);
    assert_eq!(EnvConfig::from_json_str(&cfg.to_json_string()).unwrap(), cfg);
    assert!(make_cartpole_env(cfg, 11.0).is_ok());

    let unknown = text.replace("\"time_step\"", "\"timestep\"");
    assert!(EnvConfig::from_json_str(&unknown).is_err());
}

#[test]
fn mismatched_names_are_rejected() {
    let mut cfg = default_config();
    cfg.model_output_names.swap(0, 1);
    assert!(make_cartpole_env(cfg, 11.0).is_err());

    let mut cfg = default_config();
    cfg.model_parameters.insert("mass".into(), 3.0);
    assert!(make_cartpole_env(cfg, 11.0).is_err());

    let mut cfg = default_config();
    cfg.model_parameters.remove("m_pole");
    assert!(make_cartpole_env(cfg, 11.0).is_err());
}
