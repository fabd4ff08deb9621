use knobtune::environment::{shipped_manifest, Environment, EvaluationOutcome, FnEnvironment, Simulator, SimulatorSpec};
use knobtune::optimizers::mlp::{Activation, Mlp};
use knobtune::optimizers::{tune, Method, Tuner, TuningHistory};
use knobtune::param_space::{Configuration, ParamKind, ParameterSpace, ParameterSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `L = upstream · net(x)`; compares backprop with central differences on
/// every parameter and every input.
fn gradient_check(net: &mut Mlp, x: &[f64], upstream: &[f64]) -> f64 {
    let h = 1e-5;
    let loss = |net: &Mlp, x: &[f64]| -> f64 {
        net.forward(x).unwrap().iter().zip(upstream).map(|(o, u)| o * u).sum()
    };
    let trace = net.forward_trace(x).unwrap();
    let (grads, input_grad) = net.backward(&trace, upstream);
    let mut worst = 0.0f64;
    for k in 0..net.layers.len() {
        for j in 0..net.layers[k].weights.len() {
            let w = net.layers[k].weights[j];
            net.layers[k].weights[j] = w + h;
            let up = loss(net, x);
            net.layers[k].weights[j] = w - h;
            let down = loss(net, x);
            net.layers[k].weights[j] = w;
            worst = worst.max(relative_error(grads.weights[k][j], (up - down) / (2.0 * h)));
        }
        for j in 0..net.layers[k].biases.len() {
            let b = net.layers[k].biases[j];
            net.layers[k].biases[j] = b + h;
            let up = loss(net, x);
            net.layers[k].biases[j] = b - h;
            let down = loss(net, x);
            net.layers[k].biases[j] = b;
            worst = worst.max(relative_error(grads.biases[k][j], (up - down) / (2.0 * h)));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        worst = worst.max(relative_error(input_grad[i], (loss(net, &xp) - loss(net, &xm)) / (2.0 * h)));
    }
    worst
}

#[test]
fn actor_and_critic_gradients_match_finite_differences() {
    let (s, d, hidden) = (16, 6, 64);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // larger output init than training uses, so tanh is not in its linear regime
        let mut actor = Mlp::new(&[s, hidden, hidden, d], Activation::Tanh, 0.3, &mut rng);
        let mut critic = Mlp::new(&[s + d, hidden, hidden, 1], Activation::Identity, 0.3, &mut rng);
        let state: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let upstream: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradient_check(&mut actor, &state, &upstream);
        assert!(err < 1e-4, "actor seed {seed}: relative error {err:e}");
        let sa: Vec<f64> = (0..s + d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradient_check(&mut critic, &sa, &[1.0]);
        assert!(err < 1e-4, "critic seed {seed}: relative error {err:e}");
    }
}

fn quadratic_env() -> FnEnvironment<impl FnMut(&Configuration) -> EvaluationOutcome + Send> {
    let space = ParameterSpace::new(
        vec![ParameterSpec::with_range("x", 0.5, ParamKind::Continuous, 0.0, 1.0).unwrap()],
        10.0,
    )
    .unwrap();
    FnEnvironment::new(space, |c: &Configuration| EvaluationOutcome {
        valid: true,
        throughput: 10.0 - 40.0 * (c.0[0] - 0.73).powi(2),
        metrics: vec![],
        duration: 0.0,
    })
}

#[test]
fn bo_solves_a_one_dimensional_quadratic_and_beats_random() {
    let (mut bo_sum, mut rs_sum) = (0.0, 0.0);
    for seed in 0..20 {
        let bo = tune(&mut quadratic_env(), Method::Bo, 30, seed).unwrap();
        assert!(10.0 - bo.best_throughput < 1e-2, "seed {seed}: BO best {}", bo.best_throughput);
        bo_sum += bo.best_throughput;
        rs_sum += tune(&mut quadratic_env(), Method::Random, 30, seed).unwrap().best_throughput;
    }
    assert!(bo_sum / 20.0 > rs_sum / 20.0, "BO {} vs random {}", bo_sum / 20.0, rs_sum / 20.0);
}

fn quiet_simulator() -> Simulator {
    let space = shipped_manifest();
    let spec = SimulatorSpec::calibrated_with(&space, 7, 10, 1.45, 0.0).unwrap();
    let names: Vec<String> = spec.important_idx.iter().map(|&i| spec.names[i].clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let reduced = space.subset(&names).unwrap();
    Simulator::new(spec, reduced).unwrap()
}

fn noisy_simulator() -> Simulator {
    let space = shipped_manifest();
    let spec = SimulatorSpec::calibrated(&space, 7).unwrap();
    let names: Vec<String> = spec.important_idx.iter().map(|&i| spec.names[i].clone()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let reduced = space.subset(&names).unwrap();
    Simulator::new(spec, reduced).unwrap()
}

#[test]
fn reruns_are_bit_identical_without_noise() {
    for method in Method::ALL {
        let a = tune(&mut quiet_simulator(), method, 40, 11).unwrap();
        let b = tune(&mut quiet_simulator(), method, 40, 11).unwrap();
        assert_eq!(a, b, "{method}");
        let c = tune(&mut quiet_simulator(), method, 40, 12).unwrap();
        assert_ne!(a.steps, c.steps, "{method}: seed has no effect");
    }
}

#[test]
fn budget_is_steps_plus_the_default() {
    for method in Method::ALL {
        let mut env = noisy_simulator();
        let h = tune(&mut env, method, 200, 3).unwrap();
        assert_eq!(h.len(), 200);
        assert_eq!(env.evaluation_count(), 201, "{method}");
    }
}

#[test]
fn single_step_run() {
    let mut env = noisy_simulator();
    let h = tune(&mut env, Method::Bo, 1, 0).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(env.evaluation_count(), 2);
}

fn assert_trace_consistent(h: &TuningHistory) {
    let trace = h.best_trace();
    assert!(trace.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*trace.last().unwrap(), h.best_throughput);
    for (step, best) in h.steps.iter().zip(&trace) {
        if step.outcome.valid {
            assert!(step.outcome.throughput <= *best);
        }
        let tp = if step.outcome.valid { step.outcome.throughput } else { 0.0 };
        assert!((step.reward - (tp - h.default_throughput) / h.default_throughput).abs() < 1e-12);
    }
}

#[test]
fn traces_are_monotone_for_every_method() {
    for method in Method::ALL {
        let h = tune(&mut noisy_simulator(), method, 60, 5).unwrap();
        assert_trace_consistent(&h);
        for s in &h.steps {
            noisy_simulator().space().validate(&s.config).unwrap();
        }
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    for method in Method::ALL {
        let mut env = noisy_simulator();
        let full = tune(&mut env, method, 50, 21).unwrap();

        let mut env = noisy_simulator();
        let mut tuner = Tuner::start(&mut env, method, 50, 21).unwrap();
        for _ in 0..23 {
            tuner.step(&mut env).unwrap();
        }
        let saved = serde_json::to_string(&tuner).unwrap();
        drop(tuner);

        let mut fresh_env = noisy_simulator();
        let mut resumed: Tuner = serde_json::from_str(&saved).unwrap();
        resumed.attach(&mut fresh_env).unwrap();
        resumed.run_to_end(&mut fresh_env).unwrap();
        assert_eq!(resumed.history, full, "{method}");
    }
}

#[test]
fn resume_rejects_a_different_space() {
    let mut env = noisy_simulator();
    let tuner = Tuner::start(&mut env, Method::Random, 5, 0).unwrap();
    let other = Simulator::new(
        SimulatorSpec::calibrated(&shipped_manifest(), 7).unwrap(),
        shipped_manifest(),
    )
    .unwrap();
    let mut other = other;
    assert!(tuner.attach(&mut other).is_err());
}

#[test]
fn invalid_default_aborts_before_tuning() {
    let space = ParameterSpace::new(
        vec![ParameterSpec::derived("x", 1.0, ParamKind::Continuous, 10.0).unwrap()],
        10.0,
    )
    .unwrap();
    let mut env = FnEnvironment::new(space, |_: &Configuration| EvaluationOutcome::invalid(0, 0.0));
    for method in Method::ALL {
        let err = tune(&mut env, method, 5, 0).unwrap_err();
        assert!(err.to_string().contains("default"), "{err}");
    }
}

#[test]
fn bo_survives_an_all_invalid_landscape() {
    let space = ParameterSpace::new(
        vec![
            ParameterSpec::derived("a", 1.0, ParamKind::Continuous, 10.0).unwrap(),
            ParameterSpec::derived("b", 8.0, ParamKind::Integer, 10.0).unwrap(),
        ],
        10.0,
    )
    .unwrap();
    let default = space.default_config();
    let mut env = FnEnvironment::new(space, move |c: &Configuration| {
        if *c == default {
            EvaluationOutcome { valid: true, throughput: 5.0, metrics: vec![], duration: 0.0 }
        } else {
            EvaluationOutcome::invalid(0, 0.0)
        }
    });
    let h = tune(&mut env, Method::Bo, 25, 4).unwrap();
    assert_eq!(h.len(), 25);
    assert_eq!(h.best_throughput, 0.0);
    assert_eq!(h.best_trace(), vec![0.0; 25]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn suggestions_stay_in_range(seed in 0u64..1000, method_idx in 0usize..3) {
        let method = Method::ALL[method_idx];
        let mut env = noisy_simulator();
        let h = tune(&mut env, method, 15, seed).unwrap();
        for s in &h.steps {
            prop_assert!(env.space().validate(&s.config).is_ok());
        }
        assert_trace_consistent(&h);
    }
}
