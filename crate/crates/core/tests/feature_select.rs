use knobtune::environment::{shipped_manifest, Environment, Simulator, SimulatorSpec};
use knobtune::feature_select::{
    fit_forest, forest_inputs, importance, ranking_from, select_by_coverage, ForestParams,
};
use knobtune::sampling::{apply_random_subset, generate, Strategy};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn linear_data(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..20).map(|_| rng.gen()).collect()).collect();
    let y = x.iter().map(|r| 10.0 * r[3] + rng.gen_range(-0.5..0.5)).collect();
    (x, y)
}

#[test]
fn top_feature_matches_correlation_oracle() {
    for seed in 0..3 {
        let (x, y) = linear_data(seed);
        let corr: Vec<f64> = (0..20)
            .map(|j| pearson(&x.iter().map(|r| r[j]).collect::<Vec<_>>(), &y).abs())
            .collect();
        let oracle = ranking_from(corr).order[0];
        let forest = fit_forest(&x, &y, &ForestParams { seed, ..Default::default() }).unwrap();
        let ranking = importance(&forest);
        assert_eq!(oracle, 3);
        assert_eq!(ranking.order[0], oracle);
        assert!((ranking.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn permuting_columns_permutes_ranking() {
    let (x, y) = linear_data(11);
    let perm: Vec<usize> = (0..20).rev().collect();
    let xp: Vec<Vec<f64>> = x.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
    let params = ForestParams { seed: 5, ..Default::default() };
    let a = importance(&fit_forest(&x, &y, &params).unwrap());
    let b = importance(&fit_forest(&xp, &y, &params).unwrap());
    // column k of xp is column perm[k] of x
    assert_eq!(perm[b.order[0]], a.order[0]);
    assert_eq!(perm[b.order[0]], 3);
}

#[test]
fn forest_beats_mean_predictor_on_held_out_simulator_data() {
    let space = shipped_manifest();
    let spec = SimulatorSpec::calibrated(&space, 7).unwrap();
    let mut sim = Simulator::new(spec, space.clone()).unwrap();
    let design = generate(&space, 300, 4, Strategy::SymmetricLhs).unwrap();
    let design = apply_random_subset(&design, 50, &space, 5).unwrap();
    let y: Vec<f64> = design.configs.iter().map(|c| sim.evaluate(c).throughput).collect();
    let x = forest_inputs(&space, &design.configs);
    let (train_x, test_x) = x.split_at(200);
    let (train_y, test_y) = y.split_at(200);
    let forest = fit_forest(train_x, train_y, &ForestParams { seed: 1, ..Default::default() }).unwrap();
    let mean = test_y.iter().sum::<f64>() / test_y.len() as f64;
    let var = test_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / test_y.len() as f64;
    let mse = test_x
        .iter()
        .zip(test_y)
        .map(|(r, v)| (forest.predict(r) - v).powi(2))
        .sum::<f64>()
        / test_y.len() as f64;
    assert!(mse < var, "mse {mse} vs variance {var}");
}

#[test]
fn planted_parameters_lead_the_ranking() {
    let space = shipped_manifest();
    let spec = SimulatorSpec::calibrated(&space, 7).unwrap();
    let planted = spec.important_idx.clone();
    let mut sim = Simulator::new(spec, space.clone()).unwrap();
    let mut good = 0;
    for seed in 0..5u64 {
        let design = generate(&space, 200, seed, Strategy::SymmetricLhs).unwrap();
        let design = apply_random_subset(&design, 50, &space, seed + 1).unwrap();
        let y: Vec<f64> = design.configs.iter().map(|c| sim.evaluate(c).throughput).collect();
        let x = forest_inputs(&space, &design.configs);
        let ranking = importance(&fit_forest(&x, &y, &ForestParams { seed, ..Default::default() }).unwrap());
        let hits = planted.iter().filter(|i| ranking.order[..10].contains(i)).count();
        if hits >= 9 {
            good += 1;
        }
    }
    assert!(good >= 3, "only {good} of 5 seeds recovered 9 planted parameters");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_prefix_is_minimal(
        raw in proptest::collection::vec(0.0f64..1.0, 1..30),
        coverage in 0.01f64..0.99,
    ) {
        let total: f64 = raw.iter().sum();
        proptest::prop_assume!(total > 0.0);
        let ranking = ranking_from(raw.iter().map(|v| v / total).collect());
        let picked = select_by_coverage(&ranking, coverage).unwrap();
        prop_assert!(picked == ranking.order[..picked.len()].to_vec());
        let sum = |ix: &[usize]| ix.iter().map(|&i| ranking.importances[i]).sum::<f64>();
        if picked.len() < ranking.order.len() {
            prop_assert!(sum(&picked) >= coverage);
        }
        prop_assert!(sum(&picked[..picked.len() - 1]) < coverage);
    }

    #[test]
    fn importances_form_a_distribution(seed in 0u64..1000, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + rng.gen::<f64>()).collect();
        let forest = fit_forest(&x, &y, &ForestParams { n_trees: 5, seed, ..Default::default() }).unwrap();
        let r = importance(&forest);
        prop_assert!((r.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(r.importances.iter().all(|&v| v >= 0.0));
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        prop_assert!(sorted == (0..d).collect::<Vec<_>>());
    }
}
