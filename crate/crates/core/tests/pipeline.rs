use std::path::Path;
use std::sync::Arc;

use target_tracking::config::{ExperimentFile, PolicyKind, ScenarioConfig};
use target_tracking::domain::Allocation;
use target_tracking::eval::{oracle_loss, true_expected_loss};
use target_tracking::experiment::{run_experiment, Environment, PolicySettings};
use target_tracking::sim::{NoiseModel, Scenario};

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn shipped_configs_load() {
    let (exp, scenario) = ExperimentFile::load(&configs().join("experiment.toml")).unwrap();
    assert_eq!(exp.policy, PolicyKind::Model1);
    assert_eq!(scenario, ScenarioConfig::default());
    let (exp, scenario) = ExperimentFile::load(&configs().join("model2.toml")).unwrap();
    assert_eq!(exp.policy, PolicyKind::Model2);
    assert_eq!(scenario.horizon, 10_000);
    assert!(!Scenario::<f64>::from_config(&scenario)
        .unwrap()
        .noise()
        .is_tariff_dependent());
}

#[test]
fn fixed_arm_regret_matches_direct_gap_and_grows_linearly() {
    let horizon = 3000;
    let scenario = Scenario::<f64>::from_config(&ScenarioConfig::default()).unwrap();
    let fixed = Allocation::vertex(3, 1);
    // Independent oracle: per-round gap from the scenario's exact losses.
    let gaps: Vec<f64> = scenario
        .contexts(horizon)
        .iter()
        .map(|x| {
            let c = scenario.gen_target(x).unwrap();
            let best = oracle_loss(&scenario, x, c, scenario.grid()).unwrap().0;
            true_expected_loss(&scenario, x, c, &fixed).unwrap() - best
        })
        .collect();
    let settings = PolicySettings::new(0.05, 0.1);
    let report = run_experiment(
        scenario.with_horizon(horizon).unwrap(),
        PolicyKind::Fixed,
        &settings,
        &[0, 1, 2],
    )
    .unwrap();
    let expected: f64 = gaps.iter().sum();
    for l in &report.ledgers {
        assert!((l.final_regret() - expected).abs() <= 1e-9 * expected);
    }
    // Each third of the horizon contributes a comparable positive share.
    let third = horizon / 3;
    let slopes: Vec<f64> = gaps
        .chunks(third)
        .map(|c| c.iter().sum::<f64>() / third as f64)
        .collect();
    let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 1e-4, "{slopes:?}");
    assert!(hi / lo < 2.0, "{slopes:?}");
}

#[test]
fn learners_beat_fixed_arm() {
    let scenario = Scenario::<f64>::from_config(&ScenarioConfig::default()).unwrap();
    let env = Environment::new(Arc::new(scenario), 4000).unwrap();
    let settings = PolicySettings::new(0.05, 0.1);
    let fixed = env.run_seeds(PolicyKind::Fixed, &settings, &[0]).unwrap()[0].final_regret();
    for kind in [
        PolicyKind::Model1KnownGamma,
        PolicyKind::Model2,
        PolicyKind::TariffOnly,
    ] {
        let r = env.run_seeds(kind, &settings, &[0]).unwrap()[0].final_regret();
        assert!(r < fixed, "{kind}: {r} vs fixed {fixed}");
    }
}

#[test]
fn single_precision_pipeline_runs() {
    let scenario = Scenario::<f32>::from_config(&ScenarioConfig::default())
        .unwrap()
        .with_noise(NoiseModel::global(0.02f32).unwrap())
        .unwrap();
    let env = Environment::new(Arc::new(scenario), 1000).unwrap();
    let l32 = env
        .run_seeds(PolicyKind::Model2, &PolicySettings::new(0.05f32, 0.1), &[0])
        .unwrap();
    assert_eq!(l32[0].len(), 1000);
    assert!(l32[0].final_regret().is_finite());
    assert!(l32[0].min_instantaneous_regret().unwrap() >= 0.0);
}
