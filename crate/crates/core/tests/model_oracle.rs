use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ranging_core::{
    simulate_received, simulate_time_domain, MeasurementModel, RangingScenario, SystemConfig,
};
use ranging_validation::{rel_err, toy_config};

fn check(config: &SystemConfig, scenarios: usize, seed: u64) {
    let model = MeasurementModel::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..scenarios {
        let k = 1 + s % 6;
        let sc = RangingScenario::random(config, k, 0.0, &mut rng);
        let freq = simulate_received(&sc, &model, &mut rng);
        let time = simulate_time_domain(&sc, config, model.codes());
        let err = rel_err(&freq, &time);
        assert!(err <= 1e-9, "scenario {s} with {k} users: {err:e}");
    }
}

#[test]
fn wimax_frequency_model_matches_samples() {
    check(&SystemConfig::wimax_1024(), 12, 1);
}

#[test]
fn toy_frequency_model_matches_samples() {
    for n in [32, 64, 128] {
        check(&toy_config(n, 4, n as u64), 20, 2);
    }
}
