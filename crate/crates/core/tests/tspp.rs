use maskinject::harness::oracles::oracle_probability_target;
use maskinject::harness::{gen_suite, SceneConfig};
use maskinject::mask::masks_from_labelmap;
use maskinject::rng;
use maskinject::tspp::{
    expected_points, probability_target, sample_points, train_head, AreaMode, SamplerConfig,
    TrainConfig, TrainItem, TsppHeadParams,
};

#[test]
fn target_matches_oracle_and_is_normalised() {
    let suite = gen_suite(&SceneConfig::default(), 21, 6).unwrap();
    for area_mode in [AreaMode::GridCells, AreaMode::Pixels] {
        let cfg = SamplerConfig {
            area_mode,
            ..SamplerConfig::default()
        };
        for s in &suite {
            let gt = masks_from_labelmap(&s.instances);
            let t = probability_target::<f64>(&gt, &cfg).unwrap();
            let want = oracle_probability_target(&gt, &cfg);
            for (a, b) in t.grid.raw.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            let total: usize = t.expected.iter().sum();
            assert!((t.grid.raw_mass() - total as f64).abs() <= 1e-9);
            for (p, r) in t.grid.probs.iter().zip(&t.grid.raw) {
                assert_eq!(*p, r.min(1.0));
            }
        }
    }
}

#[test]
fn expected_points_is_capped_ceiling() {
    let cfg = SamplerConfig::default();
    assert_eq!(expected_points(0, &cfg), 0);
    assert_eq!(expected_points(1, &cfg), 1);
    assert_eq!(expected_points(5, &cfg), 1);
    assert_eq!(expected_points(6, &cfg), 2);
    assert_eq!(expected_points(50, &cfg), 10);
    assert_eq!(expected_points(10_000, &cfg), 10);
}

#[test]
fn sampling_is_a_function_of_the_seed() {
    let s = &gen_suite(&SceneConfig::default(), 2, 1).unwrap()[0];
    let t = probability_target::<f64>(&masks_from_labelmap(&s.instances), &SamplerConfig::default()).unwrap();
    let a = sample_points(&t.grid, 17, 512, 512);
    assert_eq!(a, sample_points(&t.grid, 17, 512, 512));
    let t32 = probability_target::<f32>(&masks_from_labelmap(&s.instances), &SamplerConfig::default()).unwrap();
    assert!((t32.grid.raw_mass() as f64 - t.grid.raw_mass()).abs() < 1e-3);
}

#[test]
fn short_training_run_lowers_the_loss() {
    let base = SceneConfig {
        width: 128,
        height: 128,
        min_size: 16,
        max_size: 48,
        ..SceneConfig::default()
    };
    let suite = gen_suite(&base, 4, 3).unwrap();
    let items: Vec<TrainItem<f64>> = suite
        .iter()
        .map(|s| TrainItem::from_instances(s.cost.clone(), &s.instances, &s.labels, &SamplerConfig::default()).unwrap())
        .collect();
    let init = TsppHeadParams::init(8, &mut rng::rng(3));
    let cfg = TrainConfig {
        steps: 40,
        ..TrainConfig::default()
    };
    let out = train_head(&items, init, &cfg).unwrap();
    assert_eq!(out.trace.len(), 41);
    assert!(out.last().loss < 0.5 * out.initial().loss);
}
