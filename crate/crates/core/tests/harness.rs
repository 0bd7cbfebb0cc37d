use maskinject::harness::pipeline::labels_on_grid;
use maskinject::harness::{
    fit_pipeline_readout, gen_scene, guidance_params, render_heatmap, run_pipeline, scene_iou,
    simulate_sam, PipelineConfig, PipelineParams, ReadoutConfig, SamConfig, Scene, SceneConfig,
};
use maskinject::io::{read_label_pgm, read_mask_pgm, write_label_pgm, write_mask_pgm, Fgrid};
use maskinject::mask::masks_from_labelmap;
use maskinject::rng;
use maskinject::tspp::{probability_target, sample_points, SamplerConfig, TsppHeadParams};

fn single(seed: u64) -> Scene {
    gen_scene(&SceneConfig {
        n_objects: 1,
        noise: 0.0,
        seed,
        ..SceneConfig::default()
    })
    .unwrap()
}

#[test]
fn injection_helps_on_clean_single_objects() {
    let head = TsppHeadParams::init(16, &mut rng::rng(7));
    let high = guidance_params(4, 2.0);
    let with = PipelineConfig {
        splits: (1, 1),
        smagg: false,
        ..PipelineConfig::default()
    };
    let without = PipelineConfig {
        inject: false,
        ..with.clone()
    };
    let train: Vec<Scene> = (100..120).map(single).collect();
    let fit = |cfg: &PipelineConfig| PipelineParams {
        head: head.clone(),
        high: high.clone(),
        readout: Some(fit_pipeline_readout(&train, &head, &high, cfg, &ReadoutConfig::default()).unwrap()),
    };
    let (pw, pb) = (fit(&with), fit(&without));
    for seed in 0..8 {
        let s = single(seed);
        let a = run_pipeline(&s, &pw, &PipelineConfig { seed, ..with.clone() }).unwrap();
        let b = run_pipeline(&s, &pb, &PipelineConfig { seed, ..without.clone() }).unwrap();
        let (ia, ib) = (scene_iou(&s, &a).unwrap(), scene_iou(&s, &b).unwrap());
        assert!(ia >= ib, "seed {seed}: {ia} < {ib}");
    }
}

#[test]
fn dense_prompts_recover_every_object() {
    let s = gen_scene(&SceneConfig {
        n_objects: 5,
        seed: 8,
        ..SceneConfig::default()
    })
    .unwrap();
    let mut raw = vec![1.0; 64 * 64];
    raw[0] = 1.0;
    let grid = maskinject::tspp::ProbabilityGrid::from_raw(64, 64, raw).unwrap();
    let pts = sample_points(&grid, 0, 512, 512);
    let ms = simulate_sam(&s.instances, &pts, &SamConfig { splits: (3, 3), seed: 2 });
    assert!(ms.is_disjoint());
    assert_eq!(ms.union(), s.labels.mask_of(0).complement());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = single(4);
    let p = dir.path().join("labels.pgm");
    write_label_pgm(&p, &s.labels).unwrap();
    assert_eq!(read_label_pgm(&p).unwrap(), s.labels);

    let m = s.labels.mask_of(s.object_class[0]);
    let p = dir.path().join("mask.pgm");
    write_mask_pgm(&p, &m).unwrap();
    assert_eq!(read_mask_pgm(&p).unwrap(), m);

    let p = dir.path().join("cost.fgrid");
    let g = Fgrid::from_cost_map(&s.cost);
    g.write(&p).unwrap();
    let back = Fgrid::read(&p).unwrap().to_cost_map::<f64>().unwrap();
    for (a, b) in back.values.iter().zip(&s.cost.values) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn heatmap_pixels_follow_the_colormap() {
    let s = single(6);
    let t = probability_target::<f64>(&masks_from_labelmap(&s.instances), &SamplerConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("probs.ppm");
    render_heatmap(&t.grid.probs, 32, 32, 1, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let header = b"P6\n32 32\n255\n";
    assert!(bytes.starts_with(header));
    let hi = t.grid.probs.iter().copied().fold(f64::MIN, f64::max);
    let lo = t.grid.probs.iter().copied().fold(f64::MAX, f64::min);
    for (i, px) in bytes[header.len()..].chunks_exact(3).enumerate() {
        let v = (t.grid.probs[i] - lo) / (hi - lo);
        assert_eq!(px, [(255.0 * v).round() as u8, 0, (255.0 * (1.0 - v)).round() as u8]);
    }
}

#[test]
fn ground_truth_grid_sampling() {
    let s = single(1);
    let g = labels_on_grid(&s.labels, 512, 512);
    assert_eq!(g, s.labels);
}

#[test]
fn aggregation_never_adds_masks_on_a_suite() {
    let suite = maskinject::harness::gen_suite(&SceneConfig::default(), 12, 20).unwrap();
    let params = PipelineParams {
        head: TsppHeadParams::init(16, &mut rng::rng(12)),
        high: guidance_params(4, 2.0),
        readout: None,
    };
    let outs = maskinject::harness::run_suite(&suite, &params, &PipelineConfig::default()).unwrap();
    for o in &outs {
        assert!(o.diagnostics.n_merged <= o.diagnostics.n_sam);
        assert_eq!(o.merged.union(), o.sam.union());
    }
}

#[test]
fn targeted_prompts_find_more_objects_than_random_ones() {
    use maskinject::harness::{bench_sampling, gen_suite, Strategy};
    for seed in 0..3 {
        let suite = gen_suite(&SceneConfig::default(), 40 + seed, 20).unwrap();
        let r = bench_sampling(&suite, &Strategy::ALL, &SamplerConfig::default(), seed).unwrap();
        let random = r.row(Strategy::RandomK).unwrap().recall;
        let target = r.row(Strategy::TsppTarget).unwrap().recall;
        assert!(random <= target, "suite {seed}: {random} > {target}");
    }
}
