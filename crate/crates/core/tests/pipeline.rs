use std::sync::Arc;

use gmpose::pipeline::{run_bench, run_pipeline, PipelineConfig, PipelineRun, Status};
use gmpose::pose_model::{HyperParams, RING_SIZE};
use gmpose::submodels::SubmodelScheme;
use gmpose::synth::{generate_scene, GeneratedScene, SyntheticScenario};

fn solve(s: &SyntheticScenario, cfg: &PipelineConfig) -> (GeneratedScene, PipelineRun) {
    let g = generate_scene(s).unwrap();
    let run = run_pipeline(&Arc::new(g.scene.clone()), Some(&g.object_points), Some(&g.truth), cfg).unwrap();
    (g, run)
}

#[test]
fn defaults_are_the_published_settings() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.stage_one, HyperParams { alpha: 0.21, beta: 23.1, gamma: 0.0048 });
    assert_eq!(cfg.stage_two, HyperParams { alpha: 0.2, beta: 2.0, gamma: 0.0 });
    assert_eq!(cfg.trws.iterations, 10);
    assert_eq!(cfg.scheme, SubmodelScheme::Components);
}

#[test]
fn shipped_coarse_config_matches_the_preset() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/coarse-grid.toml")).unwrap();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::coarse_grid());
    assert!((PipelineConfig::coarse_grid().stage_one.gamma - 0.0048 / RING_SIZE as f64).abs() < 1e-15);
}

#[test]
fn config_parsing_rejects_bad_values() {
    assert!(PipelineConfig::from_toml("[trws]\niterations = 0").is_err());
    assert!(PipelineConfig::from_toml("[stage_one]\nalpha = -1.0\nbeta = 1.0\ngamma = 0.0").is_err());
    assert!(PipelineConfig::from_toml("[icp]\ntrim_fraction = 1.5").is_err());
    assert!(PipelineConfig::from_toml("unknown = 3").is_err());
    assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    assert_eq!(PipelineConfig::from_toml("scheme = \"per-node\"").unwrap().scheme, SubmodelScheme::PerNode);
}

#[test]
fn noise_free_scene_is_solved() {
    let s = SyntheticScenario { inlier_rate: 1.0, coord_noise_sigma: 0.0, visible_fraction: 1.0, seed: 21, ..Default::default() };
    let (_, run) = solve(&s, &PipelineConfig::coarse_grid());
    let r = &run.report;
    assert_eq!(r.status, Status::Detected);
    let sel = r.selected.as_ref().unwrap();
    assert!(sel.correspondences >= 3);
    let ev = r.evaluation.as_ref().unwrap();
    assert!(ev.correct, "{ev:?}");
    assert!(ev.average_distance.unwrap() < 1e-6);
}

#[test]
fn clutter_only_scene_has_no_detection() {
    let s = SyntheticScenario { inlier_rate: 0.0, seed: 3, ..Default::default() };
    let (_, run) = solve(&s, &PipelineConfig::coarse_grid());
    let r = &run.report;
    assert_eq!(r.status, Status::NoDetection);
    assert!(r.selected.is_none());
    assert_eq!(r.hypothesis_count, 0);
    let ev = r.evaluation.as_ref().unwrap();
    assert!(!ev.correct);
    assert_eq!(ev.average_distance, None);
}

/// With the default transition cost an isolated inlier pays 48·γ·β ≈ 5.3,
/// far more than any unary gain; on a 32x24 grid no object is large enough,
/// and the relaxation certifies the all-outlier labeling.
#[test]
fn default_stage_one_keeps_nothing_on_coarse_grids() {
    let s = SyntheticScenario { seed: 5, ..Default::default() };
    let (_, run) = solve(&s, &PipelineConfig::default());
    let one = &run.report.stage_one;
    assert_eq!(one.inliers, 0);
    let energy = one.energy.unwrap();
    assert!((energy - one.lower_bound).abs() < 1e-6 * energy, "{} vs {}", one.lower_bound, energy);
}

#[test]
fn label_one_nodes_fit_in_one_diameter() {
    for scheme in [SubmodelScheme::Components, SubmodelScheme::PerNode] {
        let cfg = PipelineConfig { scheme, ..PipelineConfig::coarse_grid() };
        for seed in 0..6 {
            let s = SyntheticScenario { seed, inlier_rate: 0.6, ..Default::default() };
            let (g, run) = solve(&s, &cfg);
            let Some(master) = &run.master else { continue };
            for res in &run.decomposed {
                let ones = res.labeling.nodes_with(1);
                for (k, &i) in ones.iter().enumerate() {
                    for &j in &ones[k + 1..] {
                        let (u, v) = (master.grid_nodes[i], master.grid_nodes[j]);
                        let d = (g.scene.nodes[u].x - g.scene.nodes[v].x).norm();
                        assert!(d <= g.scene.diameter, "{scheme:?} seed {seed}: {u}-{v} at {d}");
                    }
                }
            }
            assert_eq!(run.report.stage_two.as_ref().unwrap().exclusion_violations, 0);
        }
    }
}

#[test]
fn canonical_reports_repeat_byte_for_byte() {
    let s = SyntheticScenario { seed: 8, ..Default::default() };
    let cfg = PipelineConfig::coarse_grid();
    let (_, a) = solve(&s, &cfg);
    let (_, b) = solve(&s, &cfg);
    let text = a.report.to_json(true);
    assert_eq!(text, b.report.to_json(true));
    assert!(!text.contains("timings"));
    assert!(a.report.to_json(false).contains("total_ms"));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["version"], 1);
}

#[test]
fn missing_object_model_falls_back_to_residual_scores() {
    let g = generate_scene(&SyntheticScenario { seed: 2, ..Default::default() }).unwrap();
    let run = run_pipeline(&Arc::new(g.scene), None, Some(&g.truth), &PipelineConfig::coarse_grid()).unwrap();
    let r = &run.report;
    assert!(r.evaluation.is_none());
    assert!(r.warnings.iter().any(|w| w.contains("no object model")));
    assert!(r.hypotheses.iter().all(|h| h.score.is_some()));
}

#[test]
fn bench_summarizes_each_scene() {
    let b = run_bench(&SyntheticScenario::default(), &PipelineConfig::coarse_grid(), 3, 40).unwrap();
    assert_eq!(b.scenes, 3);
    assert_eq!(b.per_scene.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
    assert_eq!(b.correct, b.per_scene.iter().filter(|s| s.correct).count());
    assert!(b.max_runtime_ms >= b.mean_runtime_ms);
}
