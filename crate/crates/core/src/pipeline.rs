//! The full hypothesis-generation pipeline on one scene: stage-one TRW-S,
//! stage-two decomposition with QPBO, Kabsch initialisation, ICP scoring and
//! selection.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::NodeId;
use crate::pose_fit::{icp_refine, pose_correct, select_best, FitError, Hypothesis, IcpConfig, KdTree, Pose};
use crate::pose_model::{build_stage_one_model, build_stage_two_master, HyperParams, PoseModelError, StageTwoMaster};
use crate::submodels::{
    connected_components, enumerate_per_node, enumerate_submodels, filter_components, solve_decomposed, to_zero_form,
    DecomposedResult, SubmodelError, SubmodelScheme, SubmodelSpec, TYPICAL_SUBMODEL_LIMIT,
};
use crate::synth::{generate_scene, GroundTruth, SynthError, SyntheticScenario};
use crate::scene::SceneObservation;
use crate::trws::{extract_inliers, solve_trws, TrwsConfig, TrwsError};

pub const REPORT_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub stage_one: HyperParams,
    pub stage_two: HyperParams,
    pub trws: TrwsConfig,
    pub icp: IcpConfig,
    pub scheme: SubmodelScheme,
    /// Seed for scene generation in `generate` and `bench`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stage_one: HyperParams::STAGE_ONE,
            stage_two: HyperParams::STAGE_TWO,
            trws: TrwsConfig::default(),
            icp: IcpConfig::default(),
            scheme: SubmodelScheme::Components,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Defaults with [`HyperParams::STAGE_ONE_COARSE`] for stage one.
    pub fn coarse_grid() -> Self {
        PipelineConfig { stage_one: HyperParams::STAGE_ONE_COARSE, ..Default::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.stage_one.validate().map_err(|e| format!("stage_one: {e}"))?;
        cfg.stage_two.validate().map_err(|e| format!("stage_two: {e}"))?;
        if cfg.trws.iterations == 0 {
            return Err("trws.iterations must be at least 1".into());
        }
        let icp = &cfg.icp;
        if !(icp.trim_fraction > 0.0 && icp.trim_fraction <= 1.0) || icp.gate_fraction <= 0.0 || icp.tolerance < 0.0 {
            return Err("icp: trim_fraction must lie in (0, 1], gate_fraction must be positive, tolerance non-negative".into());
        }
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] PoseModelError),
    #[error(transparent)]
    Trws(#[from] TrwsError),
    #[error(transparent)]
    Submodel(#[from] SubmodelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Detected,
    NoDetection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Pose<f64>> for PoseReport {
    fn from(p: &Pose<f64>) -> Self {
        let r = &p.rotation;
        PoseReport {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneReport {
    pub inliers: usize,
    pub lower_bound: f64,
    /// `None` when the rounded labeling has infinite energy.
    pub energy: Option<f64>,
    pub bound_history: Vec<f64>,
    pub fallback_nodes: usize,
    pub saturated_messages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelReport {
    pub seed: usize,
    pub members: Vec<usize>,
    pub nodes: usize,
    pub labeled_one: usize,
    pub unlabeled: usize,
    pub demoted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoReport {
    pub scheme: SubmodelScheme,
    pub master_nodes: usize,
    pub components: usize,
    pub kept_components: usize,
    pub submodel_count: usize,
    pub submodels: Vec<SubmodelReport>,
    /// Label-1 pairs farther apart than the diameter, over all submodels.
    pub exclusion_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub submodel: usize,
    pub correspondences: usize,
    /// `None` stands for an infinite score.
    pub score: Option<f64>,
    pub icp_iterations: usize,
    pub pose: PoseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedReport {
    pub index: usize,
    pub score: Option<f64>,
    pub low_confidence: bool,
    pub correspondences: usize,
    pub pose: PoseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: bool,
    /// `None` when nothing was detected.
    pub average_distance: Option<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stage_one_ms: f64,
    pub stage_two_ms: f64,
    pub fitting_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u64,
    pub status: Status,
    pub grid: [usize; 2],
    pub diameter: f64,
    pub stage_one: StageOneReport,
    pub stage_two: Option<StageTwoReport>,
    pub hypothesis_count: usize,
    pub hypotheses: Vec<HypothesisReport>,
    pub selected: Option<SelectedReport>,
    /// Present when the scene carries ground truth and an object model; a
    /// run without detection counts as incorrect.
    pub evaluation: Option<Evaluation>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl RunReport {
    /// Pretty JSON; `canonical` drops timings so repeated runs compare equal
    /// byte for byte.
    pub fn to_json(&self, canonical: bool) -> String {
        let mut s = if canonical {
            serde_json::to_string_pretty(&RunReport { timings: None, ..self.clone() })
        } else {
            serde_json::to_string_pretty(self)
        }
        .expect("report serializes");
        s.push('\n');
        s
    }
}

/// Everything a run produces, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub inliers: Vec<NodeId>,
    pub master: Option<StageTwoMaster<f64>>,
    pub decomposed: Vec<DecomposedResult<f64>>,
    pub hypotheses: Vec<Hypothesis<f64>>,
}

fn evaluate(
    pose: Option<&Pose<f64>>,
    truth: Option<&GroundTruth>,
    object_points: Option<&[Vector3<f64>]>,
    diameter: f64,
) -> Option<Evaluation> {
    let (truth, points) = (truth?, object_points.filter(|p| !p.is_empty())?);
    let threshold = 0.1 * diameter;
    Some(match pose {
        Some(p) => {
            let (correct, d) = pose_correct(p, &truth.pose, points, diameter);
            Evaluation { correct, average_distance: Some(d), threshold }
        }
        None => Evaluation { correct: false, average_distance: None, threshold },
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Label-1 pairs of `labels` (master numbering) farther apart than `D`.
pub fn exclusion_violations(scene: &SceneObservation, master: &StageTwoMaster<f64>, ones: &[usize]) -> usize {
    let mut count = 0;
    for (k, &i) in ones.iter().enumerate() {
        for &j in &ones[k + 1..] {
            let (u, v) = (master.grid_nodes[i], master.grid_nodes[j]);
            if (scene.nodes[u].x - scene.nodes[v].x).norm() > scene.diameter {
                count += 1;
            }
        }
    }
    count
}

/// A label-1 set Kabsch rejected: `(result index, error)`.
pub type Dropped = (usize, FitError);

/// One hypothesis per distinct label-1 set of at least three nodes. The
/// second value lists the sets Kabsch rejected.
pub fn cluster_hypotheses(
    scene: &SceneObservation,
    master: &StageTwoMaster<f64>,
    results: &[DecomposedResult<f64>],
) -> (Vec<(usize, Hypothesis<f64>)>, Vec<Dropped>) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut dropped = Vec::new();
    for (r, result) in results.iter().enumerate() {
        let ones = result.labeling.nodes_with(1);
        if ones.len() < 3 || !seen.insert(ones.clone()) {
            continue;
        }
        let correspondences = ones
            .iter()
            .map(|&i| {
                let u = master.grid_nodes[i];
                (scene.nodes[u].candidates[master.candidates[i]].l, scene.nodes[u].x)
            })
            .collect();
        match Hypothesis::from_correspondences(correspondences) {
            Ok(h) => out.push((r, h)),
            Err(e) => dropped.push((r, e)),
        }
    }
    (out, dropped)
}

/// Trimmed mean Kabsch residual, the score used when no object model is
/// available.
fn residual_score(h: &Hypothesis<f64>, trim: f64) -> Option<f64> {
    let mut r: Vec<f64> = h.correspondences.iter().map(|(y, x)| (h.pose.apply(y) - x).norm()).collect();
    r.sort_by(f64::total_cmp);
    let keep = ((r.len() as f64 * trim).ceil() as usize).clamp(1, r.len());
    Some(r[..keep].iter().sum::<f64>() / keep as f64)
}

pub fn run_pipeline(
    scene: &Arc<SceneObservation>,
    object_points: Option<&[Vector3<f64>]>,
    truth: Option<&GroundTruth>,
    cfg: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    let start = Instant::now();
    let mut warnings = Vec::new();

    let stage_one = build_stage_one_model::<f64>(scene, &cfg.stage_one)?;
    let trws = solve_trws(&stage_one, &cfg.trws)?;
    let inliers = extract_inliers(&trws.labeling, |u| scene.outlier_label(u));
    if !trws.diagnostics.fallback_nodes.is_empty() {
        warnings.push(format!("{} nodes fell back to their unary minimum during rounding", trws.diagnostics.fallback_nodes.len()));
    }
    let stage_one_report = StageOneReport {
        inliers: inliers.len(),
        lower_bound: trws.lower_bound,
        energy: stage_one.evaluate_energy(&trws.labeling).expect("labeling from the solver").finite(),
        bound_history: trws.bound_history.clone(),
        fallback_nodes: trws.diagnostics.fallback_nodes.len(),
        saturated_messages: trws.diagnostics.saturated_messages,
    };
    let stage_one_ms = ms(start);

    let mut report = RunReport {
        version: REPORT_FORMAT_VERSION,
        status: Status::NoDetection,
        grid: [scene.grid_width, scene.grid_height],
        diameter: scene.diameter,
        stage_one: stage_one_report,
        stage_two: None,
        hypothesis_count: 0,
        hypotheses: Vec::new(),
        selected: None,
        evaluation: None,
        warnings: Vec::new(),
        timings: None,
    };
    let mut run = PipelineRun { report: report.clone(), inliers: inliers.clone(), master: None, decomposed: Vec::new(), hypotheses: Vec::new() };
    if inliers.is_empty() {
        report.evaluation = evaluate(None, truth, object_points, scene.diameter);
        report.warnings = warnings;
        report.timings = Some(Timings { stage_one_ms, stage_two_ms: 0.0, fitting_ms: 0.0, total_ms: ms(start) });
        run.report = report;
        return Ok(run);
    }

    let t2 = Instant::now();
    let master = build_stage_two_master::<f64>(scene, &cfg.stage_two, &inliers, &trws.labeling)?;
    let (zero_form, _) = to_zero_form(&master.model)?;
    let master = StageTwoMaster { model: zero_form, ..master };
    let components = connected_components(&inliers, scene.grid_width, scene.grid_height);
    let component_count = components.len();
    let kept = filter_components(components);
    let grid_specs: Vec<SubmodelSpec> = match cfg.scheme {
        SubmodelScheme::Components => enumerate_submodels(&kept, scene),
        SubmodelScheme::PerNode => enumerate_per_node(&inliers, scene),
    };
    let specs: Vec<SubmodelSpec> = grid_specs
        .iter()
        .map(|s| s.map_nodes(|u| master.master_index(u)).expect("spec nodes are inliers"))
        .collect();
    if specs.len() > TYPICAL_SUBMODEL_LIMIT {
        warnings.push(format!("{} submodels (usually at most {TYPICAL_SUBMODEL_LIMIT})", specs.len()));
    }
    let decomposed = solve_decomposed(&master.model, &specs)?;
    let mut violations = 0;
    let submodels = decomposed
        .iter()
        .map(|r| {
            let ones = r.labeling.nodes_with(1);
            violations += exclusion_violations(scene, &master, &ones);
            SubmodelReport {
                seed: r.spec.seed,
                members: r.spec.members.clone(),
                nodes: r.spec.nodes.len(),
                labeled_one: ones.len(),
                unlabeled: r.labeling.0.iter().filter(|l| l.is_none()).count(),
                demoted: r.demoted,
            }
        })
        .collect();
    report.stage_two = Some(StageTwoReport {
        scheme: cfg.scheme,
        master_nodes: master.grid_nodes.len(),
        components: component_count,
        kept_components: kept.len(),
        submodel_count: specs.len(),
        submodels,
        exclusion_violations: violations,
    });
    let stage_two_ms = ms(t2);

    let t3 = Instant::now();
    let (clustered, dropped) = cluster_hypotheses(scene, &master, &decomposed);
    for (r, e) in dropped {
        warnings.push(format!("submodel {r}: hypothesis dropped ({e})"));
    }
    let tree = object_points.filter(|p| !p.is_empty()).map(|p| KdTree::new(p.to_vec()));
    if tree.is_none() {
        warnings.push("no object model: hypotheses scored by correspondence residual".into());
    }
    let refined: Vec<(usize, Hypothesis<f64>)> = clustered
        .into_par_iter()
        .map(|(r, h)| {
            let h = match &tree {
                Some(t) => icp_refine(&h, t, scene.diameter, &cfg.icp),
                None => Hypothesis { score: residual_score(&h, cfg.icp.trim_fraction), ..h },
            };
            (r, h)
        })
        .collect();
    let hypotheses: Vec<Hypothesis<f64>> = refined.iter().map(|(_, h)| h.clone()).collect();
    report.hypotheses = refined
        .iter()
        .map(|(r, h)| HypothesisReport {
            submodel: *r,
            correspondences: h.correspondences.len(),
            score: h.score,
            icp_iterations: h.iterations,
            pose: PoseReport::from(&h.pose),
        })
        .collect();
    report.hypothesis_count = hypotheses.len();
    if let Some(sel) = select_best(&hypotheses) {
        let h = &hypotheses[sel.index];
        report.status = Status::Detected;
        report.selected = Some(SelectedReport {
            index: sel.index,
            score: h.score,
            low_confidence: sel.low_confidence,
            correspondences: h.correspondences.len(),
            pose: PoseReport::from(&h.pose),
        });
    }
    let selected_pose = report.selected.as_ref().map(|s| &hypotheses[s.index].pose);
    report.evaluation = evaluate(selected_pose, truth, object_points, scene.diameter);
    let fitting_ms = ms(t3);

    report.warnings = warnings;
    report.timings = Some(Timings { stage_one_ms, stage_two_ms, fitting_ms, total_ms: ms(start) });
    Ok(PipelineRun { report, inliers, master: Some(master), decomposed, hypotheses })
}

/// Hypothesis counts up to this bound are considered typical.
pub const TYPICAL_HYPOTHESIS_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchScene {
    pub seed: u64,
    pub status: Status,
    pub correct: bool,
    pub average_distance: Option<f64>,
    pub hypothesis_count: usize,
    pub exclusion_violations: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenes: usize,
    pub correct: usize,
    /// Scenes with at most [`TYPICAL_HYPOTHESIS_LIMIT`] hypotheses.
    pub typical_hypothesis_count: usize,
    pub exclusion_violations: usize,
    pub max_runtime_ms: f64,
    pub mean_runtime_ms: f64,
    pub per_scene: Vec<BenchScene>,
}

/// Generates and solves `scenes` scenes with seeds `first_seed..`, one after
/// the other so the per-scene runtimes are not inflated by each other.
pub fn run_bench(
    scenario: &SyntheticScenario,
    cfg: &PipelineConfig,
    scenes: usize,
    first_seed: u64,
) -> Result<BenchReport, PipelineError> {
    let mut per_scene = Vec::with_capacity(scenes);
    for seed in (first_seed..).take(scenes) {
        let g = generate_scene(&SyntheticScenario { seed, ..scenario.clone() })?;
        let scene = Arc::new(g.scene);
        let t = Instant::now();
        let run = run_pipeline(&scene, Some(&g.object_points), Some(&g.truth), cfg)?;
        let runtime_ms = ms(t);
        let r = run.report;
        per_scene.push(BenchScene {
            seed,
            status: r.status,
            correct: r.evaluation.as_ref().is_some_and(|e| e.correct),
            average_distance: r.evaluation.and_then(|e| e.average_distance),
            hypothesis_count: r.hypothesis_count,
            exclusion_violations: r.stage_two.map_or(0, |s| s.exclusion_violations),
            runtime_ms,
        });
    }
    let n = per_scene.len();
    Ok(BenchReport {
        scenes: n,
        correct: per_scene.iter().filter(|s| s.correct).count(),
        typical_hypothesis_count: per_scene.iter().filter(|s| s.hypothesis_count <= TYPICAL_HYPOTHESIS_LIMIT).count(),
        exclusion_violations: per_scene.iter().map(|s| s.exclusion_violations).sum(),
        max_runtime_ms: per_scene.iter().map(|s| s.runtime_ms).fold(0.0, f64::max),
        mean_runtime_ms: if n == 0 { 0.0 } else { per_scene.iter().map(|s| s.runtime_ms).sum::<f64>() / n as f64 },
        per_scene,
    })
}
