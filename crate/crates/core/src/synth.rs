//! Synthetic scenes with planted ground truth, standing in for per-pixel
//! forest predictions, and the scene file format.
//!
//! A dense object point cloud is posed in front of a pinhole camera and
//! z-buffered into the node grid. Visible object nodes may carry one true
//! candidate (their object coordinate plus noise); every other candidate is
//! a random object point. Part of the object can be hidden behind an
//! occluder plane; the remaining nodes see a cluttered background plane.

use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::NodeId;
use crate::pose_fit::Pose;
use crate::scene::{Candidate, SceneError, SceneNode, SceneObservation, PIXELS_PER_NODE, TREES};

pub const SCENE_FORMAT_VERSION: u64 = 1;

/// Mean and spread of a clamped normal confidence distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceDist {
    pub mean: f64,
    pub spread: f64,
}

impl ConfidenceDist {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mean + self.spread * z).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceModel {
    /// The correct candidate of an object node.
    pub true_candidate: ConfidenceDist,
    /// Wrong candidates on object nodes.
    pub object: ConfidenceDist,
    /// Candidates on background and occluder nodes.
    pub background: ConfidenceDist,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel {
            true_candidate: ConfidenceDist { mean: 0.9, spread: 0.05 },
            object: ConfidenceDist { mean: 0.7, spread: 0.1 },
            background: ConfidenceDist { mean: 0.15, spread: 0.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectShape {
    /// Random surface points of an axis-aligned ellipsoid.
    Ellipsoid { semi_axes: [f64; 3], points: usize },
    Points { points: Vec<[f64; 3]> },
}

impl Default for ObjectShape {
    fn default() -> Self {
        ObjectShape::Ellipsoid { semi_axes: [0.09, 0.06, 0.045], points: 3000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticScenario {
    pub grid_width: usize,
    pub grid_height: usize,
    /// Focal length in node units.
    pub focal: f64,
    pub object: ObjectShape,
    /// Depth of the object centre, meters.
    pub object_distance: f64,
    /// Largest lateral offset of the object centre, meters.
    pub lateral_range: f64,
    pub visible_fraction: f64,
    /// Probability that a visible object node carries its true candidate.
    pub inlier_rate: f64,
    /// Standard deviation of true object coordinates, meters per axis.
    pub coord_noise_sigma: f64,
    /// Standard deviation of scene depth along the viewing ray, meters.
    pub depth_noise_sigma: f64,
    pub confidence: ConfidenceModel,
    /// Depth of the background plane, meters.
    pub clutter_depth: f64,
    /// Half-width of the uniform depth jitter on the background, meters.
    pub clutter_jitter: f64,
    /// Distance of the occluder in front of the nearest object point, meters.
    pub occluder_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            grid_width: 32,
            grid_height: 24,
            focal: 110.0,
            object: ObjectShape::default(),
            object_distance: 1.0,
            lateral_range: 0.03,
            visible_fraction: 0.8,
            inlier_rate: 0.9,
            coord_noise_sigma: 0.0009,
            depth_noise_sigma: 0.0,
            confidence: ConfidenceModel::default(),
            clutter_depth: 1.4,
            clutter_jitter: 0.05,
            occluder_gap: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("no object node is visible")]
    NoVisibleNodes,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: unsupported scene format version {found} (expected {SCENE_FORMAT_VERSION})")]
    UnsupportedVersion { path: String, found: String },
    #[error("{path}: {source}")]
    Invalid { path: String, source: SceneError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub pose: Pose<f64>,
    /// Index of the true candidate per node, `None` for outliers.
    pub labeling: Vec<Option<usize>>,
    /// Visible object nodes, increasing.
    pub visible_nodes: Vec<NodeId>,
    /// Nodes the object projects to before occlusion.
    pub object_node_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: SceneObservation,
    pub truth: GroundTruth,
    pub object_points: Vec<Vector3<f64>>,
}

/// Largest distance between any two points.
pub fn point_cloud_diameter(points: &[Vector3<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

fn check(cond: bool, what: &str) -> Result<(), SynthError> {
    if cond {
        Ok(())
    } else {
        Err(SynthError::Scenario(what.to_string()))
    }
}

impl SyntheticScenario {
    /// Parses and validates; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: SyntheticScenario = toml::from_str(text).map_err(|e| SynthError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check(self.grid_width > 0 && self.grid_height > 0, "grid dimensions must be positive")?;
        check(self.focal > 0.0, "focal must be positive")?;
        check(self.object_distance > 0.0, "object_distance must be positive")?;
        check(self.lateral_range >= 0.0, "lateral_range must be non-negative")?;
        check((0.0..=1.0).contains(&self.visible_fraction), "visible_fraction must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.inlier_rate), "inlier_rate must lie in [0, 1]")?;
        check(self.coord_noise_sigma >= 0.0, "coord_noise_sigma must be non-negative")?;
        check(self.depth_noise_sigma >= 0.0, "depth_noise_sigma must be non-negative")?;
        check(self.clutter_jitter >= 0.0, "clutter_jitter must be non-negative")?;
        check(self.occluder_gap > 0.0, "occluder_gap must be positive")?;
        let c = &self.confidence;
        for d in [c.true_candidate, c.object, c.background] {
            check(d.spread >= 0.0 && d.mean.is_finite(), "confidence spreads must be non-negative")?;
        }
        match &self.object {
            ObjectShape::Ellipsoid { semi_axes, points } => {
                check(semi_axes.iter().all(|&a| a > 0.0), "ellipsoid semi-axes must be positive")?;
                check(*points >= 2, "the object needs at least two points")?;
            }
            ObjectShape::Points { points } => check(points.len() >= 2, "the object needs at least two points")?,
        }
        Ok(())
    }

    fn object_points(&self, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        match &self.object {
            ObjectShape::Ellipsoid { semi_axes, points } => (0..*points)
                .map(|_| {
                    let d = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal)).normalize();
                    Vector3::new(d.x * semi_axes[0], d.y * semi_axes[1], d.z * semi_axes[2])
                })
                .collect(),
            ObjectShape::Points { points } => points.iter().map(|&p| Vector3::from(p)).collect(),
        }
    }

    fn ray(&self, u: NodeId, depth: f64) -> Vector3<f64> {
        let (col, row) = ((u % self.grid_width) as f64, (u / self.grid_width) as f64);
        let cx = (col + 0.5 - self.grid_width as f64 / 2.0) / self.focal;
        let cy = (row + 0.5 - self.grid_height as f64 / 2.0) / self.focal;
        Vector3::new(cx * depth, cy * depth, depth)
    }
}

/// Deterministic in `s.seed`.
pub fn generate_scene(s: &SyntheticScenario) -> Result<GeneratedScene, SynthError> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let object_points = s.object_points(&mut rng);
    let diameter = point_cloud_diameter(&object_points);
    check(diameter > 0.0, "object points coincide")?;

    let q = Vector4::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
    let rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix().into_inner();
    let lateral = |rng: &mut ChaCha8Rng| if s.lateral_range > 0.0 { rng.random_range(-s.lateral_range..=s.lateral_range) } else { 0.0 };
    let translation = Vector3::new(lateral(&mut rng), lateral(&mut rng), s.object_distance);
    let pose = Pose { rotation, translation };

    // z-buffer: nearest object point per node
    let n = s.grid_width * s.grid_height;
    let mut hit: Vec<Option<(f64, usize)>> = vec![None; n];
    for (i, y) in object_points.iter().enumerate() {
        let x = pose.apply(y);
        if x.z <= 0.0 {
            continue;
        }
        let col = (s.focal * x.x / x.z + s.grid_width as f64 / 2.0).floor();
        let row = (s.focal * x.y / x.z + s.grid_height as f64 / 2.0).floor();
        if col < 0.0 || row < 0.0 || col >= s.grid_width as f64 || row >= s.grid_height as f64 {
            continue;
        }
        let u = row as usize * s.grid_width + col as usize;
        if hit[u].is_none_or(|(z, _)| x.z < z) {
            hit[u] = Some((x.z, i));
        }
    }
    let object_nodes: Vec<NodeId> = (0..n).filter(|&u| hit[u].is_some()).collect();

    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dc, dr) = (angle.cos(), angle.sin());
    let mut by_sweep: Vec<(f64, NodeId)> =
        object_nodes.iter().map(|&u| ((u % s.grid_width) as f64 * dc + (u / s.grid_width) as f64 * dr, u)).collect();
    by_sweep.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let hidden = ((1.0 - s.visible_fraction) * object_nodes.len() as f64).round() as usize;
    let mut occluded = vec![false; n];
    for &(_, u) in &by_sweep[..hidden] {
        occluded[u] = true;
    }
    let visible_nodes: Vec<NodeId> = object_nodes.iter().copied().filter(|&u| !occluded[u]).collect();
    if visible_nodes.is_empty() {
        return Err(SynthError::NoVisibleNodes);
    }
    let nearest = object_nodes.iter().filter_map(|&u| hit[u]).map(|(z, _)| z).fold(f64::INFINITY, f64::min);
    let occluder_depth = (nearest - s.occluder_gap).max(0.05);

    let coord_noise = Normal::new(0.0, s.coord_noise_sigma).expect("valid sigma");
    let depth_noise = Normal::new(0.0, s.depth_noise_sigma).expect("valid sigma");
    let conf = &s.confidence;
    let slots = usize::from(PIXELS_PER_NODE) * usize::from(TREES);
    let mut nodes = Vec::with_capacity(n);
    let mut labeling = vec![None; n];
    for u in 0..n {
        let visible = hit[u].is_some() && !occluded[u];
        let x = match hit[u] {
            Some((_, i)) if visible => {
                let x = pose.apply(&object_points[i]);
                x * (1.0 + depth_noise.sample(&mut rng) / x.z)
            }
            _ if occluded[u] => s.ray(u, occluder_depth),
            _ => {
                let jitter = if s.clutter_jitter > 0.0 { rng.random_range(-s.clutter_jitter..=s.clutter_jitter) } else { 0.0 };
                s.ray(u, s.clutter_depth + jitter)
            }
        };
        let true_slot = (visible && rng.random_bool(s.inlier_rate)).then(|| rng.random_range(0..slots));
        let mut candidates = Vec::with_capacity(slots);
        for slot in 0..slots {
            let (l, p) = if Some(slot) == true_slot {
                let (_, i) = hit[u].expect("visible node");
                let noise = Vector3::from_fn(|_, _| coord_noise.sample(&mut rng));
                (object_points[i] + noise, conf.true_candidate.sample(&mut rng))
            } else {
                let l = *object_points.choose(&mut rng).expect("non-empty cloud");
                let dist = if visible { &conf.object } else { &conf.background };
                (l, dist.sample(&mut rng))
            };
            candidates.push(Candidate { l, p, pixel: (slot / usize::from(TREES)) as u8, tree: (slot % usize::from(TREES)) as u8 });
        }
        labeling[u] = true_slot;
        nodes.push(SceneNode { x, candidates });
    }

    let scene = SceneObservation { grid_width: s.grid_width, grid_height: s.grid_height, nodes, diameter };
    let truth = GroundTruth { pose, labeling, visible_nodes, object_node_count: object_nodes.len() };
    Ok(GeneratedScene { scene, truth, object_points })
}

/// On-disk scene: the observation plus optional object model and truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u64,
    pub grid_width: usize,
    pub grid_height: usize,
    pub diameter: f64,
    pub nodes: Vec<SceneNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_points: Option<Vec<Vector3<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

impl SceneFile {
    pub fn new(scene: SceneObservation, object_points: Option<Vec<Vector3<f64>>>, ground_truth: Option<GroundTruth>) -> Self {
        let SceneObservation { grid_width, grid_height, nodes, diameter } = scene;
        SceneFile { version: SCENE_FORMAT_VERSION, grid_width, grid_height, diameter, nodes, object_points, ground_truth }
    }

    pub fn observation(&self) -> SceneObservation {
        SceneObservation {
            grid_width: self.grid_width,
            grid_height: self.grid_height,
            nodes: self.nodes.clone(),
            diameter: self.diameter,
        }
    }
}

impl From<&GeneratedScene> for SceneFile {
    fn from(g: &GeneratedScene) -> Self {
        SceneFile::new(g.scene.clone(), Some(g.object_points.clone()), Some(g.truth.clone()))
    }
}

pub fn scene_to_json(file: &SceneFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("scene serializes");
    s.push('\n');
    s
}

pub fn save_scene(path: &Path, file: &SceneFile) -> Result<(), SynthError> {
    fs::write(path, scene_to_json(file)).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

/// Parses a scene document; `origin` names it in errors.
pub fn parse_scene(text: &str, origin: &str) -> Result<SceneFile, SynthError> {
    let parse = |e: serde_json::Error| SynthError::Parse { path: origin.to_string(), message: e.to_string() };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse)?;
    match value.get("version") {
        None => return Err(SynthError::Parse { path: origin.to_string(), message: "missing field `version`".into() }),
        Some(v) if v.as_u64() != Some(SCENE_FORMAT_VERSION) => {
            return Err(SynthError::UnsupportedVersion { path: origin.to_string(), found: v.to_string() })
        }
        Some(_) => {}
    }
    let file: SceneFile = serde_json::from_str(text).map_err(parse)?;
    file.observation().validate().map_err(|source| SynthError::Invalid { path: origin.to_string(), source })?;
    Ok(file)
}

pub fn load_scene(path: &Path) -> Result<SceneFile, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
    parse_scene(&text, &path.display().to_string())
}

/// Whitespace-separated `x y z` lines; blank lines and `#` comments skipped.
pub fn parse_xyz(text: &str, origin: &str) -> Result<Vec<Vector3<f64>>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SynthError::Parse { path: origin.to_string(), message: format!("line {}: {message}", i + 1) };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| err(format!("`{f}` is not a number")))?;
        }
        out.push(Vector3::from(p));
    }
    Ok(out)
}

pub fn load_xyz(path: &Path) -> Result<Vec<Vector3<f64>>, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
    parse_xyz(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let s = SyntheticScenario { seed: 7, ..Default::default() };
        assert_eq!(generate_scene(&s).unwrap(), generate_scene(&s).unwrap());
        let other = SyntheticScenario { seed: 8, ..Default::default() };
        assert_ne!(generate_scene(&s).unwrap().scene, generate_scene(&other).unwrap().scene);
    }

    #[test]
    fn noise_free_full_inliers_plant_exact_coordinates() {
        let s = SyntheticScenario { inlier_rate: 1.0, coord_noise_sigma: 0.0, visible_fraction: 1.0, seed: 3, ..Default::default() };
        let g = generate_scene(&s).unwrap();
        assert_eq!(g.truth.visible_nodes.len(), g.truth.object_node_count);
        for &u in &g.truth.visible_nodes {
            let c = &g.scene.nodes[u].candidates[g.truth.labeling[u].unwrap()];
            let x = g.truth.pose.apply(&c.l);
            assert!((x - g.scene.nodes[u].x).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_inlier_rate_has_no_true_candidates() {
        let s = SyntheticScenario { inlier_rate: 0.0, seed: 4, ..Default::default() };
        let g = generate_scene(&s).unwrap();
        assert!(g.truth.labeling.iter().all(Option::is_none));
    }

    #[test]
    fn generated_scenes_are_valid() {
        for seed in 0..5 {
            let g = generate_scene(&SyntheticScenario { seed, ..Default::default() }).unwrap();
            g.scene.validate().unwrap();
            assert_eq!(g.scene.diameter, point_cloud_diameter(&g.object_points));
            let target = 0.8 * g.truth.object_node_count as f64;
            assert!((g.truth.visible_nodes.len() as f64 - target).abs() <= 0.05 * g.truth.object_node_count as f64);
        }
    }

    #[test]
    fn invisible_object_is_an_error() {
        let s = SyntheticScenario { visible_fraction: 0.0, ..Default::default() };
        assert!(matches!(generate_scene(&s), Err(SynthError::NoVisibleNodes)));
        let s = SyntheticScenario { inlier_rate: 1.5, ..Default::default() };
        assert!(matches!(generate_scene(&s), Err(SynthError::Scenario(_))));
    }

    #[test]
    fn xyz_parsing() {
        let pts = parse_xyz("# cloud\n0 0 0\n\n1 2.5 -3 # tail\n", "t").unwrap();
        assert_eq!(pts, vec![Vector3::zeros(), Vector3::new(1.0, 2.5, -3.0)]);
        let e = parse_xyz("0 0\n", "t").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        assert!(parse_xyz("0 0 x\n", "t").is_err());
    }
}
