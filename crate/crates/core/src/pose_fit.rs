//! Rigid pose fitting: Kabsch alignment, ICP refinement against the object
//! point cloud, hypothesis scoring and selection.

use std::cmp::Ordering;

use nalgebra::{Matrix3, RealField, Vector3, SVD};
use serde::{Deserialize, Serialize};

/// `x = R y + t`: maps object coordinates `y` to camera space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: RealField + Serialize", deserialize = "T: RealField + serde::de::DeserializeOwned"))]
pub struct Pose<T: RealField + Copy> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: RealField + Copy> Pose<T> {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, y: &Vector3<T>) -> Vector3<T> {
        self.rotation * y + self.translation
    }

    pub fn apply_inverse(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation.transpose() * (x - self.translation)
    }

    /// Largest deviation of `RᵀR` from the identity and `|det R − 1|`.
    pub fn orthonormality_error(&self) -> T {
        let gram = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        gram.max((self.rotation.determinant() - T::one()).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FitError {
    #[error("{0} correspondences; at least 3 are needed")]
    TooFew(usize),
    #[error("correspondences are collinear or coincident")]
    Degenerate,
}

/// Least-squares rigid transform taking `object[i]` onto `scene[i]`, with the
/// reflection removed.
pub fn kabsch<T: RealField + Copy>(object: &[Vector3<T>], scene: &[Vector3<T>]) -> Result<Pose<T>, FitError> {
    assert_eq!(object.len(), scene.len(), "correspondence lists differ in length");
    let n = object.len();
    if n < 3 {
        return Err(FitError::TooFew(n));
    }
    let count = T::from_usize(n).expect("count fits the scalar");
    let cy = object.iter().fold(Vector3::zeros(), |a, y| a + y) / count;
    let cx = scene.iter().fold(Vector3::zeros(), |a, x| a + x) / count;
    let mut h = Matrix3::zeros();
    for (y, x) in object.iter().zip(scene) {
        h += (y - cy) * (x - cx).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(Ordering::Equal));
    let (largest, middle, smallest) = (s[order[0]], s[order[1]], order[2]);
    if largest <= T::zero() || middle <= largest * T::default_epsilon().sqrt() {
        return Err(FitError::Degenerate);
    }
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        d[(smallest, smallest)] = -T::one();
    }
    let rotation = v * d * u.transpose();
    Ok(Pose { rotation, translation: cx - rotation * cy })
}

/// Exact nearest-neighbour index over a fixed point cloud. Ties go to the
/// lower point index.
#[derive(Debug, Clone)]
pub struct KdTree<T: RealField + Copy> {
    points: Vec<Vector3<T>>,
    order: Vec<usize>,
}

impl<T: RealField + Copy> KdTree<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, distance)` of the closest point.
    pub fn nearest(&self, q: &Vector3<T>) -> Option<(usize, T)> {
        let mut best: Option<(T, usize)> = None;
        self.search(0, self.order.len(), 0, q, &mut best);
        best.map(|(d2, i)| (i, d2.sqrt()))
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, q: &Vector3<T>, best: &mut Option<(T, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d2 = (p - q).norm_squared();
        let better = match *best {
            None => true,
            Some((b, j)) => d2 < b || (d2 == b && i < j),
        };
        if better {
            *best = Some((d2, i));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= T::zero() { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, depth + 1, q, best);
        if best.is_none_or(|(b, _)| diff * diff <= b) {
            self.search(far.0, far.1, depth + 1, q, best);
        }
    }
}

fn build<T: RealField + Copy>(points: &[Vector3<T>], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].partial_cmp(&points[b][axis]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    /// Associations farther than this fraction of the diameter are ignored.
    pub gate_fraction: f64,
    /// Fraction of the closest associations used for fitting and scoring.
    pub trim_fraction: f64,
    pub max_iterations: usize,
    /// Stop once the pose moves less than this (meters).
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig { gate_fraction: 0.1, trim_fraction: 0.8, max_iterations: 20, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<T: RealField + Copy> {
    /// `(object coordinate, scene point)` pairs.
    pub correspondences: Vec<(Vector3<T>, Vector3<T>)>,
    pub pose: Pose<T>,
    /// Trimmed mean closest-point distance; `None` stands for `∞`.
    pub score: Option<T>,
    pub refined: bool,
    pub iterations: usize,
}

impl<T: RealField + Copy> Hypothesis<T> {
    pub fn from_correspondences(correspondences: Vec<(Vector3<T>, Vector3<T>)>) -> Result<Self, FitError> {
        let (object, scene): (Vec<_>, Vec<_>) = correspondences.iter().copied().unzip();
        let pose = kabsch(&object, &scene)?;
        Ok(Hypothesis { correspondences, pose, score: None, refined: false, iterations: 0 })
    }
}

struct Association<T> {
    score: T,
    /// `(scene point index, model point index)` of the trimmed set.
    pairs: Vec<(usize, usize)>,
}

fn associate<T: RealField + Copy>(
    scene: &[Vector3<T>],
    model: &KdTree<T>,
    pose: &Pose<T>,
    gate: T,
    trim: f64,
) -> Option<Association<T>> {
    let mut hits: Vec<(T, usize, usize)> = scene
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let (j, d) = model.nearest(&pose.apply_inverse(x))?;
            (d <= gate).then_some((d, i, j))
        })
        .collect();
    if hits.is_empty() {
        return None;
    }
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    let keep = ((hits.len() as f64 * trim).ceil() as usize).clamp(1, hits.len());
    hits.truncate(keep);
    let total = hits.iter().fold(T::zero(), |a, h| a + h.0);
    let score = total / T::from_usize(keep).expect("count fits the scalar");
    Some(Association { score, pairs: hits.into_iter().map(|(_, i, j)| (i, j)).collect() })
}

fn pose_change<T: RealField + Copy>(a: &Pose<T>, b: &Pose<T>, radius: T) -> T {
    (a.translation - b.translation).norm() + (a.rotation - b.rotation).norm() * radius
}

/// Refines the pose by aligning the hypothesis's scene points to their
/// closest object points. A step is kept only if it does not raise the
/// score, so the score never increases. If no scene point associates within
/// the gate, the pose is kept and the score is `∞`.
pub fn icp_refine<T: RealField + Copy>(h: &Hypothesis<T>, model: &KdTree<T>, diameter: T, cfg: &IcpConfig) -> Hypothesis<T> {
    let scene: Vec<Vector3<T>> = h.correspondences.iter().map(|c| c.1).collect();
    let gate = T::from_f64(cfg.gate_fraction).expect("convertible") * diameter;
    let tolerance = T::from_f64(cfg.tolerance).expect("convertible");
    let radius = diameter / (T::one() + T::one());
    let mut out = Hypothesis { refined: true, iterations: 0, score: None, ..h.clone() };
    let Some(mut current) = associate(&scene, model, &h.pose, gate, cfg.trim_fraction) else {
        return out;
    };
    out.score = Some(current.score);
    for _ in 0..cfg.max_iterations {
        if current.pairs.len() < 3 {
            break;
        }
        let object: Vec<Vector3<T>> = current.pairs.iter().map(|&(_, j)| model.points()[j]).collect();
        let targets: Vec<Vector3<T>> = current.pairs.iter().map(|&(i, _)| scene[i]).collect();
        let Ok(pose) = kabsch(&object, &targets) else { break };
        let Some(next) = associate(&scene, model, &pose, gate, cfg.trim_fraction) else { break };
        if next.score > current.score {
            break;
        }
        let moved = pose_change(&out.pose, &pose, radius);
        out.pose = pose;
        out.score = Some(next.score);
        out.iterations += 1;
        current = next;
        if moved < tolerance {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// Every score was `∞`.
    pub low_confidence: bool,
}

/// Lowest score wins; ties go to more correspondences, then the lower index.
pub fn select_best<T: RealField + Copy>(hypotheses: &[Hypothesis<T>]) -> Option<Selection> {
    let key = |h: &Hypothesis<T>| h.score;
    let mut best: Option<usize> = None;
    for (i, h) in hypotheses.iter().enumerate() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let current = &hypotheses[b];
        let ord = match (key(h), key(current)) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        let wins = ord == Ordering::Less || (ord == Ordering::Equal && h.correspondences.len() > current.correspondences.len());
        if wins {
            best = Some(i);
        }
    }
    best.map(|index| Selection { index, low_confidence: hypotheses[index].score.is_none() })
}

/// Mean displacement of the object points between the two poses, and whether
/// it is strictly below a tenth of the diameter.
pub fn pose_correct<T: RealField + Copy>(estimated: &Pose<T>, truth: &Pose<T>, points: &[Vector3<T>], diameter: T) -> (bool, T) {
    assert!(!points.is_empty(), "pose_correct needs object points");
    let total = points.iter().fold(T::zero(), |a, p| a + (estimated.apply(p) - truth.apply(p)).norm());
    let mean = total / T::from_usize(points.len()).expect("count fits the scalar");
    let tenth = diameter / T::from_f64(10.0).expect("convertible");
    (mean < tenth, mean)
}

/// RANSAC iterations needed to draw one all-inlier triple with the given
/// confidence: `⌈ln(1 − confidence) / ln(1 − rate³)⌉`.
pub fn ransac_iterations(inlier_rate: f64, confidence: f64) -> u64 {
    assert!(inlier_rate > 0.0 && inlier_rate < 1.0, "inlier rate must lie in (0, 1)");
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must lie in (0, 1)");
    let n = (-confidence).ln_1p() / (-inlier_rate.powi(3)).ln_1p();
    (n.ceil() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
        (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-scale..scale))).collect()
    }

    #[test]
    fn kabsch_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 10, 1.0);
        let p = kabsch(&pts, &pts).unwrap();
        assert!((p.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(p.translation.norm() < 1e-12);
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let moved: Vec<_> = pts.iter().map(|y| y + shift).collect();
        let p = kabsch(&pts, &moved).unwrap();
        assert!((p.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!((p.translation - shift).norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let r = Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
            let t = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let pts = random_points(&mut rng, 10, 0.5);
            let moved: Vec<_> = pts.iter().map(|y| r * y + t).collect();
            let p = kabsch(&pts, &moved).unwrap();
            assert!((p.rotation - r.matrix()).norm() < 1e-9);
            assert!((p.translation - t).norm() < 1e-9);
        }
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        let a = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        assert_eq!(kabsch(&a, &a).unwrap_err(), FitError::TooFew(2));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(kabsch(&line, &line).unwrap_err(), FitError::Degenerate);
    }

    #[test]
    fn kabsch_never_returns_a_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pts = random_points(&mut rng, 6, 1.0);
            // mirrored targets: the best proper rotation is still a rotation
            let mirrored: Vec<_> = pts.iter().map(|y| Vector3::new(-y.x, y.y, y.z)).collect();
            let p = kabsch(&pts, &mirrored).unwrap();
            assert!(p.orthonormality_error() < 1e-9);
            // planar input, where the reflection is an exact fit
            let flat: Vec<_> = pts.iter().map(|y| Vector3::new(y.x, y.y, 0.0)).collect();
            let flipped: Vec<_> = flat.iter().map(|y| Vector3::new(y.x, -y.y, 0.0)).collect();
            let p = kabsch(&flat, &flipped).unwrap();
            assert!(p.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn kd_tree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = random_points(&mut rng, 500, 1.0);
        pts.extend(pts.clone().into_iter().take(20));
        let tree = KdTree::new(pts.clone());
        for _ in 0..300 {
            let q = Vector3::from_fn(|_, _| rng.random_range(-1.2..1.2));
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, p) in pts.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, i);
                }
            }
            let (i, d) = tree.nearest(&q).unwrap();
            assert_eq!(i, best.1);
            assert_eq!(d, best.0.sqrt());
        }
        assert!(KdTree::<f64>::new(vec![]).nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn select_best_examples() {
        let h = |s: Option<f64>, k: usize| Hypothesis {
            correspondences: vec![(Vector3::zeros(), Vector3::zeros()); k],
            pose: Pose::identity(),
            score: s,
            refined: true,
            iterations: 0,
        };
        let hs = vec![h(Some(0.3), 3), h(Some(0.1), 3), h(Some(0.2), 3)];
        assert_eq!(select_best(&hs), Some(Selection { index: 1, low_confidence: false }));
        assert_eq!(select_best::<f64>(&[]), None);
        let all_inf = vec![h(None, 3), h(None, 5), h(None, 5)];
        assert_eq!(select_best(&all_inf), Some(Selection { index: 1, low_confidence: true }));
        let tie = vec![h(Some(0.1), 3), h(Some(0.1), 4)];
        assert_eq!(select_best(&tie).unwrap().index, 1);
    }

    #[test]
    fn pose_correct_boundary_is_strict() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let gt = Pose::identity();
        assert_eq!(pose_correct(&gt, &gt, &pts, 1.0), (true, 0.0));
        let off = Pose { rotation: Matrix3::identity(), translation: Vector3::new(0.125, 0.0, 0.0) };
        let (ok, d) = pose_correct(&off, &gt, &pts, 1.25);
        assert_eq!(d, 0.125);
        assert!(!ok);
    }

    #[test]
    fn ransac_counts() {
        let n = ransac_iterations(0.005, 0.95);
        assert!((n as f64 - 24_000_000.0).abs() <= 0.05 * 24_000_000.0, "{n}");
        assert_eq!(ransac_iterations(0.9999, 0.95), 1);
        assert_eq!(ransac_iterations(0.5, 1e-12), 1);
    }
}
