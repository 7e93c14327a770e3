//! Energies of the pose model.
//!
//! Stage one labels every grid node with one of its candidates or the
//! outlier label, over a sparse ring neighbourhood. Stage two keeps the
//! stage-one inliers, reduces each to the binary choice "keep the chosen
//! candidate (1) or drop it (0)", and connects all of them.

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::model::{BinaryModel, GraphicalModel, Labeling, ModelBuilder, ModelError, NodeId, PairwiseFn, PartialLabeling};
use crate::scalar::Scalar;
use crate::scene::{SceneError, SceneObservation, MAX_CANDIDATES};

/// Neighbour ranks `9..=56` by grid distance: the 48 nearest nodes after the
/// immediate 8.
pub const RING_SKIP: usize = 8;
pub const RING_SIZE: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl HyperParams {
    pub const STAGE_ONE: HyperParams = HyperParams { alpha: 0.21, beta: 23.1, gamma: 0.0048 };
    pub const STAGE_TWO: HyperParams = HyperParams { alpha: 0.2, beta: 2.0, gamma: 0.0 };
    /// Stage one for grids about ten times coarser than 320x240, with gamma
    /// divided by the ring size (0.0048 / 48). An isolated inlier pays
    /// `RING_SIZE * gamma * beta` in transitions; with the default gamma that
    /// is 5.3, over twenty times the largest unary gain, and the all-outlier
    /// labeling is optimal for any object that fits a 32x24 grid.
    pub const STAGE_ONE_COARSE: HyperParams = HyperParams { alpha: 0.21, beta: 23.1, gamma: 0.0001 };

    pub fn validate(&self) -> Result<(), PoseModelError> {
        let ok = self.alpha > 0.0 && self.beta >= 0.0 && self.gamma >= 0.0;
        if ok && self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(PoseModelError::HyperParams(*self))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseModelError {
    #[error("invalid hyper-parameters {0:?}")]
    HyperParams(HyperParams),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stage two needs at least one inlier")]
    NoInliers,
    #[error("node {0} is listed as an inlier but carries the outlier label")]
    OutlierInlier(NodeId),
    #[error("labeling has {got} entries for {expected} nodes")]
    LabelingSize { expected: usize, got: usize },
}

/// `|‖l_u − l_v‖ − ‖x_u − x_v‖|` when the scene points are within `diameter`
/// of each other, `∞` otherwise.
pub fn pairwise_cost(l_u: &Vector3<f64>, l_v: &Vector3<f64>, x_u: &Vector3<f64>, x_v: &Vector3<f64>, diameter: f64) -> Cost<f64> {
    let scene = (x_u - x_v).norm();
    if scene > diameter {
        Cost::Infinite
    } else {
        Cost::Finite(((l_u - l_v).norm() - scene).abs())
    }
}

fn convert<T: Scalar>(c: Cost<f64>) -> Cost<T> {
    match c {
        Cost::Finite(x) => Cost::Finite(T::from_f64_lossy(x)),
        Cost::Infinite => Cost::Infinite,
    }
}

/// Canonical `(u, v)` edges with `u < v`, sorted: each node is joined to its
/// neighbour ranks `9..=56` by Euclidean grid distance (ties by row-major
/// index), and the relation is symmetrized.
pub fn build_sparse_neighborhood(grid_width: usize, grid_height: usize) -> Vec<(NodeId, NodeId)> {
    let n = grid_width * grid_height;
    let wanted = RING_SKIP + RING_SIZE;
    let mut edges = Vec::with_capacity(n * RING_SIZE);
    let mut ranked: Vec<(usize, NodeId)> = Vec::new();
    for u in 0..n {
        let (cu, ru) = ((u % grid_width) as isize, (u / grid_width) as isize);
        // Grow a square window until the wanted rank lies inside its inscribed disk.
        let mut radius: isize = 4;
        loop {
            ranked.clear();
            for r in (ru - radius).max(0)..=(ru + radius).min(grid_height as isize - 1) {
                for c in (cu - radius).max(0)..=(cu + radius).min(grid_width as isize - 1) {
                    let v = r as usize * grid_width + c as usize;
                    if v != u {
                        let d2 = ((r - ru) * (r - ru) + (c - cu) * (c - cu)) as usize;
                        ranked.push((d2, v));
                    }
                }
            }
            ranked.sort_unstable();
            let covers_grid = radius as usize >= grid_width.max(grid_height);
            let settled = ranked.len() >= wanted && ranked[wanted - 1].0 <= (radius * radius) as usize;
            if covers_grid || settled {
                break;
            }
            radius *= 2;
        }
        for &(_, v) in ranked.iter().skip(RING_SKIP).take(RING_SIZE) {
            edges.push((u.min(v), u.max(v)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Unary table of a node: `(1 − p)α` per candidate, then the outlier cost
/// `α Σp / 12` summed over the node's candidates.
fn stage_one_unary(scene: &SceneObservation, u: NodeId, alpha: f64) -> Vec<f64> {
    let cands = &scene.nodes[u].candidates;
    let mut row: Vec<f64> = cands.iter().map(|c| (1.0 - c.p) * alpha).collect();
    row.push(outlier_unary(scene, u, alpha));
    row
}

pub fn outlier_unary(scene: &SceneObservation, u: NodeId, alpha: f64) -> f64 {
    scene.nodes[u].candidates.iter().map(|c| c.p).sum::<f64>() * alpha / MAX_CANDIDATES as f64
}

pub fn build_stage_one_model<T: Scalar>(scene: &Arc<SceneObservation>, hp: &HyperParams) -> Result<GraphicalModel<T>, PoseModelError> {
    scene.validate()?;
    hp.validate()?;
    let mut b = ModelBuilder::<T>::new();
    for u in 0..scene.node_count() {
        b.add_node(stage_one_unary(scene, u, hp.alpha).into_iter().map(|c| convert(Cost::Finite(c))).collect());
    }
    for (u, v) in build_sparse_neighborhood(scene.grid_width, scene.grid_height) {
        b.add_lazy_edge(u, v);
    }
    let gamma = hp.gamma;
    let s = Arc::clone(scene);
    let f: Arc<PairwiseFn<T>> = Arc::new(move |u, v, a, b| {
        let (nu, nv) = (&s.nodes[u], &s.nodes[v]);
        let (ou, ov) = (a == nu.candidates.len(), b == nv.candidates.len());
        convert(match (ou, ov) {
            (true, true) => Cost::zero(),
            (true, false) | (false, true) => Cost::Finite(gamma),
            (false, false) => pairwise_cost(&nu.candidates[a].l, &nv.candidates[b].l, &nu.x, &nv.x, s.diameter),
        })
    });
    b.pairwise_fn(f).pairwise_weight(T::from_f64_lossy(hp.beta));
    Ok(b.build()?)
}

/// The fully connected binary master model over stage-one inliers.
#[derive(Clone)]
pub struct StageTwoMaster<T> {
    pub model: BinaryModel<T>,
    /// Grid node of each master node, increasing.
    pub grid_nodes: Vec<NodeId>,
    /// Candidate retained by each master node (its stage-one label).
    pub candidates: Vec<usize>,
}

impl<T: Scalar> std::fmt::Debug for StageTwoMaster<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StageTwoMaster").field("model", &self.model).field("grid_nodes", &self.grid_nodes).finish()
    }
}

impl<T: Scalar> StageTwoMaster<T> {
    pub fn master_index(&self, grid_node: NodeId) -> Option<usize> {
        self.grid_nodes.binary_search(&grid_node).ok()
    }
}

pub fn build_stage_two_master<T: Scalar>(
    scene: &Arc<SceneObservation>,
    hp: &HyperParams,
    inliers: &[NodeId],
    stage_one: &Labeling,
) -> Result<StageTwoMaster<T>, PoseModelError> {
    hp.validate()?;
    if stage_one.len() != scene.node_count() {
        return Err(PoseModelError::LabelingSize { expected: scene.node_count(), got: stage_one.len() });
    }
    let mut grid_nodes = inliers.to_vec();
    grid_nodes.sort_unstable();
    grid_nodes.dedup();
    if grid_nodes.is_empty() {
        return Err(PoseModelError::NoInliers);
    }
    let mut candidates = Vec::with_capacity(grid_nodes.len());
    for &u in &grid_nodes {
        let label = stage_one.0[u];
        if label >= scene.outlier_label(u) {
            return Err(PoseModelError::OutlierInlier(u));
        }
        candidates.push(label);
    }

    let mut b = ModelBuilder::<T>::new();
    for (&u, &c) in grid_nodes.iter().zip(&candidates) {
        let keep = (1.0 - scene.nodes[u].candidates[c].p) * hp.alpha;
        let drop = outlier_unary(scene, u, hp.alpha);
        b.add_node(vec![convert(Cost::Finite(drop)), convert(Cost::Finite(keep))]);
    }
    let m = grid_nodes.len();
    for i in 0..m {
        for j in i + 1..m {
            b.add_lazy_edge(i, j);
        }
    }
    let (s, nodes, cands, gamma) = (Arc::clone(scene), grid_nodes.clone(), candidates.clone(), hp.gamma);
    let f: Arc<PairwiseFn<T>> = Arc::new(move |i, j, a, b| {
        convert(match (a, b) {
            (0, 0) => Cost::zero(),
            (1, 1) => {
                let (nu, nv) = (&s.nodes[nodes[i]], &s.nodes[nodes[j]]);
                pairwise_cost(&nu.candidates[cands[i]].l, &nv.candidates[cands[j]].l, &nu.x, &nv.x, s.diameter)
            }
            _ => Cost::Finite(gamma),
        })
    });
    b.pairwise_fn(f).pairwise_weight(T::from_f64_lossy(hp.beta));
    Ok(StageTwoMaster { model: BinaryModel::new(b.build()?)?, grid_nodes, candidates })
}

/// A pixel whose candidate survived inference, with its correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseConsistentPixel {
    pub node: NodeId,
    pub pixel: (usize, usize),
    pub object: Vector3<f64>,
    pub scene: Vector3<f64>,
}

/// One pixel per node that carries a candidate label; outlier and unlabeled
/// nodes contribute nothing. `labels[u]` indexes the candidates of `u`.
pub fn pose_consistent_pixels(scene: &SceneObservation, labels: &PartialLabeling) -> Vec<PoseConsistentPixel> {
    labels
        .0
        .iter()
        .enumerate()
        .filter_map(|(u, l)| {
            let c = scene.nodes[u].candidates.get((*l)?)?;
            Some(PoseConsistentPixel { node: u, pixel: scene.pixel_of(u, c), object: c.l, scene: scene.nodes[u].x })
        })
        .collect()
}

/// Stage-one labels of the nodes a master labeling keeps (label 1), as a
/// grid-sized partial labeling.
pub fn kept_candidates<T: Scalar>(master: &StageTwoMaster<T>, grid_size: usize, labels: &PartialLabeling) -> PartialLabeling {
    let mut out = PartialLabeling::unlabeled(grid_size);
    for (i, l) in labels.0.iter().enumerate() {
        if *l == Some(1) {
            out.0[master.grid_nodes[i]] = Some(master.candidates[i]);
        }
    }
    out
}
