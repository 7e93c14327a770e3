//! Splitting the stage-two master into induced submodels.
//!
//! Inlier nodes are grouped into 8-connected components on the grid. Each
//! component seeds one submodel together with every later component lying
//! entirely within the object diameter of it. Each submodel is solved with
//! QPBO and its labeling extended to the master by zeros; in zero form, if a
//! submodel contains every label-1 node of some master optimum, its labeled
//! nodes agree with a master optimum.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::Cost;
use crate::model::{extend_partial, BinaryModel, ModelError, NodeId, PartialLabeling};
use crate::qpbo::solve_qpbo;
use crate::scalar::Scalar;
use crate::scene::SceneObservation;

pub const MIN_COMPONENT_SIZE: usize = 3;
/// Submodel counts above this are reported as unusual.
pub const TYPICAL_SUBMODEL_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub serial: usize,
    /// Grid nodes, increasing.
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmodelSpec {
    pub seed: usize,
    /// Serials of the member components, seed first.
    pub members: Vec<usize>,
    /// Union of member nodes, increasing.
    pub nodes: Vec<NodeId>,
}

impl SubmodelSpec {
    /// Renumbers the node set; `None` if some node has no image.
    pub fn map_nodes(&self, f: impl Fn(NodeId) -> Option<NodeId>) -> Option<SubmodelSpec> {
        let mut nodes = self.nodes.iter().map(|&u| f(u)).collect::<Option<Vec<_>>>()?;
        nodes.sort_unstable();
        Some(SubmodelSpec { seed: self.seed, members: self.members.clone(), nodes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubmodelScheme {
    #[default]
    Components,
    PerNode,
}

impl std::str::FromStr for SubmodelScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "components" => Ok(SubmodelScheme::Components),
            "per-node" => Ok(SubmodelScheme::PerNode),
            other => Err(format!("unknown submodel scheme `{other}` (expected components or per-node)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmodelError {
    #[error("edge {edge} ({u}, {v}) has an infinite entry outside (1, 1)")]
    InfiniteEntry { edge: usize, u: NodeId, v: NodeId },
    #[error("edge {edge} ({u}, {v}) is not in zero form")]
    NotZeroForm { edge: usize, u: NodeId, v: NodeId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// 8-connected components of `inliers` on a `grid_width`-wide grid, numbered
/// in row-major order of their first node.
pub fn connected_components(inliers: &[NodeId], grid_width: usize, grid_height: usize) -> Vec<Component> {
    let n = grid_width * grid_height;
    let mut member = vec![false; n];
    for &u in inliers {
        member[u] = true;
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if !member[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut nodes = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let (c, r) = ((u % grid_width) as isize, (u / grid_width) as isize);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (nc, nr) = (c + dc, r + dr);
                    if nc < 0 || nr < 0 || nc >= grid_width as isize || nr >= grid_height as isize {
                        continue;
                    }
                    let v = nr as usize * grid_width + nc as usize;
                    if member[v] && !seen[v] {
                        seen[v] = true;
                        nodes.push(v);
                        queue.push_back(v);
                    }
                }
            }
        }
        nodes.sort_unstable();
        out.push(Component { serial: out.len(), nodes });
    }
    out
}

/// Drops components smaller than three nodes and renumbers the rest.
pub fn filter_components(components: Vec<Component>) -> Vec<Component> {
    components
        .into_iter()
        .filter(|c| c.nodes.len() >= MIN_COMPONENT_SIZE)
        .enumerate()
        .map(|(serial, c)| Component { serial, nodes: c.nodes })
        .collect()
}

fn max_distance(scene: &SceneObservation, a: &[NodeId], b: &[NodeId]) -> f64 {
    let mut worst: f64 = 0.0;
    for &u in a {
        for &v in b {
            worst = worst.max((scene.nodes[u].x - scene.nodes[v].x).norm());
        }
    }
    worst
}

/// One spec per component `f`: `f` plus every later component whose nodes
/// are all within the diameter of all nodes of `f`.
pub fn enumerate_submodels(components: &[Component], scene: &SceneObservation) -> Vec<SubmodelSpec> {
    components
        .iter()
        .map(|f| {
            let mut members = vec![f.serial];
            let mut nodes: BTreeSet<NodeId> = f.nodes.iter().copied().collect();
            for g in components.iter().filter(|g| g.serial > f.serial) {
                if max_distance(scene, &f.nodes, &g.nodes) <= scene.diameter {
                    members.push(g.serial);
                    nodes.extend(&g.nodes);
                }
            }
            SubmodelSpec { seed: f.serial, members, nodes: nodes.into_iter().collect() }
        })
        .filter(|s| s.nodes.len() >= MIN_COMPONENT_SIZE)
        .collect()
}

/// One spec per inlier `u` holding every inlier within the diameter of `u`.
/// Repeated node sets and sets under three nodes are dropped; `seed` is the
/// position of `u` in `inliers`.
pub fn enumerate_per_node(inliers: &[NodeId], scene: &SceneObservation) -> Vec<SubmodelSpec> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (seed, &u) in inliers.iter().enumerate() {
        let mut nodes: Vec<NodeId> =
            inliers.iter().copied().filter(|&v| (scene.nodes[u].x - scene.nodes[v].x).norm() <= scene.diameter).collect();
        nodes.sort_unstable();
        if nodes.len() >= MIN_COMPONENT_SIZE && seen.insert(nodes.clone()) {
            out.push(SubmodelSpec { seed, members: vec![seed], nodes });
        }
    }
    out
}

/// Moves pairwise mass into unaries and the constant so that every edge has
/// `θ(0,0) = θ(0,1) = θ(1,0) = 0`. The returned model has the same energy as
/// the input on every labeling; the second value is the amount added to the
/// constant.
pub fn to_zero_form<T: Scalar>(model: &BinaryModel<T>) -> Result<(BinaryModel<T>, T), SubmodelError> {
    let beta = model.pairwise_weight();
    let mut unary: Vec<Vec<Cost<T>>> = (0..model.node_count()).map(|u| model.unary(u).to_vec()).collect();
    let mut shift = T::zero();
    let mut replaced = Vec::new();
    for e in 0..model.edge_count() {
        let (p, q) = model.edge(e);
        let [a, b, c, d] = model.quad(e);
        let (Some(a), Some(b), Some(c)) = (a.finite(), b.finite(), c.finite()) else {
            return Err(SubmodelError::InfiniteEntry { edge: e, u: p, v: q });
        };
        if a.is_zero() && b.is_zero() && c.is_zero() {
            continue;
        }
        shift += beta * a;
        unary[p][1] = unary[p][1] + beta * (c - a);
        unary[q][1] = unary[q][1] + beta * (b - a);
        let d = match d {
            Cost::Finite(d) => Cost::Finite(d - b - c + a),
            Cost::Infinite => Cost::Infinite,
        };
        replaced.push((e, vec![Cost::zero(), Cost::zero(), Cost::zero(), d]));
    }
    let constant = model.constant() + shift;
    Ok((model.with_terms(unary, replaced, constant), shift))
}

pub fn check_zero_form<T: Scalar>(model: &BinaryModel<T>) -> Result<(), SubmodelError> {
    for e in 0..model.edge_count() {
        let zero = Cost::zero();
        if model.pairwise(e, 0, 0) != zero || model.pairwise(e, 0, 1) != zero || model.pairwise(e, 1, 0) != zero {
            let (u, v) = model.edge(e);
            return Err(SubmodelError::NotZeroForm { edge: e, u, v });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedResult<T> {
    pub spec: SubmodelSpec,
    /// QPBO labels of the submodel, zeros elsewhere, in master numbering.
    pub labeling: PartialLabeling,
    pub lower_bound: T,
    pub demoted: usize,
}

/// Solves every spec's induced submodel (in parallel) with QPBO. Specs are
/// given in master numbering; results keep the spec order.
pub fn solve_decomposed<T: Scalar>(
    master: &BinaryModel<T>,
    specs: &[SubmodelSpec],
) -> Result<Vec<DecomposedResult<T>>, SubmodelError> {
    check_zero_form(master)?;
    specs
        .par_iter()
        .map(|spec| {
            let (sub, map) = master.induce_submodel(&spec.nodes)?;
            let sol = solve_qpbo(&sub);
            Ok(DecomposedResult {
                spec: spec.clone(),
                labeling: extend_partial(master.node_count(), &sol.labeling, &map, Some(0)),
                lower_bound: sol.lower_bound,
                demoted: sol.demoted,
            })
        })
        .collect()
}
