//! Scene observations: a grid of nodes, each with a camera-space point and
//! up to twelve object-coordinate candidates (four pixels × three trees).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::model::NodeId;

pub const MAX_CANDIDATES: usize = 12;
pub const PIXELS_PER_NODE: u8 = 4;
pub const TREES: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    /// Predicted object coordinate, meters.
    pub l: Vector3<f64>,
    /// Confidence in `[0, 1]`.
    pub p: f64,
    /// Pixel of the 2×2 block that produced the prediction, row-major.
    pub pixel: u8,
    pub tree: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneNode {
    /// Camera-space point, meters.
    pub x: Vector3<f64>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObservation {
    pub grid_width: usize,
    pub grid_height: usize,
    /// Row-major, `grid_width * grid_height` entries.
    pub nodes: Vec<SceneNode>,
    /// Object diameter `D`, meters.
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("grid {width}x{height} needs {expected} nodes, found {found}")]
    NodeCount { width: usize, height: usize, expected: usize, found: usize },
    #[error("grid dimensions must be positive")]
    EmptyGrid,
    #[error("diameter must be positive and finite, got {0}")]
    Diameter(f64),
    #[error("node {node} has {count} candidates (at most 12)")]
    TooManyCandidates { node: NodeId, count: usize },
    #[error("node {node} candidate {candidate}: confidence {p} outside [0, 1]")]
    Confidence { node: NodeId, candidate: usize, p: f64 },
    #[error("node {node} candidate {candidate}: pixel {pixel} / tree {tree} out of range")]
    Source { node: NodeId, candidate: usize, pixel: u8, tree: u8 },
    #[error("node {node} has a non-finite coordinate")]
    NonFinite { node: NodeId },
}

impl SceneObservation {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let (width, height) = (self.grid_width, self.grid_height);
        if width == 0 || height == 0 {
            return Err(SceneError::EmptyGrid);
        }
        if self.nodes.len() != width * height {
            return Err(SceneError::NodeCount { width, height, expected: width * height, found: self.nodes.len() });
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(SceneError::Diameter(self.diameter));
        }
        for (node, n) in self.nodes.iter().enumerate() {
            if n.candidates.len() > MAX_CANDIDATES {
                return Err(SceneError::TooManyCandidates { node, count: n.candidates.len() });
            }
            if !n.x.iter().all(|c| c.is_finite()) {
                return Err(SceneError::NonFinite { node });
            }
            for (candidate, c) in n.candidates.iter().enumerate() {
                if !(0.0..=1.0).contains(&c.p) {
                    return Err(SceneError::Confidence { node, candidate, p: c.p });
                }
                if c.pixel >= PIXELS_PER_NODE || c.tree >= TREES {
                    return Err(SceneError::Source { node, candidate, pixel: c.pixel, tree: c.tree });
                }
                if !c.l.iter().all(|v| v.is_finite()) {
                    return Err(SceneError::NonFinite { node });
                }
            }
        }
        Ok(())
    }

    /// `(column, row)` of a node.
    pub fn grid_position(&self, u: NodeId) -> (usize, usize) {
        (u % self.grid_width, u / self.grid_width)
    }

    /// Image pixel of a candidate: nodes cover 2×2 pixel blocks.
    pub fn pixel_of(&self, u: NodeId, c: &Candidate) -> (usize, usize) {
        let (col, row) = self.grid_position(u);
        (2 * col + usize::from(c.pixel % 2), 2 * row + usize::from(c.pixel / 2))
    }

    /// Label index of the outlier label at `u`: one past the candidates.
    pub fn outlier_label(&self, u: NodeId) -> usize {
        self.nodes[u].candidates.len()
    }
}
