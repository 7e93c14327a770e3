//! Two-stage global hypothesis generation for 6D object pose: a sparse
//! multi-label model solved with TRW-S selects candidate correspondences, a
//! fully connected binary model over the survivors is decomposed into induced
//! submodels and solved with QPBO, and each labeled set yields a Kabsch + ICP
//! pose hypothesis.

pub mod cost;
pub mod maxflow;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod pose_fit;
pub mod pose_model;
pub mod qpbo;
pub mod scalar;
pub mod scene;
pub mod submodels;
pub mod synth;
pub mod trws;
pub mod verify;

pub use cost::Cost;
pub use model::{BinaryModel, GraphicalModel, Labeling, ModelBuilder, ModelError, NodeId, PartialLabeling};
pub use scalar::Scalar;

pub use num_rational::Rational64;

pub type Model = GraphicalModel<f64>;
pub type Model32 = GraphicalModel<f32>;
pub type ExactModel = GraphicalModel<Rational64>;
pub type Binary = BinaryModel<f64>;
pub type ExactBinary = BinaryModel<Rational64>;
pub type Pose = pose_fit::Pose<f64>;
pub type Pose32 = pose_fit::Pose<f32>;
pub type Hypothesis = pose_fit::Hypothesis<f64>;
