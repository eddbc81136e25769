//! Network performance model: scenario data model, the scenario-to-
//! ordered-complex construction, feature encoding, flow/queue/link message
//! passing (directly and through the generic ordered layers), readout
//! heads, and training.

pub mod complexify;
pub mod model;
pub mod scenario;
pub mod train;

pub use complexify::{complexify, Complexified};
pub use model::{
    encode_features, fit_stats, message_passing, readout, routenet_as_ordgccn, EncodedStates,
    Hyperparams, MpOutput, NormStats, ReadoutHeads,
};
pub use scenario::{
    FlowMetrics, FlowSpec, LinkSpec, NetworkScenario, Policy, QueueSpec, ScenarioError,
    ScenarioIndex,
};
pub use train::{predict, train, LabeledScenario, RouteNetModel, Target, TrainConfig};

use thiserror::Error;

use crate::gccn::GccnError;
use crate::tensornn::TensorError;
use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum NetModelError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Gccn(#[from] GccnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("normalization statistics not fitted")]
    UnfittedStats,
    #[error("queue {0} is contained in {1} links; expected exactly one")]
    NonUniqueLink(String, usize),
    #[error("flow {0} has a non-positive label for the chosen target")]
    NonPositiveLabel(String),
    #[error("training diverged at epoch {0}: loss is not finite")]
    Divergence(usize),
    #[error("readout requires at least one message-passing round")]
    NoFaceStates,
    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),
}
