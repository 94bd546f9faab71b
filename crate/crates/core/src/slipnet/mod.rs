//! Tactile sensor graph and the graph-convolutional slip classifier.
//!
//! The skin's three 4x4 arrays form a 48-node graph: 8-neighbour
//! connectivity inside each array (84 directed edges per array) and
//! same-index links across arrays (32 directed edges leaving each array),
//! 348 directed edges in total. A three-layer graph convolution with mean
//! pooling and a logistic readout classifies frames as below or above the
//! calibrated minimum holding force.
//!
//! Label convention: frames with aggregate force at or below the threshold
//! are class 0 ("non-slip") and frames above it are class 1 ("slip"). This
//! mirrors the dataset-collection rule the classifier is trained against;
//! note that it is the low-force class 0 that corresponds to a physically
//! slipping grasp, so controllers must treat "probability of class 0" as
//! the slip signal (see [`crate::control`]).

mod data;
mod gcn;
mod graph;

pub use data::{gen_dataset, DatasetSpec, SlipDataset, Split};
pub use gcn::{
    evaluate, gcn_forward, grad_check, train, ConfusionMatrix, Evaluation, ForwardCache,
    GcnParams, TrainConfig, TrainOutcome,
};
pub use graph::{build_graph, normalize_adjacency, SensorLayout, TactileGraph};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SlipnetError {
    #[error("BadLayout: expected {expected} taxels, got {got}")]
    BadLayout { expected: usize, got: usize },
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("Divergence: loss became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}
