//! Label-free repair of magnitude-pruned convolutional networks.
//!
//! The pipeline: load a dense model, allocate a sparsity budget across layers
//! (ERK, LAMP or uniform), prune by magnitude, then repair the pruned model
//! from unlabeled calibration images by matching per-channel activation
//! statistics of the dense model and recalibrating BatchNorm.

pub mod allocate;
pub mod error;
pub mod eval;
pub mod forward;
pub mod graph;
pub mod io;
pub mod ops;
pub mod repair;
pub mod stats;
pub mod tensor;

pub use allocate::{Allocation, AllocationPlan, SparsityMask};
pub use error::{Error, Result};
pub use eval::{evaluate, Experiment, RunReport, SweepSpec};
pub use forward::{forward, predict, ForwardOutput};
pub use graph::{LayerKind, Model, ModelGraph, Node};
pub use repair::{repair, BnUpdate, RepairConfig, RepairPlan, RepairVariant};
pub use stats::{CalibrationSet, ChannelStats};
pub use tensor::Tensor;
