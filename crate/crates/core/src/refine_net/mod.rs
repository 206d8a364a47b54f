//! Two-stage refinement: context voxelization, seven-element box targets, and a
//! small height-as-channels CNN with regression and classification heads.

pub mod context;
pub mod net;
pub mod params;
pub mod targets;
pub mod train;

pub use context::{expand_context, voxelize_context, ContextBox, ContextVoxels};
pub use net::{NetArch, NetInput, NetOutput, Network};
pub use params::{load_params, save_params, NetParams};
pub use targets::{decode_box, encode_targets, CanonicalAnchor, RegressionTarget7};
pub use train::{assign_label, train, RefineStage, Sample, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("ground-truth box has non-positive extent")]
    NonPositiveWidth,
    #[error("no root of the box system yields positive dimensions")]
    NoValidSolution,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("minibatch needs positives but the dataset has none")]
    NoPositives,
    #[error("invalid network parameters file: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
