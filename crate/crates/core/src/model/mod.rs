//! Two-stream spherical encoder with fusion, explicit and implicit pose
//! decoders, their losses, training and test-time refinement.

mod config;
mod loss;
mod network;
mod refine;
mod train;


pub use config::{ModelConfig, RefineConfig, TrainConfig};
pub use loss::{
    canonical_pose, consistency_loss, explicit_loss, implicit_loss, loss_explicit, loss_implicit,
    LossBreakdown, Targets,
};
pub use network::{
    explicit_pose, pose_from_canonical, spherical_fusion, Bound, DualPoseNet, Heads, Outputs,
    Prepared, GROUPS,
};
pub use refine::{consistency, refine, refine_with_params, RefineOutcome};
pub use train::{batch_loss, loss_gradients, prepare_items, TrainItem, Trainer};
