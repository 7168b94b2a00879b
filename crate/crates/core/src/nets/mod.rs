//! Policy and Q networks built on the graph engine, plus checkpoints.

mod checkpoint;
mod layers;
mod policy;
mod qnet;

pub use checkpoint::{Architecture, Checkpoint, FORMAT_VERSION};
pub use layers::FINAL_LAYER_BOUND;
pub use policy::{
    is_task_param, is_weight_param, Actor, GaussianPolicyNet, HierarchicalPolicyNet, PolicyForward, PolicyGraph,
};
pub use qnet::{polyak_update, MultiHeadQNet, TwinQ};
