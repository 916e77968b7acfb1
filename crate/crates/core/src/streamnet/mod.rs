//! Stream-preserving networks, lifts and deep signature models.

pub mod gradcheck;
pub mod lift;
pub mod map;
pub mod mlp;
pub mod model;
pub mod params;

pub use lift::{sig_of_lift, Lift};
pub use map::{MapKind, StreamMap};
pub use mlp::{Activation, Mlp};
pub use model::{
    BlockSpec, DeepSigModel, ForwardTrace, Head, HeadKind, HeadSpec, MapSpec, ModelOutput,
    ModelSpec, SigBlock,
};
pub use params::{adam_step, AdamConfig, AdamState, ModelParams};
