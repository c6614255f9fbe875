//! Differentiable operators, parameter storage, optimisation and
//! checkpointing.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod sample;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_params, CheckOptions, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var, GATHER_ZERO};
pub use layers::{Conv2d, LayerNorm, Linear};
pub use optim::{warmup_cosine, Adam, AdamConfig};
pub use params::{uniform_fan_in, ParamEntry, ParamGrads, ParamId, ParamStore};
pub use sample::bilinear_sample;
pub use tensor::{FeatureMapSequence, Tensor};

pub(crate) use graph::{gelu, softmax_groups};
