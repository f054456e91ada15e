//! Layers, model presets and the three dropout configurations.

pub mod checkpoint;
mod dropout;
mod forward;
mod params;
mod spec;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use dropout::{dropout, dropout_var, DropoutMask};
pub use forward::{
    batched, bind_params, deterministic_prefix, forward_from, forward_layers, model_forward,
    model_forward_values, BoundParams, ForwardTrace, ForwardValues, ModelOutput, LOGVAR_RANGE,
};
pub use params::{build_model, ModelParams};
pub use spec::{DropoutMode, LayerSpec, ModelSpec, Variant, DEFAULT_CLASSES};
