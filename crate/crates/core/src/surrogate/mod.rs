//! Neural surrogate for the engagement-zone probability.
//!
//! The network sees the problem from the pursuer's point of view: the belief
//! statistics plus the evader's position and heading relative to the pursuer
//! mean. Training data comes from Latin hypercube sampling of that feature
//! space with Monte Carlo labels.

mod dataset;
mod features;
mod lhs;
mod mlp;
mod train;

pub use dataset::{generate_labels, DatasetMeta, TrainingSet};
pub use features::{wrap_angle, FeatureFrame, FeatureVector, N_FEATURES};
pub use lhs::{latin_hypercube, Configuration, ParameterRanges};
pub use mlp::{layer_norm, silu, Activations, Float, LayerParams, MlpModel, ModelHeader, LAYER_SIZES, LN_EPS};
pub use train::{split_train_val, train, train_with_progress, Hyper, TrainReport};
