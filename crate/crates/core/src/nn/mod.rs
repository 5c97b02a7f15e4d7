//! A small convolutional regression network with exact backpropagation.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use model::{
    backward, forward, predict, Activation, Cache, ConvBlock, Gradients, Head, InputShape, Model, ModelSpec,
    ParamBlock, TargetScaling,
};
pub use optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
pub use tensor::Tensor;
pub use train::{evaluate, extract_features, fit_ridge_head, predict_all, train, History, Sample, TrainConfig};
