//! Bone-age regression pipeline at desk scale.
//!
//! Stage one turns polygon annotations (COCO or VIA) into binary hand masks and
//! removes the radiograph background. Stage two trains a small convolutional
//! regressor (conv blocks, global average pooling, a dense layer, dropout and a
//! ridge-penalised linear head) and explains its predictions with Grad-CAM.
//!
//! Modules:
//! - [`annotation`]: COCO / VIA parsing, validation and conversion
//! - [`imageops`]: rasterization, background removal, resizing, augmentation, PGM I/O
//! - [`datagen`]: synthetic radiograph-like datasets with known ages
//! - [`nn`]: tensors, layers with exact backward passes, Adam, plateau schedule, training
//! - [`ridge`]: ridge objective, closed-form solver, cross-validated penalty
//! - [`metrics`]: MAE / RMSE / RMSPE overall and per cohort
//! - [`explain`]: Grad-CAM heatmaps and noise-averaged smoothing
//! - [`store`]: dataset directories and staged artifact writes
//! - [`cli`]: the `boneage` batch entry point

pub mod annotation;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod explain;
pub mod imageops;
pub mod metrics;
pub mod nn;
pub mod ridge;
pub mod rng;
pub mod store;

pub use error::{Error, Result};
