//! Architecture and hyperparameter search for skeleton graph convolution networks.

pub mod controller;
pub mod datasets;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod orchestrator;
pub mod searchspace;
pub mod studentnet;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
