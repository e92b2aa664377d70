pub mod config;
pub mod data_model;
pub mod momap;
pub mod moments;
pub mod preprocess;
pub mod procrustes;
pub mod study;
pub mod synth;
pub mod error;
pub mod eval;
pub mod rng;

pub use error::{Error, Result};
