pub mod agent;
pub mod analysis;
pub mod behavior;
pub mod config;
pub mod constraint;
pub mod domain;
pub mod experiment;
pub mod neural;
pub mod runner;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

/// Double-precision network used for training and checkpoints.
pub type Network = neural::LstmNetwork<f64>;
pub type Adam = neural::AdamState<f64>;
