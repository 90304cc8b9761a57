//! Procedurally simulated hand/object episodes, kinematic verb oracles, five
//! feature modalities, self-supervised LSTM encoders and ranking metrics for
//! comparing 2D and 3D world representations in verb classification.

pub mod math;
pub mod rng;
pub mod sim;
pub mod oracle;
pub mod features;
pub mod nn;
pub mod eval;
pub mod train;
pub mod config;
pub mod pipeline;
pub mod cli;
