//! Checkpoints, configuration, corpus directories and the end-to-end
//! commands behind `dmsk`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod sections;
pub mod train;

pub use checkpoint::{Checkpoint, Section};
pub use config::Config;
pub use train::{progressive_train, token_examples, Stage};
