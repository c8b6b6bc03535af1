//! Representation learning under distribution shift: supervised
//! pretraining, contrastive adaptation, label-efficient fine-tuning, and
//! the statistics used to compare strategies.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod models;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
