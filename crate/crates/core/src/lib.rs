#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod error;
pub mod evaluation;
pub mod image;
pub mod inference;
pub mod pose;
pub mod scene_world;
pub mod trajectories;
pub mod augmentation;
pub mod dataset;
pub mod digest;
pub mod models;
pub mod orchestration;
pub mod training;

pub use error::{Error, Result};
