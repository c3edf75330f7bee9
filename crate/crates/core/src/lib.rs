//! Self-supervised face occlusion segmentation by contrasting an image with
//! an occlusion-free reference of the same face.

pub mod backends;
pub mod cli;
pub mod contrast;
pub mod dataset;
pub mod error;
mod nn;
pub mod objectives;
pub mod pipeline;
mod seeding;
pub mod selection;

pub use error::{Error, Result};
