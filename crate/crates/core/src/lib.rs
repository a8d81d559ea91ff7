//! Multi-input, multi-task networks for empathy and distress intensity
//! prediction from essay embeddings, demographics, psychological scores and
//! lexicon features.

pub mod checkpoint;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};
