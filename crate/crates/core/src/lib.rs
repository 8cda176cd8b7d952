//! Embedding-space evaluation of what voice anonymisation leaks: speaker
//! and accent verification EER, accent identification recall and WAR,
//! fairness across accents, and a synthetic lab with known ground truth.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod synthlab;
pub mod trials;
mod util;

pub use error::{Error, Result};
pub use util::{format_2dp, format_significant};
