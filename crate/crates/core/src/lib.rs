//! Speech-duration-aware length control for machine translation in video
//! dubbing: duration-annotated corpora, a transformer whose decoder sees
//! absolute and relative duration embeddings, budget-constrained decoding,
//! isochrony metrics and vowel-only duration adjustment.

pub mod adjust;
pub mod align;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod embed;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
