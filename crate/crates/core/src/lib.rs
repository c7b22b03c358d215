//! Heterogeneous graph contrastive learning with structure-aware hard
//! negative mining.

pub mod contrast;
pub mod encoder;
pub mod error;
pub mod hetgraph;
pub mod pipeline;
pub mod structure;
pub mod tensor;

pub use error::{Error, Result};
