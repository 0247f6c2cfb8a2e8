pub mod attribution;
pub mod corpus;
pub mod editor;
pub mod error;
pub mod eval;
pub mod maskgen;
pub mod nli;
pub mod nn;
pub mod pipeline;
pub mod recombiner;
pub mod scalar;
pub mod templating;
pub mod text;
pub mod vocab;

pub use error::{GmeError, Result};
pub use scalar::Scalar;
