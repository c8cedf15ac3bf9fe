//! Learning word meanings from sentence-labeled video with discriminative
//! training of word HMMs on a joint tracking lattice.

pub mod error;
pub mod eval;
pub mod grammar;
pub mod lattice;
pub mod lexicon;
pub mod trainer_dt;
pub mod trainer_ml;
pub mod worldsim;

pub use error::{Error, Result};
