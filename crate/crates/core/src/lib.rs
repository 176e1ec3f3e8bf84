//! Link a classifier's representation space `R` to a generator latent space
//! `W` with a learned affine map, then quantify what `R` encodes.

pub mod cli;
pub mod counterfact;
pub mod error;
pub mod linalg;
pub mod linklearn;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod segquant;
pub mod spacecmp;
pub mod synthworld;
pub mod tracker;
pub mod tensorio;
pub mod unitprobe;

pub use error::{Error, Result};
