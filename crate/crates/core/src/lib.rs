//! Composable distance-based multi-label representations.
//!
//! A convolutional critic is trained so that each output cell `(i, j)`
//! separates images of class `i` from images of context environment `j`
//! under a Fisher IPM objective. The resulting `n_c x n_e` matrix of critic
//! distances serves as a representation that can be classified against
//! templates, compared for retrieval, edited by swapping SVD factor rows and
//! compressed by truncation.

pub mod baseline;
pub(crate) mod binio;
pub mod checkpoint;
pub mod compose;
pub mod config;
pub mod envmask;
pub mod error;
pub mod fisher;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod probe;
pub mod repr;
pub mod retrieval;
pub mod synthdata;

pub use error::{Error, Result};
