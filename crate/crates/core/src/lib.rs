//! Compression search for small transformer models under signal temporal
//! logic constraints on output divergence, attention, embeddings and
//! reference-token probability.

pub mod cost;
pub mod harness;
mod io_util;
pub mod model;
pub mod modes;
pub mod search;
pub mod signal;
pub mod stl;

pub use io_util::write_atomic;
