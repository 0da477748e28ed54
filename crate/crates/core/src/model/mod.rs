//! Reference decoder-only transformer, compression operators and paired
//! inference that produces property signals.

mod arch;
pub mod compress;
mod signals;
mod transformer;

use thiserror::Error;

pub use arch::{Component, ComponentKey, ModelArchitecture, Style};
pub use compress::{
    calibrate_scale, calibration_grid, compress_component, prune_component, prune_count,
    prune_with_mask, quantize_component, quantize_value, Assignment, CompressionConfig,
    CALIBRATION_POINTS, MIN_BITS, REFERENCE_BITS,
};
pub use signals::{
    cosine_similarity, generate_signals, jensen_shannon, EvaluationCorpus, Prompt,
    SignalGenerator, EPS_DIV, RATIO_MAX,
};
pub use transformer::{build_model, ForwardOutput, ReferenceModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("configuration does not match the model: {0}")]
    Coverage(String),
    #[error("bit-width {0} outside [2, 16]")]
    BitsOutOfRange(u8),
    #[error("pruning ratio {ratio} outside [0, {p_max}]")]
    RatioOutOfRange { ratio: f64, p_max: f64 },
    #[error("{0}")]
    Mismatch(String),
    #[error("corpus: {0}")]
    Corpus(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
