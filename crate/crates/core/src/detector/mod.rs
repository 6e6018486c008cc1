//! Block-energy hypothesis test on the recovered vector.

pub mod detect;
pub mod error_model;
pub mod gchi2;

pub use detect::{
    detect, detect_many, psi_from_pfa, threshold_for_fa, timing_estimate,
    timing_estimate_with_floor, DetectedCode, DetectionResult, DetectorConfig, NoiseModel,
};
pub use error_model::{build_error_model, ErrorModel, ErrorModelBlocks, ErrorModelOptions};
pub use gchi2::{gchi2_cdf, Gchi2};
