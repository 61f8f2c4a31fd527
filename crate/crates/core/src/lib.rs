//! Contrast-invariant patch matching under Gaussian, gamma and Poisson noise.
//!
//! Patches are compared to dictionary atoms with generalized likelihood
//! ratios that maximize over a radiometric transform of the atom. The crate
//! also provides the ROC detection experiment, a dictionary-based denoiser
//! and the `patchglr` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod criteria;
pub mod denoise;
pub mod dictionary;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod io;
pub mod noise;
pub mod patch;
pub mod rng;
pub mod special;
pub mod synthetic;

pub use criteria::{best_match, score, Criterion, MatchScore};
pub use denoise::{
    denoise_image, denoise_patch, psnr, DenoiseCriterion, DenoiseOptions, DenoiseReport,
};
pub use dictionary::Dictionary;
pub use error::{Error, Result};
pub use estimators::{NewtonConfig, RadiometricTransform, TransformFamily};
pub use eval::{roc, run_detection_experiment, ExperimentConfig, Label, LabeledPair, RocCurve};
pub use noise::{NoiseKind, NoiseModel};
pub use patch::{Image, Patch};
