//! DCT-threshold data augmentation for distortion-robust image classifiers.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Training runs in
//! `f32`; oracles and gradient checks use `f64`. The aliases below fix the
//! training precision.

pub mod augment;
pub mod dataset;
pub mod dct;
pub mod distortions;
pub mod dropout;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod train;

pub use augment::{apply_dct_threshold, AugmentConfig, Augmenter, ThresholdDistribution};
pub use dct::{fdct2, idct2, CoefficientPlane, Dct2d};
pub use distortions::{distort, distort_seeded, level_grid, DatasetProfile, DistortionKind, DistortionSpec};
pub use dropout::{DropoutState, EpochStats};
pub use error::{Error, ErrorKind, Result};
pub use eval::{compare_reports, evaluate, ComparisonTable, EvalConfig, EvalReport};
pub use nn::{ModelParams, NetworkConfig};
pub use scalar::Scalar;
pub use train::{train, DropoutPolicy, TrainConfig, TrainingLog};

/// Training precision.
pub type Real = f32;
pub type Image = image::ImageTensor<Real>;
pub type Plane = image::ImagePlane<Real>;
pub type Model = nn::ModelParams<Real>;
pub type Dataset = dataset::LabeledSet<Real>;
