//! Dual memory bank surface-defect detection.
//!
//! Backbone feature maps (ETF tensors) are turned into locally aware patch
//! features, projected to a low dimension and coreset-subsampled into a
//! negative bank (nominal patches) and a positive bank (defective patches).
//! Test images are scored by the ratio of neighborhood-weighted distances
//! to the two banks, and localized with the same ratio per patch.

pub mod bank;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod knn;
pub mod localization;
pub mod manifest;
pub mod patch;
pub mod pipeline;
pub mod reduction;
pub mod resample;
pub mod scoring;
pub mod tensor;

pub use bank::{build_bank_pair, load_bank_pair, save_bank_pair, BankPair, MemoryBank, Polarity};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use evaluation::{auroc, evaluate, EvalReport};
pub use fixture::{generate_fixture, FixtureSpec};
pub use manifest::{load_manifest, DatasetManifest};
pub use patch::{PatchConfig, PatchGrid};
pub use scoring::{score_image, ScoreMode, ScoreOptions, ScoreRecord};
pub use tensor::{read_etf, write_etf, Tensor};
