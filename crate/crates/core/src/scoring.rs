//! Image-level scoring against the negative and positive banks.
//!
//! The raw score for a bank is the largest nearest-neighbor distance over
//! the test patches. It is reweighted by how the matched bank vector's
//! neighborhood sits relative to the test patch, and the two weighted
//! scores are fused as `s_N / (s_P + epsilon)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{BankPair, MemoryBank, Polarity};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::knn::{distance, VectorSet};
use crate::patch::PatchGrid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Ratio of weighted negative and positive scores; needs both banks.
    #[default]
    Ratio,
    /// One-class fallback: the weighted negative score alone.
    NegativeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestResult {
    /// `(row, col)` of the test patch.
    pub test_patch_index: (usize, usize),
    pub bank_index: usize,
    pub distance: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    #[serde(rename = "s_N_star")]
    pub s_n_star: f32,
    #[serde(rename = "s_P_star")]
    pub s_p_star: Option<f32>,
    #[serde(rename = "w_N_star")]
    pub w_n_star: f32,
    #[serde(rename = "w_P_star")]
    pub w_p_star: Option<f32>,
    #[serde(rename = "s_N")]
    pub s_n: f32,
    #[serde(rename = "s_P")]
    pub s_p: Option<f32>,
    pub s_ratio: f32,
    pub epsilon: f32,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub b: usize,
    pub epsilon: f32,
    pub mode: ScoreMode,
    pub positive_at_negative_patch: bool,
}

impl From<&RunConfig> for ScoreOptions {
    fn from(cfg: &RunConfig) -> Self {
        Self {
            b: cfg.b,
            epsilon: cfg.epsilon,
            mode: cfg.mode,
            positive_at_negative_patch: cfg.flags.positive_at_negative_patch,
        }
    }
}

impl ScoreOptions {
    /// Fails early when ratio mode is asked for without a positive bank.
    pub fn check_banks(&self, banks: &BankPair) -> Result<()> {
        if self.mode == ScoreMode::Ratio && banks.positive.is_none() {
            return Err(Error::MissingPositiveBank);
        }
        Ok(())
    }
}

fn check_dims(patches: &PatchGrid, bank: &MemoryBank) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if patches.dim != bank.dim {
        return Err(Error::DimensionMismatch {
            expected: bank.dim,
            got: patches.dim,
        });
    }
    Ok(())
}

/// Nearest bank vector for every patch, row-major.
pub(crate) fn nearest_per_patch(
    patches: &PatchGrid,
    bank: &MemoryBank,
) -> Result<Vec<(usize, f64)>> {
    check_dims(patches, bank)?;
    let set = bank.as_set();
    Ok(patches
        .vectors
        .par_chunks(patches.dim)
        .map(|v| set.nearest(v).expect("bank is non-empty"))
        .collect())
}

/// The test patch farthest from its nearest bank vector.
pub fn max_min_distance(patches: &PatchGrid, bank: &MemoryBank) -> Result<NearestResult> {
    let nearest = nearest_per_patch(patches, bank)?;
    let mut best = 0;
    for (i, n) in nearest.iter().enumerate() {
        if n.1 > nearest[best].1 {
            best = i;
        }
    }
    Ok(NearestResult {
        test_patch_index: (best / patches.width, best % patches.width),
        bank_index: nearest[best].0,
        distance: nearest[best].1 as f32,
    })
}

/// Nearest bank vector to a single query.
pub fn nearest_in_bank(query: &[f32], bank: &MemoryBank) -> Result<(usize, f64)> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if query.len() != bank.dim {
        return Err(Error::DimensionMismatch {
            expected: bank.dim,
            got: query.len(),
        });
    }
    Ok(bank.as_set().nearest(query).expect("bank is non-empty"))
}

/// `exp(-s/sqrt(d)) / sum_{m in N_b} exp(-|t - m|/sqrt(d))`, evaluated with
/// each term shifted by the anchor distance so it cannot underflow. The
/// anchor must be the nearest bank vector to `test_vec`, which bounds the
/// result to `[1/b, 1]`.
pub(crate) fn self_fraction(
    test_vec: &[f32],
    anchor: usize,
    neighbors: &[usize],
    set: &VectorSet,
) -> f64 {
    let scale = (set.dim() as f64).sqrt();
    let s0 = distance(test_vec, set.get(anchor));
    let total: f64 = neighbors
        .iter()
        .map(|&m| (-(distance(test_vec, set.get(m)) - s0) / scale).exp())
        .sum();
    1.0 / total
}

pub(crate) fn weight_from_fraction(fraction: f64, polarity: Polarity) -> f32 {
    match polarity {
        Polarity::Negative => (1.0 - fraction) as f32,
        Polarity::Positive => fraction as f32,
    }
}

/// Density weight for a matched test vector. Negative polarity gives
/// `1 - fraction` in `[0, 1)`, positive gives `fraction` in `(0, 1]`.
pub fn neighborhood_weight(
    test_vec: &[f32],
    nearest: &NearestResult,
    bank: &MemoryBank,
    b: usize,
    polarity: Polarity,
) -> Result<f32> {
    if b == 0 {
        return Err(Error::Config("b must be >= 1".into()));
    }
    if bank.len() < b {
        return Err(Error::BankTooSmall {
            bank: bank.len(),
            needed: b,
        });
    }
    if test_vec.len() != bank.dim {
        return Err(Error::DimensionMismatch {
            expected: bank.dim,
            got: test_vec.len(),
        });
    }
    let set = bank.as_set();
    let neighbors = set.neighborhood_of(nearest.bank_index, b);
    Ok(weight_from_fraction(
        self_fraction(test_vec, nearest.bank_index, &neighbors, &set),
        polarity,
    ))
}

pub fn ratio_score(s_n: f32, s_p: f32, epsilon: f32) -> f32 {
    (s_n as f64 / (s_p as f64 + epsilon as f64)) as f32
}

/// Scores one image whose patch grid is already in bank space.
pub fn score_image(
    patches: &PatchGrid,
    banks: &BankPair,
    opts: &ScoreOptions,
) -> Result<ScoreRecord> {
    let negative = &banks.negative;
    let neg = max_min_distance(patches, negative)?;
    let neg_vec = patches.vector(neg.test_patch_index.0, neg.test_patch_index.1);
    let w_n = neighborhood_weight(neg_vec, &neg, negative, opts.b, Polarity::Negative)?;
    let s_n = w_n * neg.distance;

    match opts.mode {
        ScoreMode::NegativeOnly => Ok(ScoreRecord {
            s_n_star: neg.distance,
            s_p_star: None,
            w_n_star: w_n,
            w_p_star: None,
            s_n,
            s_p: None,
            s_ratio: s_n,
            epsilon: opts.epsilon,
            b: opts.b,
        }),
        ScoreMode::Ratio => {
            let positive = banks.positive.as_ref().ok_or(Error::MissingPositiveBank)?;
            let pos = if opts.positive_at_negative_patch {
                let (bank_index, d) = nearest_in_bank(neg_vec, positive)?;
                NearestResult {
                    test_patch_index: neg.test_patch_index,
                    bank_index,
                    distance: d as f32,
                }
            } else {
                max_min_distance(patches, positive)?
            };
            let pos_vec = patches.vector(pos.test_patch_index.0, pos.test_patch_index.1);
            let w_p = neighborhood_weight(pos_vec, &pos, positive, opts.b, Polarity::Positive)?;
            let s_p = w_p * pos.distance;
            Ok(ScoreRecord {
                s_n_star: neg.distance,
                s_p_star: Some(pos.distance),
                w_n_star: w_n,
                w_p_star: Some(w_p),
                s_n,
                s_p: Some(s_p),
                s_ratio: ratio_score(s_n, s_p, opts.epsilon),
                epsilon: opts.epsilon,
                b: opts.b,
            })
        }
    }
}

/// Maps a source-space grid into the bank's space.
pub fn to_bank_space(grid: &PatchGrid, banks: &BankPair) -> Result<PatchGrid> {
    if grid.dim != banks.projection.cols {
        return Err(Error::DimensionMismatch {
            expected: banks.projection.cols,
            got: grid.dim,
        });
    }
    if !banks.store_projected {
        return Ok(grid.clone());
    }
    let proj = &banks.projection;
    Ok(grid.map_vectors(proj.rows, |v, out| proj.apply(v, out)))
}
