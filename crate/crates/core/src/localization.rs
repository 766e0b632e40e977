//! Pixel-level anomaly maps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::bank::{BankPair, MemoryBank, Polarity};
use crate::error::{Error, Result};
use crate::patch::PatchGrid;
use crate::resample::{bilinear_resize, gaussian_blur};
use crate::scoring::{
    nearest_per_patch, self_fraction, weight_from_fraction, ScoreMode, ScoreOptions,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    /// `[height, width]` map at image resolution.
    pub values: Vec<f32>,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Patch-grid map before upsampling and blur.
    pub grid_values: Vec<f32>,
    pub sigma: f32,
    /// Fusion epsilon; zero when the map is a single weighted distance map.
    pub epsilon: f32,
}

impl AnomalyMap {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.height, self.width], self.values.clone()).expect("map shape")
    }

    /// Per-image min-max normalization to 8 bits; a flat map is all zeros.
    pub fn to_u8(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 && span.is_finite() {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect()
    }

    /// Writes the 8-bit heatmap as a binary PGM image.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(self.values.len() + 32);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height).expect("vec write");
        out.extend(self.to_u8());
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn grid_tensor(patches: &PatchGrid, values: Vec<f32>) -> Tensor {
    Tensor::from_f32(vec![patches.height, patches.width], values).expect("grid shape")
}

/// Nearest-bank distance of every patch, as a `[h, w]` tensor.
pub fn distance_map(patches: &PatchGrid, bank: &MemoryBank) -> Result<Tensor> {
    let nearest = nearest_per_patch(patches, bank)?;
    Ok(grid_tensor(
        patches,
        nearest.iter().map(|&(_, d)| d as f32).collect(),
    ))
}

/// Distance map with each position reweighted by the density weight of its
/// own nearest bank vector.
pub fn weighted_distance_map(
    patches: &PatchGrid,
    bank: &MemoryBank,
    b: usize,
    polarity: Polarity,
) -> Result<Tensor> {
    if b == 0 {
        return Err(Error::Config("b must be >= 1".into()));
    }
    if bank.len() < b {
        return Err(Error::BankTooSmall {
            bank: bank.len(),
            needed: b,
        });
    }
    let nearest = nearest_per_patch(patches, bank)?;
    let set = bank.as_set();
    let anchors: Vec<usize> = {
        let mut a: Vec<usize> = nearest.iter().map(|n| n.0).collect();
        a.sort_unstable();
        a.dedup();
        a
    };
    let neighborhoods: BTreeMap<usize, Vec<usize>> = anchors
        .par_iter()
        .map(|&a| (a, set.neighborhood_of(a, b)))
        .collect();
    let values = patches
        .vectors
        .par_chunks(patches.dim)
        .zip(nearest.par_iter())
        .map(|(v, &(anchor, d))| {
            let fraction = self_fraction(v, anchor, &neighborhoods[&anchor], &set);
            weight_from_fraction(fraction, polarity) * d as f32
        })
        .collect();
    Ok(grid_tensor(patches, values))
}

/// Element-wise `negative / (positive + epsilon)`.
pub fn ratio_map(negative: &Tensor, positive: &Tensor, epsilon: f32) -> Result<Tensor> {
    if negative.shape() != positive.shape() {
        return Err(Error::ShapeMismatch {
            expected: negative.shape().to_vec(),
            got: positive.shape().to_vec(),
        });
    }
    let n = negative.as_f32().ok_or(Error::NotF32)?;
    let p = positive.as_f32().ok_or(Error::NotF32)?;
    let values = n
        .iter()
        .zip(p)
        .map(|(&a, &b)| (a as f64 / (b as f64 + epsilon as f64)) as f32)
        .collect();
    Ok(Tensor::from_f32(negative.shape().to_vec(), values)?)
}

/// Bilinear upsampling to `image_size` followed by a Gaussian blur.
pub fn render_map(grid: &Tensor, image_size: (usize, usize), sigma: f32) -> Result<AnomalyMap> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    let data = grid.as_f32().ok_or(Error::NotF32)?;
    let &[gh, gw] = grid.shape() else {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0],
            got: grid.shape().to_vec(),
        });
    };
    let (h, w) = image_size;
    let up = bilinear_resize(data, (gh, gw), 1, (h, w));
    Ok(AnomalyMap {
        height: h,
        width: w,
        values: gaussian_blur(&up, (h, w), sigma),
        grid_height: gh,
        grid_width: gw,
        grid_values: data.to_vec(),
        sigma,
        epsilon: 0.0,
    })
}

/// Full localization for one image whose grid is already in bank space.
pub fn localize_image(
    patches: &PatchGrid,
    banks: &BankPair,
    opts: &ScoreOptions,
    sigma: f32,
) -> Result<AnomalyMap> {
    let neg = weighted_distance_map(patches, &banks.negative, opts.b, Polarity::Negative)?;
    let (grid, epsilon) = match opts.mode {
        ScoreMode::NegativeOnly => (neg, 0.0),
        ScoreMode::Ratio => {
            let positive = banks.positive.as_ref().ok_or(Error::MissingPositiveBank)?;
            let pos = weighted_distance_map(patches, positive, opts.b, Polarity::Positive)?;
            (ratio_map(&neg, &pos, opts.epsilon)?, opts.epsilon)
        }
    };
    let mut map = render_map(&grid, patches.source_image_size, sigma)?;
    map.epsilon = epsilon;
    Ok(map)
}
