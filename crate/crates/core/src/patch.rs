//! Locally aware patch features.
//!
//! Each backbone level `[c, h, w]` is mean-pooled over a `p x p` neighborhood
//! per position (clamp-to-edge at the borders), the coarser levels are
//! bilinearly resized onto the finest level's grid, and the per-level vectors
//! are concatenated in ascending level order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::bilinear_resize;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub levels: Vec<usize>,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 3,
            stride: 1,
            levels: vec![2, 3],
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch_size must be odd and >= 1, got {}",
                self.patch_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Config(
                "at least one feature level is required".into(),
            ));
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return Err(Error::Config("feature levels must be distinct".into()));
        }
        Ok(())
    }

    pub fn sorted_levels(&self) -> Vec<usize> {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels
    }
}

/// A `[height, width, dim]` grid of patch vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub vectors: Vec<f32>,
    /// `(height, width)` of the source image in pixels.
    pub source_image_size: (usize, usize),
}

impl PatchGrid {
    pub fn new(
        height: usize,
        width: usize,
        dim: usize,
        vectors: Vec<f32>,
        source_image_size: (usize, usize),
    ) -> Result<Self> {
        if vectors.len() != height * width * dim {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, dim],
                got: vec![vectors.len()],
            });
        }
        Ok(Self {
            height,
            width,
            dim,
            vectors,
            source_image_size,
        })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, row: usize, col: usize) -> &[f32] {
        let at = (row * self.width + col) * self.dim;
        &self.vectors[at..at + self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.height, self.width, self.dim],
            self.vectors.clone(),
        )
        .expect("grid shape is consistent")
    }

    pub fn from_tensor(t: &Tensor, source_image_size: (usize, usize)) -> Result<Self> {
        let data = t.as_f32().ok_or(Error::NotF32)?;
        let &[h, w, d] = t.shape() else {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                got: t.shape().to_vec(),
            });
        };
        Self::new(h, w, d, data.to_vec(), source_image_size)
    }

    /// Replaces every vector with `f(vector)`, which may change the dim.
    pub fn map_vectors(&self, dim: usize, f: impl Fn(&[f32], &mut [f32]) + Sync) -> PatchGrid {
        let mut out = vec![0.0f32; self.len() * dim];
        out.par_chunks_mut(dim)
            .zip(self.vectors.par_chunks(self.dim))
            .for_each(|(o, v)| f(v, o));
        PatchGrid {
            height: self.height,
            width: self.width,
            dim,
            vectors: out,
            source_image_size: self.source_image_size,
        }
    }
}

/// JSON sidecar written next to a serialized grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub p: usize,
    pub s: usize,
    pub levels: Vec<usize>,
    pub source_image_size: [usize; 2],
}

/// The `p x p` index multiset around `(row, col)` with indices clamped into
/// the grid, always `p * p` entries in row-major order.
pub fn neighborhood(
    row: usize,
    col: usize,
    p: usize,
    rows: usize,
    cols: usize,
) -> Vec<(usize, usize)> {
    let half = (p / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = Vec::with_capacity(p * p);
    for dr in -half..=half {
        for dc in -half..=half {
            out.push((clamp(row as i64 + dr, rows), clamp(col as i64 + dc, cols)));
        }
    }
    out
}

/// Mean-pools one `[c, h, w]` feature map into a patch grid.
pub fn aggregate_patches(
    feature_map: &Tensor,
    cfg: &PatchConfig,
    source_image_size: (usize, usize),
) -> Result<PatchGrid> {
    cfg.validate()?;
    let data = feature_map.as_f32().ok_or(Error::NotF32)?;
    let &[c, h, w] = feature_map.shape() else {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0, 0],
            got: feature_map.shape().to_vec(),
        });
    };
    let s = cfg.stride;
    let p = cfg.patch_size;
    let out_h = h.div_ceil(s);
    let out_w = w.div_ceil(s);
    let norm = 1.0 / (p * p) as f64;

    let mut vectors = vec![0.0f32; out_h * out_w * c];
    vectors
        .par_chunks_mut(out_w * c)
        .enumerate()
        .for_each(|(oy, row_out)| {
            let mut acc = vec![0.0f64; c];
            for ox in 0..out_w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (a, b) in neighborhood(oy * s, ox * s, p, h, w) {
                    for (k, slot) in acc.iter_mut().enumerate() {
                        *slot += data[(k * h + a) * w + b] as f64;
                    }
                }
                for (k, slot) in acc.iter().enumerate() {
                    row_out[ox * c + k] = (slot * norm) as f32;
                }
            }
        });
    PatchGrid::new(out_h, out_w, c, vectors, source_image_size)
}

/// Concatenates per-level grids onto the lowest level's spatial grid.
pub fn fuse_hierarchy(
    layer_grids: &BTreeMap<usize, PatchGrid>,
    levels: &[usize],
) -> Result<PatchGrid> {
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    let reference = levels.first().ok_or(Error::MissingLevel(0))?;
    let base = layer_grids
        .get(reference)
        .ok_or(Error::MissingLevel(*reference))?;
    let (h, w) = (base.height, base.width);

    let mut parts = Vec::with_capacity(levels.len());
    for level in &levels {
        let grid = layer_grids.get(level).ok_or(Error::MissingLevel(*level))?;
        let data = bilinear_resize(&grid.vectors, (grid.height, grid.width), grid.dim, (h, w));
        parts.push((grid.dim, data));
    }

    let dim: usize = parts.iter().map(|(d, _)| d).sum();
    let mut vectors = Vec::with_capacity(h * w * dim);
    for i in 0..h * w {
        for (d, data) in &parts {
            vectors.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
    }
    PatchGrid::new(h, w, dim, vectors, base.source_image_size)
}

/// Full per-image patchify: aggregate each level, then fuse.
pub fn patchify(
    maps: &BTreeMap<usize, Tensor>,
    cfg: &PatchConfig,
    source_image_size: (usize, usize),
) -> Result<PatchGrid> {
    let mut grids = BTreeMap::new();
    for &level in &cfg.levels {
        let map = maps.get(&level).ok_or(Error::MissingLevel(level))?;
        grids.insert(level, aggregate_patches(map, cfg, source_image_size)?);
    }
    fuse_hierarchy(&grids, &cfg.levels)
}
