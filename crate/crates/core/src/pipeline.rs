//! Per-image loading: feature maps to patch grids, masks to defective-patch
//! flags. Patch grids may come from cached `patchify` output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::patch::{patchify, GridSidecar, PatchConfig, PatchGrid};
use crate::tensor::{read_etf, write_etf, Tensor};

/// Binary `[height, width]` pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let data = t.as_u8().ok_or(Error::NotU8)?;
        let &[height, width] = t.shape() else {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0],
                got: t.shape().to_vec(),
            });
        };
        Ok(Self {
            height,
            width,
            data: data.to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_u8(vec![self.height, self.width], self.data.clone()).expect("mask shape")
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    /// Fraction of set pixels in the half-open pixel rectangle.
    fn coverage(&self, rows: (usize, usize), cols: (usize, usize)) -> f64 {
        let mut ones = 0usize;
        for r in rows.0..rows.1 {
            let line = &self.data[r * self.width..(r + 1) * self.width];
            ones += line[cols.0..cols.1].iter().filter(|&&v| v != 0).count();
        }
        ones as f64 / ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64
    }
}

/// Pixel span covered by feature cells `first..=last` out of `cells`.
fn pixel_span(first: usize, last: usize, cells: usize, pixels: usize) -> (usize, usize) {
    let start = first * pixels / cells;
    let end = ((last + 1) * pixels / cells).max(start + 1).min(pixels);
    (start.min(pixels - 1), end)
}

/// Flags, row-major over the patch grid, the patches whose receptive field
/// (the clamped `p x p` cell footprint scaled to pixels) has at least `tau`
/// of its mask pixels set. The feature grid is taken as `grid * stride`.
pub fn defective_patches(
    mask: &Mask,
    grid: (usize, usize),
    cfg: &PatchConfig,
    tau: f32,
) -> Vec<bool> {
    let (gh, gw) = grid;
    let (fh, fw) = (gh * cfg.stride, gw * cfg.stride);
    let half = cfg.patch_size / 2;
    let mut flags = Vec::with_capacity(gh * gw);
    for r in 0..gh {
        let cr = r * cfg.stride;
        let rows = pixel_span(
            cr.saturating_sub(half),
            (cr + half).min(fh - 1),
            fh,
            mask.height,
        );
        for c in 0..gw {
            let cc = c * cfg.stride;
            let cols = pixel_span(
                cc.saturating_sub(half),
                (cc + half).min(fw - 1),
                fw,
                mask.width,
            );
            flags.push(mask.coverage(rows, cols) >= tau as f64);
        }
    }
    flags
}

/// Where patch grids come from.
#[derive(Debug, Clone, Default)]
pub enum GridSource {
    /// Compute from the manifest's raw feature maps.
    #[default]
    Raw,
    /// Prefer `<dir>/<image_id>.etf` written by `patchify`, falling back to
    /// raw features when absent.
    Cached(PathBuf),
}

pub fn grid_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.etf"))
}

pub fn sidecar_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}.json"))
}

pub fn load_feature_maps(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    levels: &[usize],
) -> Result<BTreeMap<usize, Tensor>> {
    let mut maps = BTreeMap::new();
    for &level in levels {
        let rel = entry
            .feature_path(level)
            .ok_or(Error::MissingLevel(level))?;
        maps.insert(level, read_etf(manifest.resolve(rel))?);
    }
    Ok(maps)
}

fn load_cached(dir: &Path, entry: &ManifestEntry, cfg: &PatchConfig) -> Result<Option<PatchGrid>> {
    let path = grid_path(dir, &entry.image_id);
    if !path.exists() {
        return Ok(None);
    }
    let side = sidecar_path(dir, &entry.image_id);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: GridSidecar = serde_json::from_str(&text)?;
    if meta.p != cfg.patch_size || meta.s != cfg.stride || meta.levels != cfg.sorted_levels() {
        return Err(Error::Config(format!(
            "cached grid {} was built with p={}, s={}, levels={:?}",
            path.display(),
            meta.p,
            meta.s,
            meta.levels
        )));
    }
    let [h, w] = meta.source_image_size;
    Ok(Some(PatchGrid::from_tensor(&read_etf(&path)?, (h, w))?))
}

pub fn load_patch_grid(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    cfg: &PatchConfig,
    source: &GridSource,
) -> Result<PatchGrid> {
    let run = || -> Result<PatchGrid> {
        if let GridSource::Cached(dir) = source {
            if let Some(grid) = load_cached(dir, entry, cfg)? {
                return Ok(grid);
            }
        }
        let maps = load_feature_maps(manifest, entry, &cfg.levels)?;
        patchify(&maps, cfg, entry.image_size())
    };
    run().map_err(|e| e.for_image(&entry.image_id))
}

pub fn write_patch_grid(
    dir: &Path,
    image_id: &str,
    grid: &PatchGrid,
    cfg: &PatchConfig,
) -> Result<()> {
    write_etf(&grid.to_tensor(), grid_path(dir, image_id))?;
    let meta = GridSidecar {
        p: cfg.patch_size,
        s: cfg.stride,
        levels: cfg.sorted_levels(),
        source_image_size: [grid.source_image_size.0, grid.source_image_size.1],
    };
    let side = sidecar_path(dir, image_id);
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&side, e))
}

/// Loads an entry's mask, checking it matches the declared image size.
pub fn load_mask(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Option<Mask>> {
    let Some(rel) = &entry.mask_path else {
        return Ok(None);
    };
    let run = || -> Result<Mask> {
        let mask = Mask::from_tensor(&read_etf(manifest.resolve(rel))?)?;
        let (h, w) = entry.image_size();
        if (mask.height, mask.width) != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                got: vec![mask.height, mask.width],
            });
        }
        Ok(mask)
    };
    run().map(Some).map_err(|e| e.for_image(&entry.image_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(
        h: usize,
        w: usize,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Mask {
        let mut m = Mask::zeros(h, w);
        for r in rows {
            for c in cols.clone() {
                m.data[r * w + c] = 1;
            }
        }
        m
    }

    #[test]
    fn empty_mask_flags_nothing() {
        let m = Mask::zeros(32, 32);
        let flags = defective_patches(&m, (4, 4), &PatchConfig::default(), 0.25);
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn unit_patch_maps_cells_to_pixel_blocks() {
        let cfg = PatchConfig {
            patch_size: 1,
            ..PatchConfig::default()
        };
        // 4x4 grid over 32x32 pixels: cell (1, 2) is rows 8..16, cols 16..24
        let m = rect_mask(32, 32, 8..16, 16..24);
        let flags = defective_patches(&m, (4, 4), &cfg, 0.25);
        let set: Vec<usize> = flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(set, vec![6]);
    }

    #[test]
    fn coverage_threshold_on_3x3_footprint() {
        // single defective cell (2, 2) on a 5x5 grid, 8 px per cell
        let m = rect_mask(40, 40, 16..24, 16..24);
        let cfg = PatchConfig::default();
        // interior footprints are 3x3 cells; one cell = 1/9 coverage
        let flags = defective_patches(&m, (5, 5), &cfg, 0.1);
        assert_eq!(flags.iter().filter(|f| **f).count(), 9);
        let flags = defective_patches(&m, (5, 5), &cfg, 0.25);
        assert_eq!(flags.iter().filter(|f| **f).count(), 0);
    }

    #[test]
    fn border_footprint_is_clamped() {
        // corner cell defective; footprint at (0,0) is 2x2 cells -> 1/4
        let m = rect_mask(40, 40, 0..8, 0..8);
        let flags = defective_patches(&m, (5, 5), &PatchConfig::default(), 0.25);
        assert!(flags[0]);
        assert!(!flags[1]); // 2x3 footprint -> 1/6
    }
}
