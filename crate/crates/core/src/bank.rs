//! Negative and positive memory banks, and their on-disk format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "EXDD" | version: u16 | header_len: u32 | header JSON
//!        | projection f32[d* x d] | negative f32[M_neg x dim] | positive f32[M_pos x dim]
//!        | crc32: u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::knn::VectorSet;
use crate::manifest::{DatasetManifest, Role};
use crate::patch::PatchConfig;
use crate::pipeline::{defective_patches, load_mask, load_patch_grid, GridSource};
use crate::reduction::{greedy_coreset, make_projection, project, ProjectionMatrix};

pub const BANK_MAGIC: &[u8; 4] = b"EXDD";
pub const BANK_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub polarity: Polarity,
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub subsample_rate: f64,
    /// Vectors pooled before coreset selection.
    pub source_count: usize,
    /// Coreset covering radius, measured in projected space.
    pub covering_radius: f32,
    pub coreset_seed: u64,
    /// Synthetic (inpainted) images that contributed to the pool.
    pub augmented_count: usize,
}

impl MemoryBank {
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn as_set(&self) -> VectorSet<'_> {
        VectorSet::new(&self.vectors, self.dim).expect("bank vectors are dim-aligned")
    }

    fn meta(&self) -> BankMeta {
        BankMeta {
            polarity: self.polarity,
            count: self.len(),
            dim: self.dim,
            subsample_rate: self.subsample_rate,
            source_count: self.source_count,
            covering_radius: self.covering_radius,
            coreset_seed: self.coreset_seed,
            augmented_count: self.augmented_count,
        }
    }
}

/// Negative bank plus optional positive bank over one shared projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BankPair {
    pub projection: ProjectionMatrix,
    pub patch: PatchConfig,
    /// Whether bank vectors live in projected (`d*`) or source (`d`) space.
    pub store_projected: bool,
    pub negative: MemoryBank,
    pub positive: Option<MemoryBank>,
    /// Configuration the pair was built with.
    pub config: RunConfig,
}

impl BankPair {
    /// Dimension that test patches must have before scoring.
    pub fn space_dim(&self) -> usize {
        self.negative.dim
    }

    /// Maps source-space patch vectors into bank space.
    pub fn to_bank_space(&self, vectors: &[f32]) -> Result<Vec<f32>> {
        if self.store_projected {
            project(&self.projection, vectors)
        } else if !vectors.len().is_multiple_of(self.projection.cols) {
            Err(Error::DimensionMismatch {
                expected: self.projection.cols,
                got: vectors.len(),
            })
        } else {
            Ok(vectors.to_vec())
        }
    }
}

/// Projects `source` (row-major, `projection.cols` wide), selects a coreset
/// in projected space and keeps the selected rows.
pub fn build_bank(
    polarity: Polarity,
    source: &[f32],
    projection: &ProjectionMatrix,
    store_projected: bool,
    rate: f64,
    coreset_seed: u64,
) -> Result<MemoryBank> {
    let projected = project(projection, source)?;
    let selection = greedy_coreset(&projected, projection.rows, rate, coreset_seed)?;
    let (space, dim): (&[f32], usize) = if store_projected {
        (&projected, projection.rows)
    } else {
        (source, projection.cols)
    };
    let mut vectors = Vec::with_capacity(selection.indices.len() * dim);
    for &i in &selection.indices {
        vectors.extend_from_slice(&space[i * dim..(i + 1) * dim]);
    }
    Ok(MemoryBank {
        polarity,
        dim,
        vectors,
        subsample_rate: rate,
        source_count: projected.len() / projection.rows,
        covering_radius: selection.covering_radius,
        coreset_seed,
        augmented_count: 0,
    })
}

fn pool(grids: Vec<(usize, Vec<f32>)>) -> Result<(usize, Vec<f32>)> {
    let dim = grids.first().map(|g| g.0).ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(grids.iter().map(|g| g.1.len()).sum());
    for (d, v) in grids {
        if d != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: d,
            });
        }
        out.extend(v);
    }
    Ok((dim, out))
}

/// Pools every patch of every nominal image and builds the negative bank.
/// Returns the bank together with the projection it created.
pub fn build_negative(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    source: &GridSource,
) -> Result<(MemoryBank, ProjectionMatrix)> {
    let entries: Vec<_> = manifest.with_role(Role::Nominal).collect();
    if entries.is_empty() {
        return Err(Error::NoNominal);
    }
    let grids = entries
        .par_iter()
        .map(|e| load_patch_grid(manifest, e, &cfg.patch, source).map(|g| (g.dim, g.vectors)))
        .collect::<Result<Vec<_>>>()?;
    let (d, pooled) = pool(grids)?;
    let projection = make_projection(d, cfg.d_star, cfg.seeds.projection)?;
    let bank = build_bank(
        Polarity::Negative,
        &pooled,
        &projection,
        cfg.flags.store_projected,
        cfg.rates.negative,
        cfg.seeds.coreset_neg,
    )?;
    Ok((bank, projection))
}

/// Pools the defective patches of every anomalous image and builds the
/// positive bank on the shared projection.
pub fn build_positive(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    source: &GridSource,
    shared_proj: &ProjectionMatrix,
) -> Result<MemoryBank> {
    let entries: Vec<_> = manifest.with_role(Role::Anomalous).collect();
    if entries.is_empty() {
        return Err(Error::NoAnomalous);
    }
    let parts = entries
        .par_iter()
        .map(|e| {
            let mask =
                load_mask(manifest, e)?.ok_or_else(|| Error::MissingMask(e.image_id.clone()))?;
            let grid = load_patch_grid(manifest, e, &cfg.patch, source)?;
            let flags = defective_patches(
                &mask,
                (grid.height, grid.width),
                &cfg.patch,
                cfg.mask_coverage_tau,
            );
            let mut picked = Vec::new();
            for (v, keep) in grid.iter().zip(flags) {
                if keep {
                    picked.extend_from_slice(v);
                }
            }
            Ok((grid.dim, picked))
        })
        .collect::<Result<Vec<_>>>()?;
    let (d, pooled) = pool(parts)?;
    if d != shared_proj.cols {
        return Err(Error::DimensionMismatch {
            expected: shared_proj.cols,
            got: d,
        });
    }
    if pooled.is_empty() {
        return Err(Error::EmptyPositiveSet);
    }
    let mut bank = build_bank(
        Polarity::Positive,
        &pooled,
        shared_proj,
        cfg.flags.store_projected,
        cfg.rates.positive,
        cfg.seeds.coreset_pos,
    )?;
    bank.augmented_count = entries.iter().filter(|e| e.synthetic).count();
    Ok(bank)
}

/// Result of building both banks. A positive bank that cannot be built
/// (no anomalous entries, or no defective patches) leaves a negative-only
/// pair and records why.
#[derive(Debug)]
pub struct BankBuild {
    pub pair: BankPair,
    pub positive_skipped: Option<Error>,
}

pub fn build_bank_pair(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    source: &GridSource,
) -> Result<BankBuild> {
    cfg.validate()?;
    let (negative, projection) = build_negative(manifest, cfg, source)?;
    let (positive, positive_skipped) = match build_positive(manifest, cfg, source, &projection) {
        Ok(bank) => (Some(bank), None),
        Err(e @ (Error::NoAnomalous | Error::EmptyPositiveSet)) => (None, Some(e)),
        Err(e) => return Err(e),
    };
    Ok(BankBuild {
        pair: BankPair {
            projection,
            patch: cfg.patch.clone(),
            store_projected: cfg.flags.store_projected,
            negative,
            positive,
            config: cfg.clone(),
        },
        positive_skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BankMeta {
    polarity: Polarity,
    count: usize,
    dim: usize,
    subsample_rate: f64,
    source_count: usize,
    covering_radius: f32,
    coreset_seed: u64,
    augmented_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BankHeader {
    d: usize,
    d_star: usize,
    projection_seed: u64,
    store_projected: bool,
    patch: PatchConfig,
    negative: BankMeta,
    positive: Option<BankMeta>,
    config: RunConfig,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_bank_pair(pair: &BankPair) -> Result<Vec<u8>> {
    let header = BankHeader {
        d: pair.projection.cols,
        d_star: pair.projection.rows,
        projection_seed: pair.projection.seed,
        store_projected: pair.store_projected,
        patch: pair.patch.clone(),
        negative: pair.negative.meta(),
        positive: pair.positive.as_ref().map(MemoryBank::meta),
        config: pair.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let json_len =
        u32::try_from(json.len()).map_err(|_| Error::BankFormat("header too large".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    push_f32s(&mut out, &pair.projection.entries);
    push_f32s(&mut out, &pair.negative.vectors);
    if let Some(p) = &pair.positive {
        push_f32s(&mut out, &p.vectors);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::BankFormat(format!("truncated at byte {} (wanted {n} more)", self.at))
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::BankFormat("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn bank_from_meta(meta: BankMeta, vectors: Vec<f32>) -> MemoryBank {
    MemoryBank {
        polarity: meta.polarity,
        dim: meta.dim,
        vectors,
        subsample_rate: meta.subsample_rate,
        source_count: meta.source_count,
        covering_radius: meta.covering_radius,
        coreset_seed: meta.coreset_seed,
        augmented_count: meta.augmented_count,
    }
}

pub fn decode_bank_pair(bytes: &[u8]) -> Result<BankPair> {
    if bytes.len() < 4 || &bytes[..4] != BANK_MAGIC {
        return Err(Error::BankMagic);
    }
    if bytes.len() < 6 + 4 + 4 {
        return Err(Error::BankFormat("file too short".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BANK_VERSION {
        return Err(Error::BankVersion {
            found: version,
            expected: BANK_VERSION,
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::BankChecksum { stored, computed });
    }

    let mut r = Reader {
        bytes: payload,
        at: 6,
    };
    let json_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: BankHeader = serde_json::from_slice(r.take(json_len)?)?;
    let entries = r.f32s(header.d * header.d_star)?;
    let neg_dim = header.negative.dim;
    let expected_dim = if header.store_projected {
        header.d_star
    } else {
        header.d
    };
    if neg_dim != expected_dim
        || header
            .positive
            .as_ref()
            .is_some_and(|p| p.dim != expected_dim)
    {
        return Err(Error::BankFormat(
            "bank dimension disagrees with header".into(),
        ));
    }
    let negative_vectors = r.f32s(header.negative.count * neg_dim)?;
    let positive = match header.positive {
        Some(meta) => {
            let v = r.f32s(meta.count * meta.dim)?;
            Some(bank_from_meta(meta, v))
        }
        None => None,
    };
    if r.at != payload.len() {
        return Err(Error::BankFormat(format!(
            "{} unexpected trailing bytes",
            payload.len() - r.at
        )));
    }
    if header.negative.count == 0 {
        return Err(Error::EmptyBank);
    }
    Ok(BankPair {
        projection: ProjectionMatrix {
            rows: header.d_star,
            cols: header.d,
            entries,
            seed: header.projection_seed,
        },
        patch: header.patch,
        store_projected: header.store_projected,
        negative: bank_from_meta(header.negative, negative_vectors),
        positive,
        config: header.config,
    })
}

pub fn save_bank_pair(pair: &BankPair, path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let bytes = encode_bank_pair(pair)?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(crc)
}

pub fn load_bank_pair(path: impl AsRef<Path>) -> Result<BankPair> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bank_pair(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_pair(with_positive: bool) -> BankPair {
        let projection = make_projection(6, 3, 9).unwrap();
        let src: Vec<f32> = (0..60)
            .map(|i| ((i * 37 % 17) as f32) * 0.25 - 2.0)
            .collect();
        let negative = build_bank(Polarity::Negative, &src, &projection, true, 0.5, 1).unwrap();
        let positive = with_positive.then(|| {
            build_bank(Polarity::Positive, &src[..24], &projection, true, 1.0, 2).unwrap()
        });
        BankPair {
            projection,
            patch: PatchConfig::default(),
            store_projected: true,
            negative,
            positive,
            config: RunConfig::default(),
        }
    }

    #[test]
    fn bank_size_and_membership() {
        let pair = small_pair(true);
        assert_eq!(pair.negative.len(), 5);
        assert_eq!(pair.negative.source_count, 10);
        let src: Vec<f32> = (0..60)
            .map(|i| ((i * 37 % 17) as f32) * 0.25 - 2.0)
            .collect();
        let projected = project(&pair.projection, &src).unwrap();
        for v in pair.negative.as_set().iter() {
            assert!(projected.chunks_exact(3).any(|p| p == v));
        }
    }

    #[test]
    fn round_trip() {
        for with_positive in [true, false] {
            let pair = small_pair(with_positive);
            let bytes = encode_bank_pair(&pair).unwrap();
            let back = decode_bank_pair(&bytes).unwrap();
            assert_eq!(back, pair);
            assert_eq!(back.positive.is_some(), with_positive);
            assert_eq!(encode_bank_pair(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_bank_pair(&small_pair(true)).unwrap();
        let mut flipped = bytes.clone();
        let at = bytes.len() - 10;
        flipped[at] ^= 0x40;
        assert!(matches!(
            decode_bank_pair(&flipped),
            Err(Error::BankChecksum { .. })
        ));

        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            decode_bank_pair(&version),
            Err(Error::BankVersion { found: 9, .. })
        ));

        let mut magic = bytes.clone();
        magic[0] = b'Y';
        assert!(matches!(decode_bank_pair(&magic), Err(Error::BankMagic)));
    }

    #[test]
    fn unprojected_storage_keeps_source_rows() {
        let projection = make_projection(4, 2, 3).unwrap();
        let src: Vec<f32> = (0..20).map(|i| i as f32).collect();
        let bank = build_bank(Polarity::Negative, &src, &projection, false, 1.0, 0).unwrap();
        assert_eq!(bank.dim, 4);
        assert_eq!(bank.len(), 5);
        for v in bank.as_set().iter() {
            assert!(src.chunks_exact(4).any(|s| s == v));
        }
    }
}
