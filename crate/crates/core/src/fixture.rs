//! Deterministic synthetic datasets: Gaussian feature maps with an optional
//! shifted defect rectangle, written as ETF files plus a manifest.
//!
//! Every cell of every level is drawn from `N(mu0, noise^2 I)`, where `mu0`
//! is a seeded per-channel mean shared by all images. Inside the defect
//! rectangle of an anomalous image, channel 0 of the finest level is shifted
//! by `cluster_separation`. With `near_separation` set, odd-numbered
//! anomalous images instead shift channel 1 by that amount, giving a second
//! anomaly cluster.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, Role};
use crate::pipeline::Mask;
use crate::tensor::{write_etf, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureLevel {
    pub level: usize,
    pub channels: usize,
    /// Spatial reduction relative to the finest level (`ceil` division).
    pub downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_nominal: usize,
    pub n_anomalous: usize,
    /// Extra anomalous training images flagged as synthetic.
    pub n_synthetic: usize,
    pub n_test_nominal: usize,
    pub n_test_anomalous: usize,
    /// Finest-level grid `[rows, cols]`.
    pub grid: [usize; 2],
    pub levels: Vec<FixtureLevel>,
    pub image_size: [usize; 2],
    pub noise: f32,
    pub cluster_separation: f32,
    pub near_separation: Option<f32>,
    pub defect_area: PatchRect,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 3,
            n_nominal: 20,
            n_anomalous: 10,
            n_synthetic: 0,
            n_test_nominal: 20,
            n_test_anomalous: 20,
            grid: [8, 8],
            levels: vec![
                FixtureLevel {
                    level: 2,
                    channels: 8,
                    downsample: 1,
                },
                FixtureLevel {
                    level: 3,
                    channels: 8,
                    downsample: 2,
                },
            ],
            image_size: [64, 64],
            noise: 1.0,
            cluster_separation: 10.0,
            near_separation: None,
            defect_area: PatchRect {
                row: 2,
                col: 2,
                height: 3,
                width: 3,
            },
        }
    }
}

impl FixtureSpec {
    /// Total channel count across levels.
    pub fn dim(&self) -> usize {
        self.levels.iter().map(|l| l.channels).sum()
    }

    pub fn level_ids(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.level).collect()
    }

    fn validate(&self) -> Result<()> {
        let [gh, gw] = self.grid;
        let r = self.defect_area;
        if gh == 0 || gw == 0 || self.image_size.contains(&0) {
            return Err(Error::Config(
                "fixture grid and image size must be non-empty".into(),
            ));
        }
        if r.height == 0 || r.width == 0 || r.row + r.height > gh || r.col + r.width > gw {
            return Err(Error::DefectOutsideGrid([r.row, r.col, r.height, r.width]));
        }
        let mut levels = self.levels.clone();
        levels.sort_by_key(|l| l.level);
        let finest = levels
            .first()
            .ok_or_else(|| Error::Config("fixture needs at least one level".into()))?;
        if finest.downsample != 1 {
            return Err(Error::Config(
                "the finest fixture level must have downsample 1".into(),
            ));
        }
        let need = if self.near_separation.is_some() { 2 } else { 1 };
        if finest.channels < need {
            return Err(Error::Config(format!(
                "the finest level needs at least {need} channels"
            )));
        }
        if levels.iter().any(|l| l.channels == 0 || l.downsample == 0) {
            return Err(Error::Config(
                "fixture levels need channels >= 1 and downsample >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Nominal,
    Anomalous { near: bool },
}

fn mask_for(spec: &FixtureSpec) -> Mask {
    let [gh, gw] = spec.grid;
    let [h, w] = spec.image_size;
    let r = spec.defect_area;
    let mut mask = Mask::zeros(h, w);
    let (r0, r1) = (r.row * h / gh, (r.row + r.height) * h / gh);
    let (c0, c1) = (r.col * w / gw, (r.col + r.width) * w / gw);
    for y in r0..r1 {
        for x in c0..c1 {
            mask.data[y * w + x] = 1;
        }
    }
    mask
}

struct Writer<'a> {
    spec: &'a FixtureSpec,
    out_dir: &'a Path,
    rng: ChaCha20Rng,
    means: Vec<Vec<f32>>,
}

impl Writer<'_> {
    fn feature_maps(&mut self, kind: Kind) -> Vec<Tensor> {
        let [gh, gw] = self.spec.grid;
        let noise = self.spec.noise;
        let mut maps = Vec::with_capacity(self.spec.levels.len());
        for (li, level) in self.spec.levels.iter().enumerate() {
            let (h, w) = (gh.div_ceil(level.downsample), gw.div_ceil(level.downsample));
            let c = level.channels;
            let mut data = vec![0.0f32; c * h * w];
            for k in 0..c {
                for cell in 0..h * w {
                    let z: f64 = self.rng.sample(StandardNormal);
                    data[k * h * w + cell] = self.means[li][k] + noise * z as f32;
                }
            }
            if level.downsample == 1 {
                if let Kind::Anomalous { near } = kind {
                    let (channel, shift) = match (near, self.spec.near_separation) {
                        (true, Some(s)) => (1, s),
                        _ => (0, self.spec.cluster_separation),
                    };
                    let r = self.spec.defect_area;
                    for y in r.row..r.row + r.height {
                        for x in r.col..r.col + r.width {
                            data[channel * h * w + y * w + x] += shift;
                        }
                    }
                }
            }
            maps.push(Tensor::from_f32(vec![c, h, w], data).expect("fixture shape"));
        }
        maps
    }

    fn entry(
        &mut self,
        image_id: String,
        role: Role,
        kind: Kind,
        synthetic: bool,
    ) -> Result<ManifestEntry> {
        let maps = self.feature_maps(kind);
        let mut feature_paths = std::collections::BTreeMap::new();
        for (level, map) in self.spec.levels.iter().zip(maps) {
            let rel = PathBuf::from("features").join(format!("{image_id}_l{}.etf", level.level));
            write_etf(&map, self.out_dir.join(&rel))?;
            feature_paths.insert(level.level.to_string(), rel);
        }
        let anomalous = matches!(kind, Kind::Anomalous { .. });
        let mask_path = if anomalous {
            let rel = PathBuf::from("masks").join(format!("{image_id}.etf"));
            write_etf(&mask_for(self.spec).to_tensor(), self.out_dir.join(&rel))?;
            Some(rel)
        } else {
            None
        };
        Ok(ManifestEntry {
            image_id,
            role,
            label: u8::from(anomalous),
            feature_paths,
            mask_path,
            image_size: self.spec.image_size,
            synthetic,
        })
    }
}

pub const FIXTURE_MANIFEST: &str = "manifest.json";

/// Writes the fixture tree under `out_dir` and returns its manifest.
pub fn generate_fixture(spec: &FixtureSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["features", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let means = spec
        .levels
        .iter()
        .map(|l| {
            (0..l.channels)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect()
        })
        .collect();
    let mut w = Writer {
        spec,
        out_dir,
        rng,
        means,
    };

    let near = |i: usize| Kind::Anomalous { near: i % 2 == 1 };
    let mut entries = Vec::new();
    for i in 0..spec.n_nominal {
        entries.push(w.entry(
            format!("train_nominal_{i:04}"),
            Role::Nominal,
            Kind::Nominal,
            false,
        )?);
    }
    for i in 0..spec.n_anomalous {
        entries.push(w.entry(
            format!("train_anomalous_{i:04}"),
            Role::Anomalous,
            near(i),
            false,
        )?);
    }
    for i in 0..spec.n_synthetic {
        entries.push(w.entry(
            format!("train_synthetic_{i:04}"),
            Role::Anomalous,
            near(i),
            true,
        )?);
    }
    for i in 0..spec.n_test_nominal {
        entries.push(w.entry(
            format!("test_nominal_{i:04}"),
            Role::Test,
            Kind::Nominal,
            false,
        )?);
    }
    for i in 0..spec.n_test_anomalous {
        entries.push(w.entry(format!("test_anomalous_{i:04}"), Role::Test, near(i), false)?);
    }

    let manifest = DatasetManifest::new(entries).with_base_dir(out_dir);
    manifest.validate(&spec.level_ids())?;
    manifest.save(out_dir.join(FIXTURE_MANIFEST))?;
    Ok(manifest)
}
