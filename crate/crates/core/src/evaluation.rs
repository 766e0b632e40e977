//! Image- and pixel-level AUROC over a test manifest, plus augmentation
//! sweeps that rebuild the positive bank with a growing synthetic subset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{build_negative, build_positive, BankPair};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::localization::localize_image;
use crate::manifest::{DatasetManifest, ManifestEntry, Role};
use crate::pipeline::{load_mask, load_patch_grid, GridSource, Mask};
use crate::scoring::{score_image, to_bank_space, ScoreMode, ScoreOptions, ScoreRecord};

/// Synthetic-sample counts of the augmentation study.
pub const DEFAULT_SWEEP: [usize; 4] = [0, 50, 100, 150];

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(scores: &[(u8, f32)]) -> Result<f64> {
    let (labels, values): (Vec<u8>, Vec<f32>) = scores.iter().copied().unzip();
    auroc_split(&labels, &values)
}

/// AUROC over parallel label and score slices; any nonzero label is positive.
pub fn auroc_split(labels: &[u8], scores: &[f32]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len());
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NanScore);
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.par_sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // 2U = sum over tie groups of pos_in_group * (2 * neg_below + neg_in_group)
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u128, 0u128);
        while j < order.len() && scores[order[j]].total_cmp(&v).is_eq() {
            if labels[order[j]] != 0 {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        twice_u += pos_g * (2 * neg_below + neg_g);
        neg_below += neg_g;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub label: u8,
    pub s_ratio: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub i_auroc: f64,
    pub p_auroc: Option<f64>,
    pub per_image: Vec<ImageScore>,
    pub config_echo: RunConfig,
    pub augmented_count: usize,
}

/// Per-image output of [`score_entries`].
#[derive(Debug, Clone)]
pub struct EntryResult {
    pub record: ScoreRecord,
    /// Rendered map values and ground-truth mask, when pixels are evaluated.
    pub pixels: Option<(Vec<f32>, Mask)>,
}

fn test_entries(manifest: &DatasetManifest) -> Result<Vec<&ManifestEntry>> {
    let entries: Vec<_> = manifest.with_role(Role::Test).collect();
    if entries.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(entries)
}

/// Scores (and optionally localizes) every test entry, in manifest order.
pub fn score_entries(
    manifest: &DatasetManifest,
    banks: &BankPair,
    cfg: &RunConfig,
    source: &GridSource,
    pixel_eval: bool,
) -> Result<Vec<EntryResult>> {
    let entries = test_entries(manifest)?;
    let opts = ScoreOptions::from(cfg);
    opts.check_banks(banks)?;
    entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<EntryResult> {
                let grid = load_patch_grid(manifest, e, &banks.patch, source)?;
                let grid = to_bank_space(&grid, banks)?;
                let record = score_image(&grid, banks, &opts)?;
                let pixels = if pixel_eval {
                    let mask = match load_mask(manifest, e)? {
                        Some(m) => m,
                        None if e.label == 0 => Mask::zeros(e.image_size[0], e.image_size[1]),
                        None => return Err(Error::MissingMask(e.image_id.clone())),
                    };
                    let map = localize_image(&grid, banks, &opts, cfg.sigma)?;
                    Some((map.values, mask))
                } else {
                    None
                };
                Ok(EntryResult { record, pixels })
            };
            run().map_err(|err| match err {
                Error::Image { .. } => err,
                other => other.for_image(&e.image_id),
            })
        })
        .collect()
}

fn pixel_auroc(results: &[EntryResult], cap: Option<usize>) -> Result<f64> {
    let total: usize = results
        .iter()
        .filter_map(|r| r.pixels.as_ref())
        .map(|(v, _)| v.len())
        .sum();
    let step = match cap {
        Some(c) if c > 0 && total > c => total.div_ceil(c),
        _ => 1,
    };
    let mut labels = Vec::with_capacity(total / step + 1);
    let mut scores = Vec::with_capacity(total / step + 1);
    let mut k = 0usize;
    for (values, mask) in results.iter().filter_map(|r| r.pixels.as_ref()) {
        for (v, m) in values.iter().zip(&mask.data) {
            if k.is_multiple_of(step) {
                scores.push(*v);
                labels.push(u8::from(*m != 0));
            }
            k += 1;
        }
    }
    auroc_split(&labels, &scores)
}

/// Scores every test entry and computes I-AUROC, plus P-AUROC over all
/// pooled pixels when the test set carries any mask.
pub fn evaluate(
    manifest: &DatasetManifest,
    banks: &BankPair,
    cfg: &RunConfig,
    source: &GridSource,
) -> Result<EvalReport> {
    cfg.validate()?;
    let entries = test_entries(manifest)?;
    let pixel_eval = entries.iter().any(|e| e.mask_path.is_some());
    let results = score_entries(manifest, banks, cfg, source, pixel_eval)?;
    let per_image: Vec<ImageScore> = entries
        .iter()
        .zip(&results)
        .map(|(e, r)| ImageScore {
            image_id: e.image_id.clone(),
            label: e.label,
            s_ratio: r.record.s_ratio,
        })
        .collect();
    let pairs: Vec<(u8, f32)> = per_image.iter().map(|s| (s.label, s.s_ratio)).collect();
    let i_auroc = auroc(&pairs)?;
    let p_auroc = if pixel_eval {
        Some(pixel_auroc(&results, cfg.max_eval_pixels)?)
    } else {
        None
    };
    Ok(EvalReport {
        i_auroc,
        p_auroc,
        per_image,
        config_echo: cfg.clone(),
        augmented_count: banks.positive.as_ref().map_or(0, |p| p.augmented_count),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepColumn {
    pub augmented_count: usize,
    pub i_auroc: f64,
    pub p_auroc: Option<f64>,
    /// Mode actually used; falls back to negative-only without a positive bank.
    pub mode: ScoreMode,
    pub positive_bank_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub columns: Vec<SweepColumn>,
    pub config_echo: RunConfig,
}

/// Keeps every non-synthetic entry plus the first `count` synthetic ones.
pub fn with_synthetic_subset(manifest: &DatasetManifest, count: usize) -> Result<DatasetManifest> {
    let available = manifest.entries.iter().filter(|e| e.synthetic).count();
    if count > available {
        return Err(Error::Config(format!(
            "sweep asks for {count} synthetic samples but the manifest has {available}"
        )));
    }
    let mut taken = 0;
    let mut subset = manifest.clone();
    subset.entries.retain(|e| {
        if !e.synthetic {
            return true;
        }
        taken += 1;
        taken <= count
    });
    Ok(subset)
}

/// Evaluates the test set once per synthetic-sample count. The negative bank
/// is shared; the positive bank is rebuilt per column.
pub fn augmentation_sweep(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &RunConfig,
    source: &GridSource,
    counts: &[usize],
) -> Result<SweepReport> {
    cfg.validate()?;
    let (negative, projection) = build_negative(train, cfg, source)?;
    let mut columns = Vec::with_capacity(counts.len());
    for &count in counts {
        let subset = with_synthetic_subset(train, count)?;
        let positive = match build_positive(&subset, cfg, source, &projection) {
            Ok(bank) => Some(bank),
            Err(Error::NoAnomalous | Error::EmptyPositiveSet) => None,
            Err(e) => return Err(e),
        };
        let mut run_cfg = cfg.clone();
        if positive.is_none() {
            run_cfg.mode = ScoreMode::NegativeOnly;
        }
        let pair = BankPair {
            projection: projection.clone(),
            patch: cfg.patch.clone(),
            store_projected: cfg.flags.store_projected,
            negative: negative.clone(),
            positive,
            config: cfg.clone(),
        };
        let report = evaluate(test, &pair, &run_cfg, source)?;
        columns.push(SweepColumn {
            augmented_count: count,
            i_auroc: report.i_auroc,
            p_auroc: report.p_auroc,
            mode: run_cfg.mode,
            positive_bank_size: pair.positive.as_ref().map_or(0, |p| p.len()),
        });
    }
    Ok(SweepReport {
        columns,
        config_echo: cfg.clone(),
    })
}

/// Per-image scores as CSV: `image_id,label,s_ratio`.
pub fn scores_csv(report: &EvalReport) -> String {
    let mut out = String::from("image_id,label,s_ratio\n");
    for s in &report.per_image {
        out.push_str(&format!("{},{},{}\n", s.image_id, s.label, s.s_ratio));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_is_one() {
        assert_eq!(
            auroc(&[(0, 0.1), (0, 0.2), (1, 0.3), (1, 0.9)]).unwrap(),
            1.0
        );
        assert_eq!(auroc(&[(1, 0.1), (0, 0.2)]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(
            auroc(&[(0, 1.0), (1, 1.0), (0, 1.0), (1, 1.0), (1, 1.0)]).unwrap(),
            0.5
        );
    }

    #[test]
    fn four_point_cases() {
        // positives {0.35, 0.8} vs negatives {0.1, 0.4}: 3 wins, 1 loss
        assert_eq!(
            auroc(&[(0, 0.1), (0, 0.4), (1, 0.35), (1, 0.8)]).unwrap(),
            0.75
        );
        // positives {0.4, 0.8} vs negatives {0.1, 0.35}: 4 wins
        assert_eq!(
            auroc(&[(0, 0.1), (1, 0.4), (0, 0.35), (1, 0.8)]).unwrap(),
            1.0
        );
    }

    #[test]
    fn single_class_and_nan() {
        assert!(matches!(
            auroc(&[(1, 0.1), (1, 0.2)]),
            Err(Error::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
        assert!(matches!(
            auroc(&[(1, f32::NAN), (0, 0.2)]),
            Err(Error::NanScore)
        ));
    }

    #[test]
    fn infinities_are_ordered() {
        assert_eq!(auroc(&[(0, 1.0), (1, f32::INFINITY)]).unwrap(), 1.0);
    }

    #[test]
    fn synthetic_subset_keeps_real_entries() {
        use crate::manifest::ManifestEntry;
        let mk = |id: &str, synthetic: bool| ManifestEntry {
            image_id: id.into(),
            role: Role::Anomalous,
            label: 1,
            feature_paths: Default::default(),
            mask_path: Some("m.etf".into()),
            image_size: [8, 8],
            synthetic,
        };
        let m = DatasetManifest::new(vec![
            mk("r0", false),
            mk("s0", true),
            mk("s1", true),
            mk("r1", false),
        ]);
        let ids = |m: &DatasetManifest| {
            m.entries
                .iter()
                .map(|e| e.image_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(
            ids(&with_synthetic_subset(&m, 0).unwrap()),
            vec!["r0", "r1"]
        );
        assert_eq!(
            ids(&with_synthetic_subset(&m, 1).unwrap()),
            vec!["r0", "s0", "r1"]
        );
        assert!(with_synthetic_subset(&m, 3).is_err());
    }
}
