//! Random Gaussian projection and greedy k-center coreset selection.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded
//! through `seed_from_u64`, so banks are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{squared_distance, VectorSet};

/// Row-normalized Gaussian matrix mapping `cols`-dim vectors to `rows` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f32>,
    pub seed: u64,
}

impl ProjectionMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, v: &[f32], out: &mut [f32]) {
        for (i, o) in out.iter_mut().enumerate() {
            let acc: f64 = self
                .row(i)
                .iter()
                .zip(v)
                .map(|(&a, &x)| a as f64 * x as f64)
                .sum();
            *o = acc as f32;
        }
    }
}

pub fn make_projection(d: usize, d_star: usize, seed: u64) -> Result<ProjectionMatrix> {
    if d_star == 0 || d_star > d {
        return Err(Error::Config(format!(
            "projection needs 1 <= d* <= d, got d*={d_star}, d={d}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(d * d_star);
    let mut row = vec![0.0f64; d];
    for _ in 0..d_star {
        for x in row.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        entries.extend(row.iter().map(|x| (x / norm) as f32));
    }
    Ok(ProjectionMatrix {
        rows: d_star,
        cols: d,
        entries,
        seed,
    })
}

/// Projects row-major `[n, m.cols]` vectors to `[n, m.rows]`.
pub fn project(m: &ProjectionMatrix, vectors: &[f32]) -> Result<Vec<f32>> {
    if !vectors.len().is_multiple_of(m.cols) {
        return Err(Error::DimensionMismatch {
            expected: m.cols,
            got: vectors.len(),
        });
    }
    let n = vectors.len() / m.cols;
    let mut out = vec![0.0f32; n * m.rows];
    out.par_chunks_mut(m.rows)
        .zip(vectors.par_chunks(m.cols))
        .for_each(|(o, v)| m.apply(v, o));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetSelection {
    /// Source indices in selection order.
    pub indices: Vec<usize>,
    /// Largest distance from any source point to its closest selected point.
    pub covering_radius: f32,
}

/// `max(1, ceil(rate * n))`, with products within 1e-9 of an integer
/// treated as that integer so `0.02 * 50` selects 1 rather than 2.
pub fn subsample_count(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n.max(1))
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!(
            "rate must lie in (0, 1], got {rate}"
        )));
    }
    Ok(())
}

/// Greedy farthest-point coreset of `max(1, ceil(rate * n))` points. The
/// first point is drawn uniformly from the seeded generator.
pub fn greedy_coreset(
    vectors: &[f32],
    dim: usize,
    rate: f64,
    seed: u64,
) -> Result<CoresetSelection> {
    check_rate(rate)?;
    let set = VectorSet::new(vectors, dim)?;
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = set.len();
    let start = ChaCha20Rng::seed_from_u64(seed).random_range(0..n);
    greedy_coreset_from(vectors, dim, subsample_count(rate, n), start)
}

/// Farthest-point traversal of `k` points starting at `start`.
pub fn greedy_coreset_from(
    vectors: &[f32],
    dim: usize,
    k: usize,
    start: usize,
) -> Result<CoresetSelection> {
    let set = VectorSet::new(vectors, dim)?;
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if start >= n {
        return Err(Error::Config(format!(
            "start index {start} out of range for {n} points"
        )));
    }
    let k = k.clamp(1, n);

    let mut selected = vec![false; n];
    let mut indices = Vec::with_capacity(k);
    let mut min_sq = vec![f64::INFINITY; n];
    let mut next = start;
    loop {
        selected[next] = true;
        indices.push(next);
        let center = set.get(next);
        min_sq.par_iter_mut().enumerate().for_each(|(i, m)| {
            let d = squared_distance(set.get(i), center);
            if d < *m {
                *m = d;
            }
        });
        if indices.len() == k {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in min_sq.iter().enumerate() {
            if !selected[i] && best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        next = best.expect("k <= n leaves an unselected point").0;
    }

    let radius = min_sq.iter().copied().fold(0.0f64, f64::max).sqrt();
    Ok(CoresetSelection {
        indices,
        covering_radius: radius as f32,
    })
}

/// Max over all points of the distance to the nearest of `centers`.
pub fn covering_radius(vectors: &[f32], dim: usize, centers: &[usize]) -> Result<f64> {
    let set = VectorSet::new(vectors, dim)?;
    let radius = set
        .iter()
        .map(|v| {
            centers
                .iter()
                .map(|&c| squared_distance(v, set.get(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max);
    Ok(radius.sqrt())
}
