//! Exact flat nearest-neighbor search. Distances accumulate in f64; ties
//! resolve to the lowest index.

use crate::error::{Error, Result};

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
pub fn distance(a: &[f32], b: &[f32]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Row-major set of equal-length vectors.
#[derive(Debug, Clone, Copy)]
pub struct VectorSet<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> VectorSet<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { data, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f32]> + 'a {
        self.data.chunks_exact(self.dim)
    }

    /// Index and distance of the closest vector to `query`.
    pub fn nearest(&self, query: &[f32]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.iter().enumerate() {
            let d = squared_distance(query, v);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|(i, d)| (i, d.sqrt()))
    }

    /// `anchor` followed by the `b - 1` vectors closest to it, the anchor
    /// itself excluded from the candidates.
    pub fn neighborhood_of(&self, anchor: usize, b: usize) -> Vec<usize> {
        let a = self.get(anchor);
        let mut others: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| i != anchor)
            .map(|i| (squared_distance(a, self.get(i)), i))
            .collect();
        let order = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
        let keep = b.saturating_sub(1).min(others.len());
        if keep > 0 && keep < others.len() {
            others.select_nth_unstable_by(keep - 1, order);
        }
        others.truncate(keep);
        others.sort_by(order);
        std::iter::once(anchor)
            .chain(others.into_iter().map(|(_, i)| i))
            .collect()
    }
}
