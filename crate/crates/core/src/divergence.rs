//! Pairwise contextual diversity and its aggregate over a batch.
//!
//! The distance between two images is the symmetric KL divergence (in bits)
//! between their class-specific confusion mixtures, summed over the classes
//! both images contain. The aggregate over a subset sums the distances over
//! unordered pairs; the double sum over ordered pairs is exactly twice that.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::confusion::{pool_image_mixtures, ImageMixtures};
use crate::error::{Error, Result};
use crate::pool::Pool;

/// Default lower clamp applied to probabilities inside KL terms.
pub const DEFAULT_FLOOR: f64 = 1e-12;

fn clamp_renormalize(p: &[f64], floor: f64) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|&v| v.max(floor)).collect();
    let s: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / s).collect()
}

/// `KL(p || q)` in bits, after clamping both inputs below at `floor` and renormalizing.
pub fn kl_bits(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("KL between lengths {} and {}", p.len(), q.len())));
    }
    let p = clamp_renormalize(p, floor);
    let q = clamp_renormalize(q, floor);
    let kl: f64 = p.iter().zip(&q).map(|(&a, &b)| a * (a / b).log2()).sum();
    Ok(kl.max(0.0))
}

pub fn symmetric_kl(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    Ok(0.5 * kl_bits(p, q, floor)? + 0.5 * kl_bits(q, p, floor)?)
}

/// Contextual diversity between two images given their per-class mixtures.
///
/// Only classes present in both images (and in `classes`, when given)
/// contribute; images that share no class are at distance zero.
pub fn pairwise_cd(a: &ImageMixtures, b: &ImageMixtures, classes: Option<&[usize]>, floor: f64) -> f64 {
    let term = |c: usize| match (a.get(c), b.get(c)) {
        (Some(ma), Some(mb)) => symmetric_kl(&ma.probs, &mb.probs, floor).expect("same class count"),
        _ => 0.0,
    };
    match classes {
        Some(cs) => cs.iter().copied().filter(|&c| c < a.n_classes()).map(term).sum(),
        None => (0..a.n_classes()).map(term).sum(),
    }
}

/// Dense symmetric matrix of pairwise distances between pool images.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
    by_id: HashMap<String, usize>,
}

impl DistanceMatrix {
    /// Fills the upper triangle with `dist(i, j)` in parallel and mirrors it.
    pub fn from_fn<F>(ids: Vec<String>, dist: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let n = ids.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| dist(i, j)).collect())
            .collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (k, d) in row.into_iter().enumerate() {
                let j = i + 1 + k;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self::from_parts(ids, values)
    }

    /// Wraps a row-major `n x n` buffer after checking the matrix invariants.
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::Dimension(format!("{} values for {n} ids", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Config(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(v >= 0.0) || !v.is_finite() || v != values[j * n + i] {
                    return Err(Error::Config(format!("invalid or asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_parts(ids, values))
    }

    fn from_parts(ids: Vec<String>, values: Vec<f64>) -> Self {
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, values, by_id }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn indices_of<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.index_of(id.as_ref())).collect()
    }

    /// Matrix restricted to `indices`, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let k = indices.len();
        let mut values = Vec::with_capacity(k * k);
        for &i in indices {
            values.extend(indices.iter().map(|&j| self.get(i, j)));
        }
        Self::from_parts(ids, values)
    }

    /// Dense CSV with image ids as header row and first column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(std::io::BufWriter::new(file));
        let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut header = vec![String::from("image_id")];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(err)?;
        }
        w.into_inner()
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?
            .flush()
            .map_err(|e| Error::io(path, e))
    }
}

/// Contextual-diversity matrix of a pool. Per-image mixtures are computed once.
pub fn cd_matrix(pool: &Pool, classes: Option<&[usize]>, epsilon: f64, floor: f64) -> Result<DistanceMatrix> {
    check_classes(classes, pool.n_classes())?;
    let mixtures = pool_image_mixtures(pool, epsilon);
    Ok(cd_matrix_from_mixtures(
        pool.ids().map(str::to_string).collect(),
        &mixtures,
        classes,
        floor,
    ))
}

pub fn cd_matrix_from_mixtures(
    ids: Vec<String>,
    mixtures: &[ImageMixtures],
    classes: Option<&[usize]>,
    floor: f64,
) -> DistanceMatrix {
    DistanceMatrix::from_fn(ids, |i, j| pairwise_cd(&mixtures[i], &mixtures[j], classes, floor))
}

pub(crate) fn check_classes(classes: Option<&[usize]>, n_classes: usize) -> Result<()> {
    if let Some(bad) = classes.and_then(|cs| cs.iter().find(|&&c| c >= n_classes)) {
        return Err(Error::Config(format!("class {bad} outside [0, {n_classes})")));
    }
    Ok(())
}

/// Sum of distances over unordered distinct pairs of `subset`.
pub fn aggregate_cd<S: AsRef<str>>(d: &DistanceMatrix, subset: &[S]) -> Result<f64> {
    Ok(aggregate_cd_indices(d, &d.indices_of(subset)?))
}

pub fn aggregate_cd_indices(d: &DistanceMatrix, subset: &[usize]) -> f64 {
    let mut total = 0.0;
    for (k, &i) in subset.iter().enumerate() {
        let row = d.row(i);
        total += subset[k + 1..].iter().map(|&j| row[j]).sum::<f64>();
    }
    total
}
