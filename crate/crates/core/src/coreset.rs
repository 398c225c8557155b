//! K-center greedy (farthest-first) selection over a [`DistanceMatrix`].
//!
//! Works with any symmetric non-negative distance: contextual diversity
//! for CDAL-CS, or Euclidean feature distance for the plain core-set baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::DistanceMatrix;
use crate::error::{Error, Result};
use crate::pool::{Pool, Selection, Strategy};

/// How the first center is chosen when nothing is preselected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitialPoint {
    Id(String),
    /// Uniformly random among the candidates, from a seeded RNG.
    Seed(u64),
}

/// Farthest-first traversal on matrix indices.
///
/// `preselected` points count as already covered centers and are never
/// returned. `first` is used as the first pick; when it is `None` and the
/// preselected set is empty the caller must supply one. Ties in the argmax go
/// to the lowest index.
pub fn k_center_greedy_indices(
    d: &DistanceMatrix,
    budget: usize,
    first: Option<usize>,
    preselected: &[usize],
) -> Vec<usize> {
    let n = d.len();
    let mut selected = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut picks = Vec::with_capacity(budget);

    let add_center = |c: usize, selected: &mut Vec<bool>, min_dist: &mut Vec<f64>| {
        selected[c] = true;
        for (m, &v) in min_dist.iter_mut().zip(d.row(c)) {
            if v < *m {
                *m = v;
            }
        }
        min_dist[c] = 0.0;
    };

    for &p in preselected {
        add_center(p, &mut selected, &mut min_dist);
    }
    if let Some(f) = first {
        if budget > 0 {
            add_center(f, &mut selected, &mut min_dist);
            picks.push(f);
        }
    }
    while picks.len() < budget {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let Some(u) = best else { break };
        add_center(u, &mut selected, &mut min_dist);
        picks.push(u);
    }
    picks
}

/// K-center greedy selection of `budget` new images.
pub fn k_center_greedy(
    d: &DistanceMatrix,
    budget: usize,
    initial: &InitialPoint,
    preselected: &[String],
) -> Result<Selection> {
    let pre = d.indices_of(preselected)?;
    let mut is_pre = vec![false; d.len()];
    pre.iter().for_each(|&i| is_pre[i] = true);
    let available = d.len() - is_pre.iter().filter(|&&b| b).count();
    if budget < 1 || budget > available {
        return Err(Error::Budget { budget, available });
    }

    let (first, seed) = match initial {
        InitialPoint::Id(id) => {
            let i = d.index_of(id)?;
            if is_pre[i] {
                return Err(Error::Config(format!("initial point `{id}` is preselected")));
            }
            (Some(i), 0)
        }
        // With preselected centers the first pick is already determined by distance.
        InitialPoint::Seed(_) if !pre.is_empty() => (None, 0),
        InitialPoint::Seed(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (Some(rng.random_range(0..d.len())), *seed)
        }
    };
    let picks = k_center_greedy_indices(d, budget, first, &pre);
    let ids = picks.iter().map(|&i| d.ids()[i].clone()).collect();
    Selection::new(ids, None, Strategy::Cs, seed)
}

/// Largest distance from any point to its nearest selected point.
pub fn coverage_radius<S: AsRef<str>>(d: &DistanceMatrix, selected: &[S]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySubset);
    }
    let idx = d.indices_of(selected)?;
    Ok(coverage_radius_indices(d, &idx))
}

pub fn coverage_radius_indices(d: &DistanceMatrix, selected: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| {
            let row = d.row(i);
            selected.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// L2 distances between image feature vectors.
pub fn euclidean_matrix(pool: &Pool) -> Result<DistanceMatrix> {
    let features = pool.features()?;
    Ok(DistanceMatrix::from_fn(
        pool.ids().map(str::to_string).collect(),
        |i, j| euclidean_distance(features[i], features[j]),
    ))
}
