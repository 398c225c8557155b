//! Episode rewards: contextual diversity of the subset, visual
//! representativeness of its features, and per-class region balance.

use crate::coreset::{euclidean_distance, euclidean_matrix};
use crate::divergence::{aggregate_cd_indices, DistanceMatrix};
use crate::error::{Error, Result};
use crate::pool::Pool;

/// `exp(-mean_i min_j ||x_i - x_j||)` over pool images `i` and subset images `j`.
pub fn reward_vr<S: AsRef<str>>(pool: &Pool, subset: &[S]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let features = pool.features()?;
    let chosen: Vec<&[f64]> = subset
        .iter()
        .map(|id| pool.index_of(id.as_ref()).map(|i| features[i]))
        .collect::<Result<_>>()?;
    let mean_min = features
        .iter()
        .map(|x| {
            chosen
                .iter()
                .map(|y| euclidean_distance(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / features.len() as f64;
    Ok((-mean_min).exp())
}

/// `sum_c log2(max(count_c, 1) / lambda)` over the classes present in the pool,
/// where `count_c` counts the subset's regions pseudo-labeled `c`.
pub fn reward_sr<S: AsRef<str>>(pool: &Pool, subset: &[S], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let idx: Vec<usize> = subset
        .iter()
        .map(|id| pool.index_of(id.as_ref()))
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; pool.n_classes()];
    for &i in &idx {
        for label in pool.image(i).pseudo_labels() {
            counts[label] += 1;
        }
    }
    Ok(sr_from_counts(pool, &counts, lambda))
}

fn sr_from_counts(pool: &Pool, counts: &[usize], lambda: f64) -> f64 {
    (0..pool.n_classes())
        .filter(|&c| !pool.class_index().is_empty(c))
        .map(|c| (counts[c].max(1) as f64 / lambda).log2())
        .sum()
}

/// `alpha * r_cd + (1 - alpha) * (r_vr + r_sr)`, with `r_sr` dropped unless `use_sr`.
pub fn total_reward(r_cd: f64, r_vr: f64, r_sr: f64, alpha: f64, use_sr: bool) -> f64 {
    let sr = if use_sr { r_sr } else { 0.0 };
    alpha * r_cd + (1.0 - alpha) * (r_vr + sr)
}

/// Default `lambda`: budget fraction times the region count of the scarcest
/// non-empty class.
pub fn default_lambda(pool: &Pool, budget_fraction: f64) -> f64 {
    let idx = pool.class_index();
    let scarcest = (0..pool.n_classes())
        .map(|c| idx.region_count(c))
        .filter(|&n| n > 0)
        .min()
        .unwrap_or(1);
    (budget_fraction * scarcest as f64).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts {
    pub cd: f64,
    pub vr: f64,
    pub sr: f64,
}

/// Precomputed distances and class counts for fast reward evaluation on
/// index subsets of one pool.
pub struct RewardContext<'a> {
    pool: &'a Pool,
    cd: DistanceMatrix,
    feature_dist: Option<DistanceMatrix>,
    region_counts: Vec<Vec<usize>>,
    pub alpha: f64,
    pub use_sr: bool,
    pub lambda: f64,
}

impl<'a> RewardContext<'a> {
    /// Feature distances are only needed (and required) when `alpha < 1`.
    pub fn new(pool: &'a Pool, cd: DistanceMatrix, alpha: f64, use_sr: bool, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if cd.len() != pool.len() {
            return Err(Error::Dimension("distance matrix does not match pool".into()));
        }
        let feature_dist = if alpha < 1.0 { Some(euclidean_matrix(pool)?) } else { None };
        let region_counts = pool
            .images()
            .iter()
            .map(|img| {
                let mut counts = vec![0usize; pool.n_classes()];
                img.pseudo_labels().for_each(|c| counts[c] += 1);
                counts
            })
            .collect();
        Ok(Self {
            pool,
            cd,
            feature_dist,
            region_counts,
            alpha,
            use_sr,
            lambda,
        })
    }

    pub fn pool(&self) -> &Pool {
        self.pool
    }

    pub fn cd_matrix(&self) -> &DistanceMatrix {
        &self.cd
    }

    /// Reward components of the subset given by pool indices. The diversity
    /// and representativeness of an empty subset are 0.
    pub fn parts(&self, subset: &[usize]) -> RewardParts {
        let cd = aggregate_cd_indices(&self.cd, subset);
        let vr = match &self.feature_dist {
            Some(fd) if !subset.is_empty() => {
                let n = fd.len();
                let mean_min = (0..n)
                    .map(|i| {
                        let row = fd.row(i);
                        subset.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min)
                    })
                    .sum::<f64>()
                    / n as f64;
                (-mean_min).exp()
            }
            _ => 0.0,
        };
        let sr = if self.use_sr {
            let mut counts = vec![0usize; self.pool.n_classes()];
            for &i in subset {
                for (c, n) in self.region_counts[i].iter().enumerate() {
                    counts[c] += n;
                }
            }
            sr_from_counts(self.pool, &counts, self.lambda)
        } else {
            0.0
        };
        RewardParts { cd, vr, sr }
    }

    pub fn reward(&self, subset: &[usize]) -> f64 {
        let p = self.parts(subset);
        total_reward(p.cd, p.vr, p.sr, self.alpha, self.use_sr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{ImageRecord, ProbabilityVector, Region};

    fn pool(features: &[Vec<f64>], labels: &[&[usize]], n_classes: usize) -> Pool {
        let images = features
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (f, ls))| ImageRecord {
                image_id: format!("i{i}"),
                regions: ls
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let mut p = vec![0.0; n_classes];
                        p[c] = 1.0;
                        Region {
                            region_id: format!("r{k}"),
                            probs: ProbabilityVector::normalized(p).unwrap(),
                        }
                    })
                    .collect(),
                feature: Some(f.clone()),
            })
            .collect();
        Pool::new(n_classes, images).unwrap()
    }

    #[test]
    fn vr_examples() {
        let p = pool(&[vec![0.0], vec![2.0]], &[&[0], &[0]], 2);
        assert_eq!(reward_vr(&p, &["i0", "i1"]).unwrap(), 1.0);
        assert!((reward_vr(&p, &["i0"]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((reward_vr(&p, &["i0"]).unwrap() - 0.367879).abs() < 1e-6);

        let same = pool(&vec![vec![1.0, 1.0]; 3], &[&[0], &[1], &[0]], 2);
        assert_eq!(reward_vr(&same, &["i2"]).unwrap(), 1.0);
        assert!(matches!(reward_vr::<&str>(&same, &[]), Err(Error::EmptySubset)));
    }

    #[test]
    fn sr_examples() {
        let p = pool(&[vec![0.0], vec![0.0]], &[&[0, 0, 1, 1], &[0, 0, 1, 1]], 2);
        // Both images: 4 regions of each class; lambda = 4 -> 0.
        assert_eq!(reward_sr(&p, &["i0", "i1"], 4.0).unwrap(), 0.0);
        // Each count 4 = 2 * lambda -> one bit per class.
        assert_eq!(reward_sr(&p, &["i0", "i1"], 2.0).unwrap(), 2.0);

        let p = pool(&[vec![0.0], vec![0.0]], &[&[0; 8], &[1]], 2);
        // Class 1 absent from the subset: log2(1/8) = -3; class 0: log2(8/8) = 0.
        assert_eq!(reward_sr(&p, &["i0"], 8.0).unwrap(), -3.0);
    }

    #[test]
    fn total_reward_examples() {
        assert_eq!(total_reward(4.0, 0.5, 1.0, 1.0, true), 4.0);
        assert_eq!(total_reward(4.0, 0.5, 1.0, 0.0, false), 0.5);
        assert_eq!(total_reward(4.0, 0.5, 1.0, 0.75, true), 3.375);
    }

    #[test]
    fn context_matches_pool_level_functions() {
        let p = pool(
            &[vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 3.0], vec![0.3, 0.3]],
            &[&[0, 1], &[1, 1, 2], &[2], &[0, 0]],
            3,
        );
        let cd = DistanceMatrix::from_fn(p.ids().map(String::from).collect(), |i, j| (i + j) as f64);
        let ctx = RewardContext::new(&p, cd.clone(), 0.75, true, 1.5).unwrap();
        let subset = [0usize, 2, 3];
        let ids = ["i0", "i2", "i3"];
        let parts = ctx.parts(&subset);
        assert!((parts.vr - reward_vr(&p, &ids).unwrap()).abs() < 1e-12);
        assert!((parts.sr - reward_sr(&p, &ids, 1.5).unwrap()).abs() < 1e-12);
        assert_eq!(parts.cd, 2.0 + 3.0 + 5.0);

        let empty = ctx.parts(&[]);
        assert_eq!((empty.cd, empty.vr), (0.0, 0.0));
    }

    #[test]
    fn lambda_default_uses_scarcest_class() {
        let p = pool(&[vec![0.0], vec![0.0]], &[&[0, 0, 0, 1], &[0, 2, 2]], 4);
        assert_eq!(default_lambda(&p, 0.5), 0.5);
    }
}
