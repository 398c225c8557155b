#![allow(dead_code)]

use cdal::pool::{ImageRecord, Pool, ProbabilityVector, Region};
use rand::Rng;

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Cubing spreads mass unevenly, so argmaxes and entropies vary.
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) + 1e-6).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// A pool of `n_images` images with 1..=`max_regions` random regions each.
pub fn random_pool<R: Rng>(rng: &mut R, n_images: usize, n_classes: usize, max_regions: usize, feature_dim: usize) -> Pool {
    let images = (0..n_images)
        .map(|i| ImageRecord {
            image_id: format!("img{i}"),
            regions: (0..rng.random_range(1..=max_regions))
                .map(|k| Region {
                    region_id: format!("r{k}"),
                    probs: ProbabilityVector::normalized(random_distribution(rng, n_classes)).unwrap(),
                })
                .collect(),
            feature: Some((0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
        })
        .collect();
    Pool::new(n_classes, images).unwrap()
}
