use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-9;

/// Parameters of the synthetic scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub n_classes: usize,
    /// `(rows, cols)` regions per image.
    pub grid: (usize, usize),
    pub n_images: usize,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub feature_noise_sigma: f64,
    /// Row `a` is the distribution of a region's class given its predecessor is `a`.
    pub cooccurrence: Vec<Vec<f64>>,
    /// Class distribution of each image's first region; uniform when absent.
    #[serde(default)]
    pub start_distribution: Option<Vec<f64>>,
    /// Superclass id of every class, used by the noisy oracle; singletons when absent.
    #[serde(default)]
    pub superclasses: Option<Vec<usize>>,
    pub seed: u64,
}

impl SceneConfig {
    /// Six classes in three visually similar pairs (0/1, 2/3, 4/5), each
    /// pair told apart mainly by which classes tend to border it.
    pub fn structured(seed: u64) -> Self {
        let class_means = vec![
            vec![0.0, 0.0, 0.0],
            vec![0.6, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.6, 2.0, 0.0],
            vec![2.0, 0.0, 1.5],
            vec![2.6, 0.0, 1.5],
        ];
        // A region keeps its predecessor's class with probability 0.9,
        // otherwise it mostly switches to that class's context partner.
        let partner = [2, 4, 0, 5, 1, 3];
        let cooccurrence = (0..6)
            .map(|a| {
                (0..6)
                    .map(|b| match b {
                        _ if b == a => 0.9,
                        _ if b == partner[a] => 0.075,
                        _ => 0.00625,
                    })
                    .collect()
            })
            .collect();
        Self {
            n_classes: 6,
            grid: (8, 8),
            n_images: 300,
            feature_dim: 3,
            class_means,
            feature_noise_sigma: 0.5,
            cooccurrence,
            start_distribution: Some(vec![0.3, 0.2, 0.2, 0.15, 0.1, 0.05]),
            superclasses: Some(vec![0, 0, 1, 1, 2, 2]),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let n = self.n_classes;
        if n == 0 || self.grid.0 == 0 || self.grid.1 == 0 || self.n_images == 0 || self.feature_dim == 0 {
            return bad("n_classes, grid, n_images and feature_dim must be positive".into());
        }
        if self.class_means.len() != n
            || self
                .class_means
                .iter()
                .any(|m| m.len() != self.feature_dim || m.iter().any(|v| !v.is_finite()))
        {
            return bad(format!("class_means must be {n} finite vectors of length {}", self.feature_dim));
        }
        if !(self.feature_noise_sigma > 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature_noise_sigma must be positive".into());
        }
        if self.cooccurrence.len() != n {
            return bad(format!("cooccurrence must have {n} rows"));
        }
        for (a, row) in self.cooccurrence.iter().enumerate() {
            check_distribution(row, n).map_err(|m| Error::Config(format!("cooccurrence row {a}: {m}")))?;
        }
        if let Some(start) = &self.start_distribution {
            check_distribution(start, n).map_err(|m| Error::Config(format!("start_distribution: {m}")))?;
        }
        if self.superclasses.as_ref().is_some_and(|s| s.len() != n) {
            return bad(format!("superclasses must have {n} entries"));
        }
        Ok(())
    }

    pub fn regions_per_image(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn superclass_map(&self) -> Vec<usize> {
        self.superclasses.clone().unwrap_or_else(|| (0..self.n_classes).collect())
    }
}

fn check_distribution(p: &[f64], n: usize) -> std::result::Result<(), String> {
    if p.len() != n {
        return Err(format!("expected {n} entries, got {}", p.len()));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err("entries must be finite and non-negative".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Ground truth and raw region features of one generated image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub labels: Vec<usize>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub n_classes: usize,
    pub grid: (usize, usize),
    pub feature_dim: usize,
    pub images: Vec<SceneImage>,
}

/// Samples labels by a row-major Markov sweep (each region conditioned on its
/// left neighbor, or the one above for column 0) and adds Gaussian noise to
/// the class means.
pub fn generate_scene_pool(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let n = cfg.n_classes;
    let uniform = vec![1.0; n];
    let start = WeightedIndex::new(cfg.start_distribution.as_deref().unwrap_or(&uniform))
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows: Vec<WeightedIndex<f64>> = cfg
        .cooccurrence
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;

    let (h, w) = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let images = (0..cfg.n_images)
        .map(|_| {
            let mut labels: Vec<usize> = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let label = match (r, c) {
                        (0, 0) => start.sample(&mut rng),
                        (_, 0) => rows[labels[(r - 1) * w]].sample(&mut rng),
                        _ => rows[labels[r * w + c - 1]].sample(&mut rng),
                    };
                    labels.push(label);
                }
            }
            let features = labels
                .iter()
                .map(|&l| {
                    cfg.class_means[l]
                        .iter()
                        .map(|&m| m + cfg.feature_noise_sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            SceneImage { labels, features }
        })
        .collect();
    Ok(Scene {
        n_classes: n,
        grid: cfg.grid,
        feature_dim: cfg.feature_dim,
        images,
    })
}

/// Classifier input of every region: its own feature followed by the mean
/// feature of its 4-neighborhood (its own feature when it has no neighbors).
pub fn context_inputs(image: &SceneImage, grid: (usize, usize)) -> Vec<Vec<f64>> {
    let (h, w) = grid;
    let dim = image.features.first().map_or(0, Vec::len);
    (0..h * w)
        .map(|k| {
            let (r, c) = (k / w, k % w);
            let mut neighbors = Vec::with_capacity(4);
            if r > 0 {
                neighbors.push(k - w);
            }
            if r + 1 < h {
                neighbors.push(k + w);
            }
            if c > 0 {
                neighbors.push(k - 1);
            }
            if c + 1 < w {
                neighbors.push(k + 1);
            }
            let own = &image.features[k];
            let mut input = Vec::with_capacity(2 * dim);
            input.extend_from_slice(own);
            if neighbors.is_empty() {
                input.extend_from_slice(own);
            } else {
                let inv = 1.0 / neighbors.len() as f64;
                input.extend((0..dim).map(|d| neighbors.iter().map(|&j| image.features[j][d]).sum::<f64>() * inv));
            }
            input
        })
        .collect()
}

/// Ground-truth labels with each one, with probability `noise_fraction`,
/// replaced by a different class of the same superclass. Labels whose
/// superclass has a single member never change.
pub fn oracle_label<R: Rng>(labels: &[usize], noise_fraction: f64, superclasses: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::Config(format!("noise fraction must lie in [0, 1], got {noise_fraction}")));
    }
    labels
        .iter()
        .map(|&l| {
            let group = *superclasses
                .get(l)
                .ok_or_else(|| Error::Dimension(format!("label {l} has no superclass")))?;
            if noise_fraction == 0.0 || !rng.random_bool(noise_fraction) {
                return Ok(l);
            }
            let others: Vec<usize> = (0..superclasses.len())
                .filter(|&c| c != l && superclasses[c] == group)
                .collect();
            Ok(if others.is_empty() {
                l
            } else {
                others[rng.random_range(0..others.len())]
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cooccurrence: Vec<Vec<f64>>, sigma: f64) -> SceneConfig {
        let n = cooccurrence.len();
        SceneConfig {
            n_classes: n,
            grid: (4, 5),
            n_images: 20,
            feature_dim: 2,
            class_means: (0..n).map(|c| vec![c as f64, -(c as f64)]).collect(),
            feature_noise_sigma: sigma,
            cooccurrence,
            start_distribution: None,
            superclasses: None,
            seed: 3,
        }
    }

    #[test]
    fn identity_cooccurrence_gives_single_class_images() {
        let identity = (0..3).map(|a| (0..3).map(|b| f64::from(u8::from(a == b))).collect()).collect();
        let scene = generate_scene_pool(&small(identity, 0.3)).unwrap();
        for img in &scene.images {
            assert!(img.labels.iter().all(|&l| l == img.labels[0]));
        }
    }

    #[test]
    fn tiny_sigma_gives_class_means() {
        let cfg = small(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 1e-300);
        let scene = generate_scene_pool(&cfg).unwrap();
        for img in &scene.images {
            for (l, f) in img.labels.iter().zip(&img.features) {
                for (v, m) in f.iter().zip(&cfg.class_means[*l]) {
                    assert!((v - m).abs() < 1e-290);
                }
            }
        }
    }

    #[test]
    fn neighbor_frequencies_follow_the_matrix() {
        let m = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6], vec![0.1, 0.5, 0.4]];
        let mut cfg = small(m.clone(), 0.1);
        cfg.n_images = 600;
        let scene = generate_scene_pool(&cfg).unwrap();
        let (h, w) = cfg.grid;
        let mut counts = vec![vec![0.0f64; 3]; 3];
        for img in &scene.images {
            for k in 1..h * w {
                let prev = if k % w == 0 { k - w } else { k - 1 };
                counts[img.labels[prev]][img.labels[k]] += 1.0;
            }
        }
        assert!(scene.images.len() * (h * w) >= 10_000);
        for (row, expected) in counts.iter().zip(&m) {
            let total: f64 = row.iter().sum();
            let tv: f64 = row.iter().zip(expected).map(|(c, e)| (c / total - e).abs()).sum::<f64>() / 2.0;
            assert!(tv < 0.05, "total variation {tv}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        let cfg = SceneConfig::structured(11);
        assert_eq!(generate_scene_pool(&cfg).unwrap(), generate_scene_pool(&cfg).unwrap());

        let mut bad = cfg.clone();
        bad.cooccurrence[2][2] += 1e-6;
        assert!(matches!(generate_scene_pool(&bad), Err(Error::Config(_))));
        bad = cfg.clone();
        bad.feature_noise_sigma = 0.0;
        assert!(bad.validate().is_err());

        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SceneConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn context_inputs_average_neighbors() {
        let image = SceneImage {
            labels: vec![0; 4],
            features: vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
        };
        let inputs = context_inputs(&image, (2, 2));
        // Region 0 borders regions 1 (right) and 2 (below).
        assert_eq!(inputs[0], vec![1.0, 2.5]);
        assert_eq!(inputs[3], vec![4.0, 2.5]);
        let single = SceneImage { labels: vec![0], features: vec![vec![7.0]] };
        assert_eq!(context_inputs(&single, (1, 1)), vec![vec![7.0, 7.0]]);
    }

    #[test]
    fn oracle_noise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..1000).map(|i| i % 4).collect();
        assert_eq!(oracle_label(&labels, 0.0, &[0, 0, 1, 1], &mut rng).unwrap(), labels);
        assert_eq!(oracle_label(&labels, 1.0, &[0, 1, 2, 3], &mut rng).unwrap(), labels);

        let noisy = oracle_label(&labels, 0.2, &[0, 0, 1, 1], &mut rng).unwrap();
        let flipped = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count();
        assert!((175..=225).contains(&flipped), "{flipped} flipped");
        assert!(labels.iter().zip(&noisy).all(|(&a, &b)| a / 2 == b / 2));
        assert!(oracle_label(&labels, 1.5, &[0, 0, 1, 1], &mut rng).is_err());
    }
}
