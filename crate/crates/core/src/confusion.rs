//! Class-specific confusion mixtures.
//!
//! For an image `I` and a class `c`, the regions pseudo-labeled `c` are
//! averaged with weights equal to their own Shannon entropy (plus a small
//! epsilon), giving the per-image mixture `P^c_I`. Averaging those uniformly
//! over all images that contain class `c` gives the pool-level mixture. All
//! entropies are in bits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pool::{pseudo_label, ImageRecord, Pool};

/// Default additive constant of the entropy weights.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.log2())
        .sum::<f64>()
}

/// Mixing weight of one region: `H(p) + epsilon`.
pub fn entropy_weight(p: &[f64], epsilon: f64) -> f64 {
    entropy_bits(p) + epsilon
}

/// Mean region entropy of an image, in bits.
pub fn mean_region_entropy(img: &ImageRecord) -> f64 {
    img.regions.iter().map(|r| entropy_bits(r.probs.as_slice())).sum::<f64>() / img.regions.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMixture {
    pub class_id: usize,
    pub probs: Vec<f64>,
    /// Number of regions that contributed to the mixture.
    pub support_regions: usize,
}

impl ConfusionMixture {
    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probs)
    }
}

struct Accumulator {
    sum: Vec<f64>,
    weight: f64,
    count: usize,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            weight: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, p: &[f64], epsilon: f64) {
        let w = entropy_weight(p, epsilon);
        for (s, &v) in self.sum.iter_mut().zip(p) {
            *s += w * v;
        }
        self.weight += w;
        self.count += 1;
    }

    fn finish(self, class_id: usize) -> Option<ConfusionMixture> {
        (self.count > 0).then(|| ConfusionMixture {
            class_id,
            probs: self.sum.into_iter().map(|s| s / self.weight).collect(),
            support_regions: self.count,
        })
    }
}

/// Entropy-weighted average of the image's regions pseudo-labeled `class`.
pub fn image_class_mixture(img: &ImageRecord, class: usize, epsilon: f64) -> Result<ConfusionMixture> {
    let n = img.regions.first().map_or(0, |r| r.probs.len());
    let mut acc = Accumulator::new(n);
    for r in &img.regions {
        let p = r.probs.as_slice();
        if pseudo_label(p) == class {
            acc.add(p, epsilon);
        }
    }
    acc.finish(class).ok_or(Error::EmptyClass { class })
}

/// All per-class mixtures of one image, computed in a single pass over its regions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMixtures {
    by_class: Vec<Option<ConfusionMixture>>,
}

impl ImageMixtures {
    pub fn compute(img: &ImageRecord, n_classes: usize, epsilon: f64) -> Self {
        let mut accs: Vec<Accumulator> = (0..n_classes).map(|_| Accumulator::new(n_classes)).collect();
        for r in &img.regions {
            let p = r.probs.as_slice();
            accs[pseudo_label(p)].add(p, epsilon);
        }
        Self {
            by_class: accs.into_iter().enumerate().map(|(c, a)| a.finish(c)).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.by_class.len()
    }

    /// `P^c_I`, or `None` when the image has no region pseudo-labeled `c`.
    pub fn get(&self, class: usize) -> Option<&ConfusionMixture> {
        self.by_class[class].as_ref()
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_class
            .iter()
            .enumerate()
            .filter_map(|(c, m)| m.as_ref().map(|_| c))
    }
}

/// Per-image mixtures for every image of the pool, in pool order.
pub fn pool_image_mixtures(pool: &Pool, epsilon: f64) -> Vec<ImageMixtures> {
    pool.images()
        .par_iter()
        .map(|img| ImageMixtures::compute(img, pool.n_classes(), epsilon))
        .collect()
}

/// Pool-level confusion for `class`: uniform mean of `P^c_I` over images in `I^c`.
pub fn pool_class_confusion(pool: &Pool, class: usize, epsilon: f64) -> Result<ConfusionMixture> {
    let members = pool.class_index().members(class);
    if members.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    let n = pool.n_classes();
    let mut probs = vec![0.0; n];
    let mut support = 0;
    for m in members {
        let mix = image_class_mixture(pool.image(m.image), class, epsilon)?;
        for (s, v) in probs.iter_mut().zip(&mix.probs) {
            *s += v;
        }
        support += mix.support_regions;
    }
    let k = members.len() as f64;
    probs.iter_mut().for_each(|v| *v /= k);
    Ok(ConfusionMixture {
        class_id: class,
        probs,
        support_regions: support,
    })
}

/// All non-empty pool-level confusions, in class order.
pub fn pool_confusions(pool: &Pool, epsilon: f64) -> Vec<ConfusionMixture> {
    (0..pool.n_classes())
        .filter(|&c| !pool.class_index().is_empty(c))
        .map(|c| pool_class_confusion(pool, c, epsilon).expect("class is non-empty"))
        .collect()
}

/// `h_I`: sum over classes with non-empty `I^c` of the pool-level confusion entropy.
pub fn total_confusion_entropy(pool: &Pool, epsilon: f64) -> f64 {
    pool_confusions(pool, epsilon)
        .iter()
        .map(ConfusionMixture::entropy_bits)
        .sum()
}

/// Input of the selection policy for one image: the `n_C x n_C` matrix whose
/// column `c` is `P^c_I` (zero when the image lacks class `c`), flattened
/// column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub image_id: String,
    pub values: Vec<f64>,
}

impl PolicyState {
    pub fn from_mixtures(image_id: &str, mixtures: &ImageMixtures) -> Self {
        let n = mixtures.n_classes();
        let mut values = vec![0.0; n * n];
        for c in mixtures.present_classes() {
            let col = &mixtures.get(c).expect("present").probs;
            values[c * n..(c + 1) * n].copy_from_slice(col);
        }
        Self {
            image_id: image_id.to_string(),
            values,
        }
    }

    /// Column `c` of the state matrix.
    pub fn column(&self, class: usize, n_classes: usize) -> &[f64] {
        &self.values[class * n_classes..(class + 1) * n_classes]
    }
}

pub fn policy_state(img: &ImageRecord, n_classes: usize, epsilon: f64) -> PolicyState {
    PolicyState::from_mixtures(&img.image_id, &ImageMixtures::compute(img, n_classes, epsilon))
}

pub fn pool_policy_states(pool: &Pool, epsilon: f64) -> Vec<PolicyState> {
    pool.images()
        .iter()
        .zip(pool_image_mixtures(pool, epsilon))
        .map(|(img, m)| PolicyState::from_mixtures(&img.image_id, &m))
        .collect()
}
