//! Unlabeled pools of per-region softmax predictions.
//!
//! A [`Pool`] holds images, each made of one or more (possibly overlapping)
//! regions that carry a model-predicted [`ProbabilityVector`]. Images may also
//! carry a task-network feature embedding. On construction the pool derives its
//! [`ClassIndex`]: for every class `c`, the images with at least one region
//! pseudo-labeled `c`, and those regions.

mod io;
mod selection;

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub use io::{load_pool, write_pool, PoolFormat};
pub use selection::{read_selection, write_selection, write_selection_to, Selection, Strategy};

/// Inputs whose mass is within this distance of 1 are renormalized on ingestion.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

/// Sums closer to 1 than this are left untouched, so that load/write is idempotent.
const EXACT_SUM_SLACK: f64 = 1e-12;

/// A softmax posterior over `n_C` classes for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates non-negativity and renormalizes when `|sum - 1| <= 1e-3`.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("probability vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(0, "probability vector has non-finite entries"));
        }
        let sum: f64 = values.iter().sum();
        if values.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
            return Err(Error::Normalization {
                line: 0,
                sum,
                tolerance: RENORMALIZE_TOLERANCE,
            });
        }
        if (sum - 1.0).abs() > EXACT_SUM_SLACK {
            Ok(Self(values.into_iter().map(|v| v / sum).collect()))
        } else {
            Ok(Self(values))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn pseudo_label(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub probs: ProbabilityVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub regions: Vec<Region>,
    pub feature: Option<Vec<f64>>,
}

impl ImageRecord {
    /// Pseudo-labels of the regions, in region order.
    pub fn pseudo_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.regions.iter().map(|r| pseudo_label(r.probs.as_slice()))
    }
}

/// Images of one class together with the regions pseudo-labeled as that class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMember {
    pub image: usize,
    pub regions: Vec<usize>,
}

/// Pseudo-label partition of a pool: `I^c` and `R^c_I` for every class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    members: Vec<Vec<ClassMember>>,
}

impl ClassIndex {
    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    /// Members of class `c`, ordered by image index.
    pub fn members(&self, class: usize) -> &[ClassMember] {
        &self.members[class]
    }

    pub fn images(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.members[class].iter().map(|m| m.image)
    }

    pub fn contains(&self, class: usize, image: usize) -> bool {
        self.members[class]
            .binary_search_by_key(&image, |m| m.image)
            .is_ok()
    }

    pub fn is_empty(&self, class: usize) -> bool {
        self.members[class].is_empty()
    }

    /// Total number of regions pseudo-labeled `class` across the pool.
    pub fn region_count(&self, class: usize) -> usize {
        self.members[class].iter().map(|m| m.regions.len()).sum()
    }
}

/// Builds the class index by scanning every region once.
pub fn build_class_index(n_classes: usize, images: &[ImageRecord]) -> ClassIndex {
    let mut members: Vec<Vec<ClassMember>> = vec![Vec::new(); n_classes];
    for (i, img) in images.iter().enumerate() {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (r, label) in img.pseudo_labels().enumerate() {
            per_class[label].push(r);
        }
        for (c, regions) in per_class.into_iter().enumerate() {
            if !regions.is_empty() {
                members[c].push(ClassMember { image: i, regions });
            }
        }
    }
    ClassIndex { members }
}

/// A validated unlabeled pool.
#[derive(Debug, Clone)]
pub struct Pool {
    n_classes: usize,
    images: Vec<ImageRecord>,
    class_index: ClassIndex,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Pool {
    fn eq(&self, other: &Self) -> bool {
        self.n_classes == other.n_classes && self.images == other.images
    }
}

impl Pool {
    pub fn new(n_classes: usize, images: Vec<ImageRecord>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Dimension("n_classes must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(images.len());
        let mut feature_dim: Option<usize> = None;
        for (i, img) in images.iter().enumerate() {
            if by_id.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::format(i + 2, format!("duplicate image id `{}`", img.image_id)));
            }
            if img.regions.is_empty() {
                return Err(Error::format(i + 2, format!("image `{}` has no regions", img.image_id)));
            }
            let mut region_ids = HashSet::with_capacity(img.regions.len());
            for region in &img.regions {
                if !region_ids.insert(region.region_id.as_str()) {
                    return Err(Error::format(
                        i + 2,
                        format!("duplicate region id `{}` in image `{}`", region.region_id, img.image_id),
                    ));
                }
                if region.probs.len() != n_classes {
                    return Err(Error::Dimension(format!(
                        "image `{}` region `{}` has {} probabilities, expected {}",
                        img.image_id,
                        region.region_id,
                        region.probs.len(),
                        n_classes
                    )));
                }
            }
            if let Some(feature) = &img.feature {
                if feature.iter().any(|v| !v.is_finite()) {
                    return Err(Error::format(i + 2, format!("image `{}` has a non-finite feature", img.image_id)));
                }
                match feature_dim {
                    None => feature_dim = Some(feature.len()),
                    Some(d) if d != feature.len() => {
                        return Err(Error::Dimension(format!(
                            "image `{}` feature has dimension {}, expected {}",
                            img.image_id,
                            feature.len(),
                            d
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        let class_index = build_class_index(n_classes, &images);
        Ok(Self {
            n_classes,
            images,
            class_index,
            by_id,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, index: usize) -> &ImageRecord {
        &self.images[index]
    }

    pub fn class_index(&self) -> &ClassIndex {
        &self.class_index
    }

    pub fn index_of(&self, image_id: &str) -> Result<usize> {
        self.by_id
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::UnknownId(image_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.images.iter().map(|img| img.image_id.as_str())
    }

    pub fn total_regions(&self) -> usize {
        self.images.iter().map(|img| img.regions.len()).sum()
    }

    /// Image features as rows, or the id of the first image lacking one.
    pub fn features(&self) -> Result<Vec<&[f64]>> {
        self.images
            .iter()
            .map(|img| {
                img.feature
                    .as_deref()
                    .ok_or_else(|| Error::MissingFeature(img.image_id.clone()))
            })
            .collect()
    }

    /// A new pool made of the images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Pool> {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        Pool::new(self.n_classes, images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn region(id: &str, p: &[f64]) -> Region {
        Region {
            region_id: id.into(),
            probs: ProbabilityVector::normalized(p.to_vec()).unwrap(),
        }
    }

    fn image(id: &str, probs: &[&[f64]]) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            regions: probs
                .iter()
                .enumerate()
                .map(|(k, p)| region(&format!("r{k}"), p))
                .collect(),
            feature: None,
        }
    }

    #[test]
    fn pseudo_label_examples() {
        assert_eq!(pseudo_label(&[0.0, 0.0, 1.0, 0.0]), 2);
        assert_eq!(pseudo_label(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(pseudo_label(&[0.2, 0.5, 0.3]), 1);
    }

    #[test]
    fn normalization_rules() {
        let err = ProbabilityVector::normalized(vec![0.5, 0.5, 0.2]).unwrap_err();
        assert!(matches!(err, Error::Normalization { .. }));

        let p = ProbabilityVector::normalized(vec![0.3334, 0.3333, 0.3332]).unwrap();
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        assert!(matches!(
            ProbabilityVector::normalized(vec![1.1, -0.1]).unwrap_err(),
            Error::Normalization { .. }
        ));
    }

    #[test]
    fn single_label_pool_index() {
        let pool = Pool::new(
            3,
            vec![
                image("a", &[&[0.9, 0.05, 0.05]]),
                image("b", &[&[0.6, 0.3, 0.1], &[0.5, 0.4, 0.1]]),
            ],
        )
        .unwrap();
        let idx = pool.class_index();
        assert_eq!(idx.images(0).collect::<Vec<_>>(), vec![0, 1]);
        assert!(idx.is_empty(1));
        assert!(idx.is_empty(2));
    }

    #[test]
    fn image_with_two_labels() {
        let pool = Pool::new(3, vec![image("a", &[&[0.8, 0.1, 0.1], &[0.1, 0.1, 0.8]])]).unwrap();
        let idx = pool.class_index();
        assert!(idx.contains(0, 0));
        assert!(!idx.contains(1, 0));
        assert!(idx.contains(2, 0));
        assert_eq!(idx.members(2)[0].regions, vec![1]);
    }

    #[test]
    fn three_image_index_matches_enumeration() {
        let pool = Pool::new(
            3,
            vec![
                image("a", &[&[0.7, 0.2, 0.1], &[0.1, 0.7, 0.2]]),
                image("b", &[&[0.2, 0.2, 0.6], &[0.1, 0.2, 0.7], &[0.3, 0.4, 0.3]]),
                image("c", &[&[0.5, 0.3, 0.2]]),
            ],
        )
        .unwrap();
        // Hand enumeration: a -> {0: [0], 1: [1]}, b -> {2: [0, 1], 1: [2]}, c -> {0: [0]}.
        let idx = pool.class_index();
        assert_eq!(
            idx.members(0),
            &[
                ClassMember { image: 0, regions: vec![0] },
                ClassMember { image: 2, regions: vec![0] }
            ]
        );
        assert_eq!(
            idx.members(1),
            &[
                ClassMember { image: 0, regions: vec![1] },
                ClassMember { image: 1, regions: vec![2] }
            ]
        );
        assert_eq!(idx.members(2), &[ClassMember { image: 1, regions: vec![0, 1] }]);
        assert_eq!(idx.region_count(2), 2);
    }

    #[test]
    fn rejects_structural_problems() {
        let empty = ImageRecord {
            image_id: "e".into(),
            regions: vec![],
            feature: None,
        };
        assert!(matches!(Pool::new(2, vec![empty]), Err(Error::Format { .. })));

        let dup = vec![image("a", &[&[1.0, 0.0]]), image("a", &[&[0.0, 1.0]])];
        assert!(matches!(Pool::new(2, dup), Err(Error::Format { .. })));

        let wrong_len = vec![image("a", &[&[0.5, 0.25, 0.25]])];
        assert!(matches!(Pool::new(2, wrong_len), Err(Error::Dimension(_))));

        let mut a = image("a", &[&[1.0, 0.0]]);
        a.feature = Some(vec![0.0, 1.0]);
        let mut b = image("b", &[&[1.0, 0.0]]);
        b.feature = Some(vec![0.0]);
        assert!(matches!(Pool::new(2, vec![a, b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn missing_features_reported_by_id() {
        let mut a = image("a", &[&[1.0, 0.0]]);
        a.feature = Some(vec![1.0]);
        let pool = Pool::new(2, vec![a, image("b", &[&[1.0, 0.0]])]).unwrap();
        match pool.features() {
            Err(Error::MissingFeature(id)) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
