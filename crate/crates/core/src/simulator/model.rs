use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{context_inputs, Scene};
use crate::error::{Error, Result};
use crate::pool::{ImageRecord, Pool, ProbabilityVector, Region};

/// Multinomial logistic regression over region inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub n_classes: usize,
    pub input_dim: usize,
    /// Row-major `n_classes x input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(n_classes: usize, input_dim: usize) -> Self {
        Self {
            n_classes,
            input_dim,
            weights: vec![0.0; n_classes * input_dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        softmax_in_place(&mut out);
        out
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights, relative to the summed loss, so its pull
    /// weakens as the labeled set grows.
    pub l2: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.5,
            l2: 20.0,
        }
    }
}

const GRAD_CHUNK: usize = 512;

/// Mean cross-entropy (nats) of the model on labeled inputs.
pub fn cross_entropy(model: &ToyModel, inputs: &[&[f64]], labels: &[usize]) -> f64 {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| -model.predict(x)[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / inputs.len() as f64
}

/// Full-batch gradient descent from zero weights on
/// `mean cross-entropy + l2 / (2 N) * ||W||^2`.
pub fn train_toy_model(inputs: &[&[f64]], labels: &[usize], n_classes: usize, cfg: &ToyModelConfig) -> Result<ToyModel> {
    if inputs.is_empty() {
        return Err(Error::EmptySubset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::Dimension(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let dim = inputs[0].len();
    if inputs.iter().any(|x| x.len() != dim) {
        return Err(Error::Dimension("inputs differ in length".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Dimension(format!("label {y} out of range for {n_classes} classes")));
    }
    let mut model = ToyModel::zeros(n_classes, dim);
    let n = inputs.len() as f64;
    let decay = cfg.l2 / n;

    for _ in 0..cfg.epochs {
        // Fixed chunks summed in order keep the result independent of scheduling.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = inputs
            .par_chunks(GRAD_CHUNK)
            .zip(labels.par_chunks(GRAD_CHUNK))
            .map(|(xs, ys)| {
                let mut gw = vec![0.0; n_classes * dim];
                let mut gb = vec![0.0; n_classes];
                for (x, &y) in xs.iter().zip(ys) {
                    let mut p = model.predict(x);
                    p[y] -= 1.0;
                    for (c, &e) in p.iter().enumerate() {
                        gb[c] += e;
                        for (g, &xi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x.iter()) {
                            *g += e * xi;
                        }
                    }
                }
                (gw, gb)
            })
            .collect();
        let mut gw = vec![0.0; n_classes * dim];
        let mut gb = vec![0.0; n_classes];
        for (pw, pb) in &partials {
            gw.iter_mut().zip(pw).for_each(|(u, v)| *u += v);
            gb.iter_mut().zip(pb).for_each(|(u, v)| *u += v);
        }
        let lr = cfg.learning_rate;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= lr * (g / n + decay * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= lr * g / n;
        }
    }
    if !model.is_finite() {
        return Err(Error::Config("toy model training diverged".into()));
    }
    Ok(model)
}

pub fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

/// Model predictions on the given scene images as a [`Pool`]. Each image's
/// feature is the mean of its raw region features.
pub fn predict_pool(model: &ToyModel, scene: &Scene, images: &[usize]) -> Result<Pool> {
    if model.input_dim != 2 * scene.feature_dim || model.n_classes != scene.n_classes {
        return Err(Error::Dimension(format!(
            "model is {}x{}, scene needs {}x{}",
            model.n_classes,
            model.input_dim,
            scene.n_classes,
            2 * scene.feature_dim
        )));
    }
    let records = images
        .par_iter()
        .map(|&i| {
            let img = &scene.images[i];
            let regions = context_inputs(img, scene.grid)
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    Ok(Region {
                        region_id: format!("r{k}"),
                        probs: ProbabilityVector::normalized(model.predict(x))?,
                    })
                })
                .collect::<Result<_>>()?;
            let inv = 1.0 / img.features.len() as f64;
            let feature = (0..scene.feature_dim)
                .map(|d| img.features.iter().map(|f| f[d]).sum::<f64>() * inv)
                .collect();
            Ok(ImageRecord {
                image_id: image_id(i),
                regions,
                feature: Some(feature),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Pool::new(scene.n_classes, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::scene::SceneImage;

    #[test]
    fn zero_model_is_uniform() {
        let m = ToyModel::zeros(4, 2);
        assert_eq!(m.predict(&[3.0, -1.0]), vec![0.25; 4]);
    }

    #[test]
    fn predict_matches_hand_softmax() {
        let m = ToyModel {
            n_classes: 2,
            input_dim: 2,
            weights: vec![1.0, 0.0, 0.0, 2.0],
            bias: vec![0.5, 0.0],
        };
        // Logits: 1*1 + 0.5 = 1.5 and 2*1 = 2.
        let p = m.predict(&[1.0, 1.0]);
        let e = (-0.5f64).exp();
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    fn separable() -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * (1.0 + (i as f64) * 0.01), (i as f64 * 0.37).sin()]
            })
            .collect();
        let ys = (0..40).map(|i| i % 2).collect();
        (xs, ys)
    }

    #[test]
    fn separable_data_is_learned() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let cfg = ToyModelConfig { epochs: 200, learning_rate: 0.5, l2: 0.0 };
        let m = train_toy_model(&refs, &ys, 2, &cfg).unwrap();
        let correct = refs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| crate::pool::pseudo_label(&m.predict(x)) == y)
            .count();
        assert!(correct as f64 / 40.0 >= 0.95);
    }

    #[test]
    fn loss_does_not_increase_with_small_steps() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut last = f64::INFINITY;
        for epochs in 0..30 {
            let cfg = ToyModelConfig { epochs, learning_rate: 0.05, l2: 0.0 };
            let loss = cross_entropy(&train_toy_model(&refs, &ys, 2, &cfg).unwrap(), &refs, &ys);
            assert!(loss <= last + 1e-12);
            last = loss;
        }
        let untrained = train_toy_model(&refs, &ys, 2, &ToyModelConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(untrained, ToyModel::zeros(2, 2));
    }

    #[test]
    fn predicted_pool_shapes() {
        let scene = Scene {
            n_classes: 3,
            grid: (1, 2),
            feature_dim: 1,
            images: vec![SceneImage {
                labels: vec![0, 1],
                features: vec![vec![1.0], vec![3.0]],
            }],
        };
        let pool = predict_pool(&ToyModel::zeros(3, 2), &scene, &[0]).unwrap();
        assert_eq!(pool.image(0).image_id, "img00000");
        assert_eq!(pool.image(0).feature.as_deref(), Some(&[2.0][..]));
        for r in &pool.image(0).regions {
            assert!(r.probs.as_slice().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
        assert!(matches!(predict_pool(&ToyModel::zeros(3, 4), &scene, &[0]), Err(Error::Dimension(_))));
    }
}
