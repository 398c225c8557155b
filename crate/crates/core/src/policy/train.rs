use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{bernoulli_log_prob, PolicyParams};
use super::reward::{default_lambda, RewardContext, RewardParts};
use crate::confusion::{pool_policy_states, DEFAULT_EPSILON};
use crate::divergence::{cd_matrix, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::pool::{Pool, Selection, Strategy};

/// REINFORCE hyper-parameters. Every field has a default, so a JSON config
/// only needs the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub episodes_per_epoch: usize,
    pub cell_size: usize,
    pub alpha: f64,
    /// Threshold of the class-balance reward; `None` derives it from the pool.
    pub lambda_sr: Option<f64>,
    pub budget_fraction: f64,
    pub size_penalty_weight: f64,
    pub baseline_decay: f64,
    pub seed: u64,
    pub use_sr: bool,
    /// Restrict the diversity reward to these classes.
    pub cd_classes: Option<Vec<usize>>,
    pub epsilon: f64,
    pub kl_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-5,
            max_epochs: 60,
            episodes_per_epoch: 5,
            cell_size: 256,
            alpha: 0.75,
            lambda_sr: None,
            budget_fraction: 0.1,
            size_penalty_weight: 0.0,
            baseline_decay: 0.9,
            seed: 0,
            use_sr: false,
            cd_classes: None,
            epsilon: DEFAULT_EPSILON,
            kl_floor: DEFAULT_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.episodes_per_epoch == 0 {
            return bad("episodes_per_epoch must be positive");
        }
        if self.cell_size == 0 {
            return bad("cell_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.lambda_sr.is_some_and(|l| !(l > 0.0)) {
            return bad("lambda_sr must be positive");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return bad("budget_fraction must lie in (0, 1)");
        }
        if !(self.size_penalty_weight >= 0.0) {
            return bad("size_penalty_weight must be non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.kl_floor > 0.0) {
            return bad("epsilon and kl_floor must be positive");
        }
        Ok(())
    }
}

/// Quadratic penalty on the mean selection probability straying from the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizePenalty {
    pub weight: f64,
    pub budget_fraction: f64,
}

impl SizePenalty {
    pub fn value(&self, probs: &[f64]) -> f64 {
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        self.weight * (mean - self.budget_fraction).powi(2)
    }

    /// Derivative of the penalty with respect to each step's logit.
    fn logit_gradient(&self, probs: &[f64]) -> Vec<f64> {
        let t = probs.len() as f64;
        let mean = probs.iter().sum::<f64>() / t;
        let outer = 2.0 * self.weight * (mean - self.budget_fraction) / t;
        probs.iter().map(|&p| outer * p * (1.0 - p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// One action per step of the sequence the policy saw.
    pub actions: Vec<bool>,
    /// Natural-log probability of `actions`.
    pub log_prob: f64,
    pub reward: f64,
    pub selected_count: usize,
    pub parts: RewardParts,
    pub penalty: f64,
}

/// Samples independent Bernoulli actions and scores the resulting subset.
///
/// `order[t]` is the pool index of step `t`.
pub fn sample_episode<R: Rng>(
    probs: &[f64],
    order: &[usize],
    ctx: &RewardContext<'_>,
    penalty: &SizePenalty,
    rng: &mut R,
) -> EpisodeTrace {
    let actions: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let subset: Vec<usize> = order
        .iter()
        .zip(&actions)
        .filter_map(|(&i, &a)| a.then_some(i))
        .collect();
    let parts = ctx.parts(&subset);
    let pen = penalty.value(probs);
    let reward = super::reward::total_reward(parts.cd, parts.vr, parts.sr, ctx.alpha, ctx.use_sr) - pen;
    EpisodeTrace {
        log_prob: bernoulli_log_prob(probs, &actions),
        selected_count: subset.len(),
        actions,
        reward,
        parts,
        penalty: pen,
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHUFFLE_SLOT: u64 = 0xF_FFFF;

fn episode_stream(epoch: usize, episode: usize) -> u64 {
    ((epoch as u64 + 1) << 20) | episode as u64
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// Mean episode reward of every epoch.
    pub epoch_rewards: Vec<f64>,
}

/// Trains a fresh policy on `pool` with REINFORCE and a moving-average baseline.
pub fn reinforce_train(pool: &Pool, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n_classes = pool.n_classes();
    let states = pool_policy_states(pool, config.epsilon);
    let cd = cd_matrix(pool, config.cd_classes.as_deref(), config.epsilon, config.kl_floor)?;
    let lambda = config
        .lambda_sr
        .unwrap_or_else(|| default_lambda(pool, config.budget_fraction));
    let ctx = RewardContext::new(pool, cd, config.alpha, config.use_sr, lambda)?;
    let penalty = SizePenalty {
        weight: config.size_penalty_weight,
        budget_fraction: config.budget_fraction,
    };

    let mut params = PolicyParams::init(n_classes * n_classes, config.cell_size, config.seed);
    let mut baseline: Option<f64> = None;
    let mut epoch_rewards = Vec::with_capacity(config.max_epochs);
    let mut order: Vec<usize> = (0..pool.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut stream_rng(config.seed, episode_stream(epoch, SHUFFLE_SLOT as usize)));
        let xs: Vec<&[f64]> = order.iter().map(|&i| states[i].values.as_slice()).collect();
        let pass = params.forward_pass(&xs)?;
        let probs = pass.probs();

        let traces: Vec<EpisodeTrace> = (0..config.episodes_per_epoch)
            .map(|n| {
                let mut rng = stream_rng(config.seed, episode_stream(epoch, n));
                sample_episode(probs, &order, &ctx, &penalty, &mut rng)
            })
            .collect();
        let mean_reward = traces.iter().map(|t| t.reward).sum::<f64>() / traces.len() as f64;
        let b = baseline.unwrap_or(mean_reward);

        let scale = 1.0 / traces.len() as f64;
        let mut dlogits = penalty.logit_gradient(probs);
        dlogits.iter_mut().for_each(|g| *g = -*g);
        for tr in &traces {
            let adv = (tr.reward - b) * scale;
            for ((g, &a), &p) in dlogits.iter_mut().zip(&tr.actions).zip(probs) {
                *g += adv * (f64::from(u8::from(a)) - p);
            }
        }

        if config.learning_rate > 0.0 {
            let grad = pass.backward(&dlogits);
            let (lr, wd) = (config.learning_rate, config.weight_decay);
            for (theta, g) in params.blocks_mut().into_iter().zip(grad.blocks()) {
                for (t, &gi) in theta.iter_mut().zip(g) {
                    *t += lr * gi - lr * wd * *t;
                }
            }
        }

        let decay = config.baseline_decay;
        baseline = Some(decay * b + (1.0 - decay) * mean_reward);
        epoch_rewards.push(mean_reward);
    }

    if !params.is_finite() {
        return Err(Error::Config("training diverged to non-finite parameters".into()));
    }
    Ok(TrainOutcome { params, epoch_rewards })
}

/// Selection probability of every pool image, in pool order.
pub fn policy_probabilities(pool: &Pool, params: &PolicyParams, epsilon: f64) -> Result<Vec<f64>> {
    let n = pool.n_classes();
    if params.input_dim() != n * n {
        return Err(Error::Dimension(format!(
            "policy expects {} classes, pool has {n}",
            (params.input_dim() as f64).sqrt()
        )));
    }
    let states = pool_policy_states(pool, epsilon);
    let xs: Vec<&[f64]> = states.iter().map(|s| s.values.as_slice()).collect();
    params.probabilities(&xs)
}

/// The `budget` images with the highest selection probability, best first.
pub fn select_with_policy(pool: &Pool, params: &PolicyParams, budget: usize, epsilon: f64) -> Result<Selection> {
    if budget < 1 || budget > pool.len() {
        return Err(Error::Budget {
            budget,
            available: pool.len(),
        });
    }
    let probs = policy_probabilities(pool, params, epsilon)?;
    let top = top_k(&probs, budget);
    Selection::new(
        top.iter().map(|&i| pool.image(i).image_id.clone()).collect(),
        Some(top.iter().map(|&i| probs[i]).collect()),
        Strategy::Rl,
        0,
    )
}

/// Indices of the `k` largest scores in descending order; ties by lowest index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k(&[0.9, 0.1, 0.7], 2), vec![0, 2]);
        assert_eq!(top_k(&[0.5; 5], 3), vec![0, 1, 2]);
        assert_eq!(top_k(&[0.2, 0.4], 2), vec![1, 0]);
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"max_epochs": 3, "alpha": 1.0}"#).unwrap();
        assert_eq!(cfg.max_epochs, 3);
        assert_eq!(cfg.cell_size, 256);
        assert_eq!(cfg.learning_rate, 1e-5);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());

        let mut bad = TrainConfig::default();
        bad.budget_fraction = 1.0;
        assert!(bad.validate().is_err());
        bad = TrainConfig { baseline_decay: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let pen = SizePenalty { weight: 3.0, budget_fraction: 0.2 };
        let logits = [0.3, -1.2, 2.0, 0.1];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let probs: Vec<f64> = logits.iter().map(|&l| sig(l)).collect();
        let g = pen.logit_gradient(&probs);
        for k in 0..logits.len() {
            let mut up = logits;
            let mut dn = logits;
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let f = |l: &[f64; 4]| pen.value(&l.iter().map(|&x| sig(x)).collect::<Vec<_>>());
            let num = (f(&up) - f(&dn)) / 2e-6;
            assert!((num - g[k]).abs() < 1e-8);
        }
    }
}
