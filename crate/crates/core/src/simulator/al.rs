use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{predict_pool, train_toy_model, ToyModel, ToyModelConfig};
use super::scene::{context_inputs, generate_scene_pool, oracle_label, Scene, SceneConfig};
use crate::confusion::{mean_region_entropy, total_confusion_entropy, DEFAULT_EPSILON};
use crate::coreset::{euclidean_matrix, k_center_greedy, k_center_greedy_indices, InitialPoint};
use crate::divergence::{cd_matrix, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::policy::{reinforce_train, select_with_policy, top_k, TrainConfig};
use crate::pool::{pseudo_label, Pool};

/// Share of generated images held out for evaluation.
pub const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlStrategy {
    Random,
    Entropy,
    CoresetEuclidean,
    CdalCs,
    CdalRl,
}

impl AlStrategy {
    pub const ALL: [AlStrategy; 5] = [
        AlStrategy::Random,
        AlStrategy::Entropy,
        AlStrategy::CoresetEuclidean,
        AlStrategy::CdalCs,
        AlStrategy::CdalRl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlStrategy::Random => "random",
            AlStrategy::Entropy => "entropy",
            AlStrategy::CoresetEuclidean => "coreset-euclidean",
            AlStrategy::CdalCs => "cdal-cs",
            AlStrategy::CdalRl => "cdal-rl",
        }
    }
}

impl fmt::Display for AlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Settings of one active-learning run, apart from the scene itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlConfig {
    pub rounds: usize,
    pub budget_per_round: usize,
    /// Share of the non-held-out images labeled before the first round.
    pub init_fraction: f64,
    pub noise_fraction: f64,
    pub seed: u64,
    pub model: ToyModelConfig,
    /// Used by `cdal-rl`; its seed is replaced per round.
    pub policy: TrainConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            budget_per_round: 15,
            init_fraction: 0.05,
            noise_fraction: 0.0,
            seed: 0,
            model: ToyModelConfig::default(),
            policy: simulator_policy_config(),
        }
    }
}

/// Policy settings sized for the simulator: the default step size and
/// reward, a smaller cell, and more of the cheap episodes per update.
pub fn simulator_policy_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 40,
        episodes_per_epoch: 32,
        cell_size: 32,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled: usize,
    pub accuracy: f64,
    pub h_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlRunReport {
    pub strategy: AlStrategy,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
}

impl AlRunReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.accuracy)
    }

    pub fn write_csv_to(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        let csv_err = |e: csv::Error| Error::io("<report>", std::io::Error::other(e));
        w.write_record(["round", "labeled", "accuracy", "h_bits", "strategy", "seed"])
            .map_err(csv_err)?;
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.labeled.to_string(),
                r.accuracy.to_string(),
                r.h_bits.to_string(),
                self.strategy.to_string(),
                self.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }
}

/// RNG stream ids, so each random decision is independent of the strategy.
const SPLIT_STREAM: u64 = 0;
const ORACLE_STREAM: u64 = 1;
const SELECT_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((stream << 32) | index);
    r
}

/// Generates the scene from `scene_cfg` and runs `cfg.rounds` acquisition
/// rounds. The report has one row per trained model: the initial labeled set
/// and the state after every round.
pub fn run_al_loop(strategy: AlStrategy, scene_cfg: &SceneConfig, cfg: &AlConfig) -> Result<AlRunReport> {
    let scene = generate_scene_pool(scene_cfg)?;
    run_al_loop_on(strategy, &scene, &scene_cfg.superclass_map(), cfg)
}

pub fn run_al_loop_on(strategy: AlStrategy, scene: &Scene, superclasses: &[usize], cfg: &AlConfig) -> Result<AlRunReport> {
    if !(0.0..1.0).contains(&cfg.init_fraction) {
        return Err(Error::Config("init_fraction must lie in [0, 1)".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_fraction) {
        return Err(Error::Config("noise_fraction must lie in [0, 1]".into()));
    }
    let n = scene.images.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(cfg.seed, SPLIT_STREAM, 0));
    let n_held = (HELD_OUT_FRACTION * n as f64).round() as usize;
    let (held_out, al_pool) = order.split_at(n_held);
    let mut al_pool = al_pool.to_vec();
    al_pool.sort_unstable();
    let n_init = ((cfg.init_fraction * al_pool.len() as f64).round() as usize).max(1);
    let needed = n_init + cfg.rounds * cfg.budget_per_round;
    if al_pool.is_empty() || needed > al_pool.len() || (cfg.rounds > 0 && cfg.budget_per_round == 0) {
        return Err(Error::Budget {
            budget: needed,
            available: al_pool.len(),
        });
    }

    // Oracle labels by position within `al_pool`; `None` while unlabeled.
    let mut oracle: Vec<Option<Vec<usize>>> = vec![None; al_pool.len()];
    let inputs: Vec<Vec<Vec<f64>>> = al_pool.iter().map(|&i| context_inputs(&scene.images[i], scene.grid)).collect();
    let acquire = |pos: usize, oracle: &mut Vec<Option<Vec<usize>>>| -> Result<()> {
        let i = al_pool[pos];
        let mut oracle_rng = rng(cfg.seed, ORACLE_STREAM, i as u64);
        oracle[pos] = Some(oracle_label(&scene.images[i].labels, cfg.noise_fraction, superclasses, &mut oracle_rng)?);
        Ok(())
    };
    let mut init: Vec<usize> = (0..al_pool.len()).collect();
    init.shuffle(&mut rng(cfg.seed, SPLIT_STREAM, 1));
    for &pos in &init[..n_init] {
        acquire(pos, &mut oracle)?;
    }

    let held_inputs: Vec<(Vec<f64>, usize)> = held_out
        .iter()
        .flat_map(|&i| {
            let img = &scene.images[i];
            context_inputs(img, scene.grid).into_iter().zip(img.labels.iter().copied())
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.rounds + 1);
    for round in 0..=cfg.rounds {
        // Pool order, so the model does not depend on acquisition order.
        let (xs, ys): (Vec<&[f64]>, Vec<usize>) = oracle
            .iter()
            .zip(&inputs)
            .filter_map(|(o, x)| o.as_ref().map(|labels| (labels, x)))
            .flat_map(|(labels, x)| x.iter().map(Vec::as_slice).zip(labels.iter().copied()))
            .unzip();
        let model = train_toy_model(&xs, &ys, scene.n_classes, &cfg.model)?;
        let pool = predict_pool(&model, scene, &al_pool)?;
        records.push(RoundRecord {
            round,
            labeled: oracle.iter().filter(|o| o.is_some()).count(),
            accuracy: accuracy(&model, &held_inputs),
            h_bits: total_confusion_entropy(&pool, DEFAULT_EPSILON),
        });
        if round == cfg.rounds {
            break;
        }
        let is_labeled: Vec<bool> = oracle.iter().map(Option::is_some).collect();
        for pos in select(strategy, &pool, &is_labeled, cfg, round)? {
            acquire(pos, &mut oracle)?;
        }
    }
    Ok(AlRunReport {
        strategy,
        seed: cfg.seed,
        rounds: records,
    })
}

fn accuracy(model: &ToyModel, held: &[(Vec<f64>, usize)]) -> f64 {
    if held.is_empty() {
        return 0.0;
    }
    let correct = held.iter().filter(|(x, y)| pseudo_label(&model.predict(x)) == *y).count();
    correct as f64 / held.len() as f64
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(round as u64)
}

/// Positions (into the AL pool) of the next batch.
fn select(strategy: AlStrategy, pool: &Pool, is_labeled: &[bool], cfg: &AlConfig, round: usize) -> Result<Vec<usize>> {
    let budget = cfg.budget_per_round;
    let unlabeled: Vec<usize> = (0..pool.len()).filter(|&i| !is_labeled[i]).collect();
    let labeled: Vec<usize> = (0..pool.len()).filter(|&i| is_labeled[i]).collect();
    Ok(match strategy {
        AlStrategy::Random => {
            let mut u = unlabeled;
            u.shuffle(&mut rng(cfg.seed, SELECT_STREAM, round as u64));
            u.truncate(budget);
            u
        }
        AlStrategy::Entropy => {
            let scores: Vec<f64> = unlabeled.iter().map(|&i| mean_region_entropy(pool.image(i))).collect();
            top_k(&scores, budget).into_iter().map(|k| unlabeled[k]).collect()
        }
        AlStrategy::CoresetEuclidean => k_center_greedy_indices(&euclidean_matrix(pool)?, budget, None, &labeled),
        AlStrategy::CdalCs => {
            // Candidates only; the first center is drawn at random.
            let sub = pool.subset(&unlabeled)?;
            let d = cd_matrix(&sub, None, DEFAULT_EPSILON, DEFAULT_FLOOR)?;
            let initial = InitialPoint::Seed(round_seed(cfg.seed, round));
            k_center_greedy(&d, budget, &initial, &[])?
                .image_ids()
                .iter()
                .map(|id| sub.index_of(id).map(|k| unlabeled[k]))
                .collect::<Result<_>>()?
        }
        AlStrategy::CdalRl => {
            let sub = pool.subset(&unlabeled)?;
            let policy_cfg = TrainConfig {
                seed: round_seed(cfg.seed, round),
                ..cfg.policy.clone()
            };
            let outcome = reinforce_train(&sub, &policy_cfg)?;
            let sel = select_with_policy(&sub, &outcome.params, budget, policy_cfg.epsilon)?;
            sel.image_ids()
                .iter()
                .map(|id| sub.index_of(id).map(|k| unlabeled[k]))
                .collect::<Result<_>>()?
        }
    })
}
