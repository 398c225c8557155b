//! CDAL-RL: a bidirectional-LSTM Bernoulli selection policy trained with
//! REINFORCE on a reward mixing contextual diversity, visual
//! representativeness and class balance.

mod io;
mod lstm;
mod reward;
mod train;

pub use io::{decode_policy, encode_policy, load_policy, save_policy, MAGIC};
pub use lstm::{bernoulli_log_prob, log_prob_gradient, ForwardPass, LstmParams, PolicyParams, BLOCK_NAMES};
pub use reward::{default_lambda, reward_sr, reward_vr, total_reward, RewardContext, RewardParts};
pub use train::{
    policy_probabilities, reinforce_train, sample_episode, select_with_policy, top_k, EpisodeTrace, SizePenalty,
    TrainConfig, TrainOutcome,
};
