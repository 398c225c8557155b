//! Closed-loop active-learning testbed: synthetic scenes whose region labels
//! follow a class co-occurrence chain, a context-aware linear classifier, a
//! (possibly noisy) oracle and multi-round evaluation of every strategy.

mod al;
mod model;
mod scene;

pub use al::{
    run_al_loop, run_al_loop_on, simulator_policy_config, AlConfig, AlRunReport, AlStrategy, RoundRecord,
    HELD_OUT_FRACTION,
};
pub use model::{cross_entropy, image_id, predict_pool, train_toy_model, ToyModel, ToyModelConfig};
pub use scene::{context_inputs, generate_scene_pool, oracle_label, Scene, SceneConfig, SceneImage};
