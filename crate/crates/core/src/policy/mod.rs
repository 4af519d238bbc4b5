//! The design-conditioned universal policy and its training loop.

mod checkpoint;
mod gae;
mod net;
mod ppo;
mod runner;
mod universal;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gae::{gae, normalize};
pub use net::{LayerShape, Mlp, MlpCache};
pub use ppo::{
    loss, ppo_update, Adam, Batch, BatchActions, Learner, LossParts, PpoConfig, StepSchedule,
    UpdateDiagnostics,
};
pub use runner::{evaluate, mean_and_stderr, run_upn, EvalReport, RolloutRngs, RunReport};
pub use universal::{upn_state, Head, UniversalPolicy, LOG_STD_MAX, LOG_STD_MIN};
