//! PPO training, evaluation and logging for the wire-frame environment.
//!
//! The network is a small hand-written actor-critic (convolutional encoder,
//! separate policy and value heads) on top of `matrixmultiply`, generic over
//! `f32` for training and `f64` for gradient checks.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod dist;
pub mod metrics;
pub mod net;
pub mod ppo;
pub mod rollout;
pub mod scalar;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};
pub use config::{ConfigError, EvalConfig, LogConfig, TrainConfig};
pub use metrics::{evaluate, record_episode, EvalReport, GreedyPolicy, PerEnv, Policy};
pub use net::{Architecture, PolicyNet};
pub use ppo::{Diagnostics, PpoConfig};
pub use trainer::{apply_switch, train, TrainError, TrainSummary, TrainerState};
