//! Neural SAC, replay buffers, the MLP dynamics baseline and the
//! forecaster-augmented trainer.

pub mod buffer;
pub mod dicl_sac;
pub mod dynamics;
pub mod nn;
pub mod sac;

pub use buffer::{Batch, ReplayBuffer};
pub use dicl_sac::{dicl_sac_train, sac_train, AuditEntry, DiclSacConfig, LogRow, TrainingOutcome};
pub use dynamics::{mlp_dynamics_baseline, DynamicsConfig, DynamicsModel, FitReport};
pub use nn::{mse_loss, train_step_mse, Adam, Mlp, MlpGrads};
pub use sac::{
    actor_loss_grads, balancing_coefficient, critic_loss_grads, llm_batch_size, q_network, standard_normal,
    temperature_loss_grad, Actor, SacAgent, SacConfig, UpdateStats,
};
