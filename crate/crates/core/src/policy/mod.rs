//! Actor and critics with hand-derived gradients, KL machinery and
//! Fisher-vector products.

pub mod actor;
pub mod checkpoint;
pub mod critic;
pub mod mlp;

pub use actor::{
    fisher_vector_product, forward_actor, mean_kl, mean_kl_dists, ratio, sample_and_logprob,
    surrogate_grads, ActionDist, ActorBatch, GradReport, Head, PolicyParams, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use checkpoint::Checkpoint;
pub use critic::{critic_fit, critic_loss_grads, critic_losses, CriticFitConfig, CriticParams, FitReport};
pub use mlp::{Activation, Mlp, Topology};
