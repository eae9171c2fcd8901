//! Conveyance loss for classification in structured class spaces.
//!
//! A boolean plausibility matrix `Q` states, for every label `t`, which
//! classes an instance carrying that label could truly belong to. The loss
//! rewards probability on the target and, separately, on the whole
//! plausible set, pooling the two log-odds margins in a log-sum-exp.
//!
//! - [`lse`]: masked, max-shifted log-sum-exp
//! - [`loss`]: the loss in probability and logit space, gradients, batches
//! - [`qmatrix`]: plausibility matrices for noise, MIL, ordinal and hierarchical structure
//! - [`noise`]: structured transition matrices and seeded label corruption
//! - [`data`]: synthetic datasets
//! - [`model`], [`train`]: small softmax classifiers trained with SGD + momentum
//! - [`par`]: rayon-backed helpers with a sequential fallback (`parallel` feature)

pub mod data;
pub mod error;
pub mod loss;
pub mod lse;
pub mod model;
pub mod noise;
pub mod par;
pub mod qmatrix;
mod textmat;
pub mod train;

pub use error::{Error, Result};
pub use loss::{
    batch_loss, batch_loss_with, conveyance_grad, conveyance_loss_and_grad, conveyance_loss_logits,
    conveyance_loss_prob, cross_entropy, naive_probability_loss, BatchLoss, LogitVector, LossBreakdown,
    LossParams, PlausibleSet, ProbVector, Reduction,
};
pub use lse::masked_lse;
pub use noise::{build_transition, corrupt_labels, NoiseSpec, TransitionMatrix};
pub use qmatrix::{
    per_sample_sets, q_from_transition, q_hierarchy, q_identity, q_mil, q_ordinal, Boundary, HierarchyMap,
    OrdinalWindowSpec, PerSampleWindow, PlausibilityMatrix,
};
pub use train::{evaluate, train, train_and_evaluate, train_mil_instances, ExperimentReport, LossKind, TrainConfig};
