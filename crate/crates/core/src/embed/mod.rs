//! The trainable retrieval model: a linear projection of local descriptors,
//! norm-weighted aggregation, contrastive losses over original and synthetic
//! tuples, and episodic training with hard-negative mining.

pub mod diagnostics;
pub mod loss;
pub mod mining;
pub mod model;
pub mod sampling;
pub mod train;

pub use diagnostics::{diagnostics_from_embeddings, feature_diagnostics, Diagnostics};
pub use loss::{
    evaluate, gradient, loss_aggregated, loss_contrastive, loss_multi, LossKind, TrainingTuple, ViewStore,
};
pub use mining::{embed_views, mine_negatives, CoObservations};
pub use model::{aggregate, average_models, Aggregation, EmbeddingModel};
pub use sampling::{build_synthetic_tuple, sample_tuples, selection_probabilities};
pub use train::{train, EpisodeStats, SamplingMode, SyntheticData, TrainConfig, TrainMode, TrainOutcome};
