//! Episodic training: sample matching pairs, mine hard negatives with the
//! current model, optionally mix in synthetic tuples, and take gradient steps
//! with decoupled weight decay and a cosine step-size schedule.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{evaluate, LossKind, TrainingTuple, ViewStore};
use super::mining::{embed_views, mine_negatives, CoObservations};
use super::model::EmbeddingModel;
use super::sampling::{build_synthetic_tuple, sample_tuples};
use crate::error::{Error, Result};
use crate::geometry::{ScoreTable, Threshold};
use crate::rng;
use crate::variants::VariantStore;
use crate::worldgen::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    SwapPi,
    MultiK,
    AggregatedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    GeometryAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub episodes: usize,
    pub pairs_per_episode: usize,
    pub negative_pool_size: usize,
    /// Negatives per tuple (M).
    pub negatives: usize,
    /// Training units per gradient step.
    pub batch_size: usize,
    pub mode: TrainMode,
    /// Swap probability for `swap_pi`.
    pub pi: f64,
    /// Synthetic tuples per unit for `multi_k` / `aggregated_k` (K).
    pub k_synthetic: usize,
    /// Pair validation threshold; a relative value of 0 disables filtering.
    pub threshold: Threshold,
    pub sampling: SamplingMode,
    pub seed: u64,
    /// `multi_k` only: also scale the hinge terms of a tuple by its weight.
    pub multi_weight_negatives: bool,
    /// `multi_k` only: keep at most this many negatives in synthetic tuples
    /// (0 keeps all).
    pub multi_negative_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            margin: 0.7,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            episodes: 30,
            pairs_per_episode: 200,
            negative_pool_size: 2000,
            negatives: 5,
            batch_size: 5,
            mode: TrainMode::MultiK,
            pi: 0.5,
            k_synthetic: 2,
            threshold: Threshold::relative(0.2),
            sampling: SamplingMode::GeometryAware,
            seed: 0,
            multi_weight_negatives: false,
            multi_negative_cap: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return bad("pi must lie in [0, 1]");
        }
        if self.k_synthetic < 1 {
            return bad("k_synthetic must be at least 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if self.batch_size < 1 || self.embedding_dim < 1 {
            return bad("batch_size and embedding_dim must be positive");
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        if self.mode != TrainMode::Baseline
            && self.sampling == SamplingMode::GeometryAware
            && !(self.threshold.value > 0.0)
        {
            return bad("sampling = geometry_aware requires a positive threshold (filtering)");
        }
        Ok(())
    }

    fn loss_kind(&self) -> LossKind {
        match self.mode {
            TrainMode::Baseline | TrainMode::SwapPi => LossKind::Contrastive,
            TrainMode::MultiK => LossKind::Multi,
            TrainMode::AggregatedK => LossKind::Aggregated,
        }
    }

    /// Step size after `step` of `total` steps.
    pub fn step_size(&self, step: usize, total: usize) -> f64 {
        let progress = if total == 0 { 0.0 } else { step as f64 / total as f64 };
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub mean_loss: f64,
    pub synth_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub trace: Vec<EpisodeStats>,
}

const STREAM_INIT: u64 = 11;
const STREAM_EPISODE: u64 = 12;

/// Synthetic inputs; ignored by the baseline.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticData<'a> {
    pub variants: &'a VariantStore,
    pub scores: &'a ScoreTable,
    pub prompts: &'a [String],
}

pub fn train(world: &World, synthetic: Option<SyntheticData<'_>>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let d = world.descriptor_dim();
    let mut model = EmbeddingModel::init(
        config.embedding_dim,
        d,
        rng::derive_seed(config.seed, &[STREAM_INIT]),
    )?;
    if config.episodes == 0 {
        return Ok(TrainOutcome {
            model,
            trace: Vec::new(),
        });
    }
    let synthetic = match config.mode {
        TrainMode::Baseline => None,
        _ => Some(synthetic.ok_or_else(|| {
            Error::Config("train.mode requires synthetic variants and consistency scores".into())
        })?),
    };
    let oriented: Vec<(u32, u32)> = world
        .matching_pairs
        .iter()
        .flat_map(|p| [(p.a, p.b), (p.b, p.a)])
        .collect();
    if oriented.is_empty() {
        return Err(Error::DegenerateWorld("no matching pairs to train on".into()));
    }
    let store = ViewStore::new(&world.map_views, synthetic.map(|s| s.variants));
    let coobs = CoObservations::from_views(&world.map_views);
    let map_ids: Vec<u32> = world.map_views.iter().map(|v| v.id).collect();
    let kind = config.loss_kind();
    let steps_per_episode = config.pairs_per_episode.div_ceil(config.batch_size);
    let total_steps = steps_per_episode * config.episodes;
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let mut rng = rng::stream(config.seed, &[STREAM_EPISODE, episode as u64]);
        let pairs: Vec<(u32, u32)> = if config.pairs_per_episode <= oriented.len() {
            index::sample(&mut rng, oriented.len(), config.pairs_per_episode)
                .into_iter()
                .map(|i| oriented[i])
                .collect()
        } else {
            (0..config.pairs_per_episode)
                .map(|_| oriented[rng.random_range(0..oriented.len())])
                .collect()
        };
        let pool: Vec<u32> = if config.negative_pool_size >= map_ids.len() {
            map_ids.clone()
        } else {
            let mut p: Vec<u32> = index::sample(&mut rng, map_ids.len(), config.negative_pool_size)
                .into_iter()
                .map(|i| map_ids[i])
                .collect();
            p.sort_unstable();
            p
        };
        let embeddings = embed_views(&world.map_views, &model);

        let mut units: Vec<Vec<TrainingTuple>> = Vec::with_capacity(pairs.len());
        for &(q, p) in &pairs {
            let negatives = match mine_negatives(q, Some(p), &pool, &embeddings, config.negatives, &coobs) {
                Ok(n) => n,
                Err(Error::InsufficientNegatives { .. }) => continue,
                Err(e) => return Err(e),
            };
            let original = TrainingTuple::original(q, p, negatives);
            let family = match synthetic {
                Some(s) => synthetic_family(&original, s, config)?,
                None => Vec::new(),
            };
            units.push(sample_tuples(&original, &family, config, &mut rng));
        }

        let mut loss_sum = 0.0;
        let mut synth = 0usize;
        let mut used = 0usize;
        for batch in units.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|unit| evaluate_unit(kind, unit, &store, &model, config))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = DMatrix::zeros(model.embedding_dim(), model.descriptor_dim());
            for (loss, g) in &results {
                loss_sum += loss;
                grad += g;
            }
            grad /= batch.len() as f64;
            let lr = config.step_size(step, total_steps);
            model.w *= 1.0 - lr * config.weight_decay;
            model.w -= grad * lr;
            step += 1;
            for unit in batch {
                used += unit.len();
                synth += unit.iter().filter(|t| t.is_synthetic()).count();
            }
        }
        let mean_loss = if units.is_empty() {
            0.0
        } else {
            loss_sum / units.len() as f64
        };
        if !mean_loss.is_finite() || model.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(episode));
        }
        trace.push(EpisodeStats {
            episode,
            mean_loss,
            synth_fraction: if used == 0 { 0.0 } else { synth as f64 / used as f64 },
        });
    }
    Ok(TrainOutcome { model, trace })
}

fn evaluate_unit(
    kind: LossKind,
    unit: &[TrainingTuple],
    store: &ViewStore<'_>,
    model: &EmbeddingModel,
    config: &TrainConfig,
) -> Result<(f64, DMatrix<f64>)> {
    if kind == LossKind::Multi && config.multi_weight_negatives {
        super::loss::evaluate_multi_weighted(unit, store, model, config.margin)
    } else {
        evaluate(kind, unit, store, model, config.margin)
    }
}

/// Valid synthetic tuples of `original` over all prompts, in prompt order.
fn synthetic_family(original: &TrainingTuple, data: SyntheticData<'_>, config: &TrainConfig) -> Result<Vec<TrainingTuple>> {
    let mut family = Vec::new();
    for prompt in data.prompts {
        let Some(score) = data.scores.get(original.query_id, original.positive_id, prompt) else {
            continue;
        };
        match build_synthetic_tuple(original, prompt, data.variants, score, &config.threshold) {
            Ok(mut t) => {
                if config.mode == TrainMode::MultiK && config.multi_negative_cap > 0 {
                    t.negative_ids.truncate(config.multi_negative_cap);
                }
                family.push(t);
            }
            Err(Error::InvalidSyntheticPair { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(family)
}
