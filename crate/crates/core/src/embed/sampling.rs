//! Synthetic tuple construction and per-step tuple selection.

use rand::Rng;

use super::loss::TrainingTuple;
use super::train::{SamplingMode, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::geometry::{validate_pair, ConsistencyScore, Threshold};
use crate::variants::VariantStore;

/// Substitutes the query and every negative by their variants under
/// `prompt`; the positive stays original. The tuple weight becomes the pair's
/// consistency score.
pub fn build_synthetic_tuple(
    tuple: &TrainingTuple,
    prompt: &str,
    variants: &VariantStore,
    score: &ConsistencyScore,
    threshold: &Threshold,
) -> Result<TrainingTuple> {
    if !validate_pair(score, threshold) {
        return Err(Error::InvalidSyntheticPair {
            query: tuple.query_id,
            positive: tuple.positive_id,
            prompt: prompt.to_string(),
        });
    }
    for &id in std::iter::once(&tuple.query_id).chain(&tuple.negative_ids) {
        if variants.get(id, prompt).is_none() {
            return Err(Error::MissingVariant(id, prompt.to_string()));
        }
    }
    Ok(TrainingTuple {
        query_id: tuple.query_id,
        positive_id: tuple.positive_id,
        negative_ids: tuple.negative_ids.clone(),
        prompt: Some(prompt.to_string()),
        weight: score.value.clamp(0.0, 1.0),
    })
}

/// Selection probabilities over valid synthetic tuples: uniform, or
/// proportional to `1/s` for geometry-aware sampling.
pub fn selection_probabilities(family: &[TrainingTuple], sampling: SamplingMode) -> Vec<f64> {
    if family.is_empty() {
        return Vec::new();
    }
    let raw: Vec<f64> = match sampling {
        SamplingMode::Uniform => vec![1.0; family.len()],
        SamplingMode::GeometryAware => family.iter().map(|t| 1.0 / t.weight).collect(),
    };
    if raw.iter().any(|w| !w.is_finite()) {
        // a zero score cannot be valid under a positive threshold; fall back
        // to sampling only those
        let inf: Vec<f64> = raw.iter().map(|w| if w.is_finite() { 0.0 } else { 1.0 }).collect();
        let total: f64 = inf.iter().sum();
        return inf.into_iter().map(|w| w / total).collect();
    }
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws `n` distinct indices, each draw proportional to the remaining
/// probabilities.
pub fn draw_without_replacement(probs: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut remaining = probs.to_vec();
    let mut out = Vec::with_capacity(n.min(probs.len()));
    for _ in 0..n.min(probs.len()) {
        if remaining.iter().all(|p| *p <= 0.0) {
            break;
        }
        let i = draw(&remaining, rng);
        remaining[i] = 0.0;
        out.push(i);
    }
    out
}

/// Tuples to use for one training unit.
///
/// * `baseline`: the original only.
/// * `swap_pi`: one tuple, a synthetic one with probability `pi`.
/// * `multi_k` / `aggregated_k`: the original followed by up to `K` distinct
///   synthetic tuples.
///
/// With no valid synthetic tuple the original is returned alone.
pub fn sample_tuples(
    original: &TrainingTuple,
    family: &[TrainingTuple],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Vec<TrainingTuple> {
    if family.is_empty() || config.mode == TrainMode::Baseline {
        return vec![original.clone()];
    }
    let probs = selection_probabilities(family, config.sampling);
    match config.mode {
        TrainMode::Baseline => unreachable!(),
        TrainMode::SwapPi => {
            if rng.random::<f64>() < config.pi {
                vec![family[draw(&probs, rng)].clone()]
            } else {
                vec![original.clone()]
            }
        }
        TrainMode::MultiK | TrainMode::AggregatedK => {
            let mut out = vec![original.clone()];
            out.extend(
                draw_without_replacement(&probs, config.k_synthetic, rng)
                    .into_iter()
                    .map(|i| family[i].clone()),
            );
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ThresholdMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synth(prompt: &str, s: f64) -> TrainingTuple {
        TrainingTuple {
            prompt: Some(prompt.into()),
            weight: s,
            ..TrainingTuple::original(0, 1, vec![5, 6])
        }
    }

    #[test]
    fn inverse_score_probabilities() {
        let fam = [synth("a", 0.5), synth("b", 0.25)];
        let p = selection_probabilities(&fam, SamplingMode::GeometryAware);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
        let u = selection_probabilities(&fam, SamplingMode::Uniform);
        assert_eq!(u, vec![0.5, 0.5]);
    }

    #[test]
    fn pi_zero_always_original() {
        let cfg = TrainConfig {
            mode: TrainMode::SwapPi,
            pi: 0.0,
            ..TrainConfig::default()
        };
        let orig = TrainingTuple::original(0, 1, vec![5, 6]);
        let fam = [synth("a", 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_tuples(&orig, &fam, &cfg, &mut rng), vec![orig.clone()]);
        }
    }

    #[test]
    fn multi_draws_distinct_prompts() {
        let cfg = TrainConfig {
            mode: TrainMode::AggregatedK,
            k_synthetic: 2,
            ..TrainConfig::default()
        };
        let orig = TrainingTuple::original(0, 1, vec![5, 6]);
        let fam = [synth("a", 0.5), synth("b", 0.9), synth("c", 0.3)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let out = sample_tuples(&orig, &fam, &cfg, &mut rng);
            assert_eq!(out.len(), 3);
            assert_eq!(out[0], orig);
            assert_ne!(out[1].prompt, out[2].prompt);
        }
        // only one valid variant
        assert_eq!(sample_tuples(&orig, &fam[..1], &cfg, &mut rng).len(), 2);
        assert_eq!(sample_tuples(&orig, &[], &cfg, &mut rng), vec![orig]);
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let store = VariantStore::default();
        let t = TrainingTuple::original(0, 1, vec![5]);
        let r = build_synthetic_tuple(&t, "x", &store, &ConsistencyScore::new(0, 10), &Threshold::relative(0.2));
        assert!(matches!(r, Err(Error::InvalidSyntheticPair { .. })));
        let abs = Threshold {
            mode: ThresholdMode::Absolute,
            value: 0.0,
        };
        let r = build_synthetic_tuple(&t, "x", &store, &ConsistencyScore::new(0, 10), &abs);
        assert!(matches!(r, Err(Error::MissingVariant(0, _))));
    }
}
