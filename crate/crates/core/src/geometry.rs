//! Correspondences, identity-transform verification, and the geometric
//! consistency score of a synthetic pair.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variants::{PromptSet, VariantStore};
use crate::worldgen::{ViewImage, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchParams {
    /// Lowe ratio on Euclidean descriptor distances.
    pub ratio: f64,
    /// Keypoint agreement tolerance (pixels).
    pub pixel_tol: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            pixel_tol: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondences {
    /// `(index in a, index in b)`, ascending in the first index.
    pub pairs: Vec<(usize, usize)>,
    pub method: String,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn transposed(&self) -> Correspondences {
        let mut pairs: Vec<(usize, usize)> = self.pairs.iter().map(|&(a, b)| (b, a)).collect();
        pairs.sort_unstable();
        Correspondences {
            pairs,
            method: self.method.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub value: f64,
    pub kept: usize,
    pub original: usize,
}

impl ConsistencyScore {
    pub fn new(kept: usize, original: usize) -> Self {
        let value = if original == 0 {
            0.0
        } else {
            kept as f64 / original as f64
        };
        Self {
            value,
            kept,
            original,
        }
    }

    /// True when the original pair had no correspondences to begin with.
    pub fn is_flagged(&self) -> bool {
        self.original == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Threshold on the score value.
    Relative,
    /// Threshold on the number of kept correspondences.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub mode: ThresholdMode,
    pub value: f64,
}

impl Threshold {
    pub fn relative(value: f64) -> Self {
        Self {
            mode: ThresholdMode::Relative,
            value,
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest and second-nearest squared distances of `row`; ties keep the
/// lowest index.
fn nearest_two(row: impl Iterator<Item = f64>) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (j, d) in row.enumerate() {
        match best {
            None => best = Some((j, d)),
            Some((_, bd)) if d < bd => {
                second = bd;
                best = Some((j, d));
            }
            Some(_) => second = second.min(d),
        }
    }
    best.map(|(j, d)| (j, d, second))
}

fn passes_ratio(best_sq: f64, second_sq: f64, ratio: f64) -> bool {
    second_sq.is_infinite() || best_sq.sqrt() < ratio * second_sq.sqrt()
}

/// Mutual nearest neighbours in descriptor space with a symmetric Lowe ratio
/// test.
pub fn match_features(a: &ViewImage, b: &ViewImage, params: &MatchParams) -> Correspondences {
    let method = "mutual_nn_ratio".to_string();
    let (na, nb) = (a.features.len(), b.features.len());
    if na == 0 || nb == 0 {
        return Correspondences {
            pairs: Vec::new(),
            method,
        };
    }
    let dist: Vec<f64> = a
        .features
        .iter()
        .flat_map(|fa| b.features.iter().map(move |fb| squared_distance(&fa.descriptor, &fb.descriptor)))
        .collect();
    let forward: Vec<(usize, f64, f64)> = (0..na)
        .map(|i| nearest_two(dist[i * nb..(i + 1) * nb].iter().copied()).unwrap())
        .collect();
    let backward: Vec<(usize, f64, f64)> = (0..nb)
        .map(|j| nearest_two((0..na).map(|i| dist[i * nb + j])).unwrap())
        .collect();
    let pairs = forward
        .iter()
        .enumerate()
        .filter_map(|(i, &(j, d1, d2))| {
            let (back_i, e1, e2) = backward[j];
            (back_i == i && passes_ratio(d1, d2, params.ratio) && passes_ratio(e1, e2, params.ratio))
                .then_some((i, j))
        })
        .collect();
    Correspondences { pairs, method }
}

/// Keeps the correspondences whose keypoints agree under the identity
/// transformation.
pub fn verify_identity(
    corrs: &Correspondences,
    a: &ViewImage,
    b: &ViewImage,
    pixel_tol: f64,
) -> Correspondences {
    Correspondences {
        pairs: corrs
            .pairs
            .iter()
            .copied()
            .filter(|&(i, j)| (a.features[i].keypoint - b.features[j].keypoint).norm() <= pixel_tol)
            .collect(),
        method: format!("{}+identity", corrs.method),
    }
}

/// Correspondences of `(x, p)` whose two features both observe a landmark in
/// `area` (the co-observations of the original pair).
fn in_area(corrs: &Correspondences, x: &ViewImage, p: &ViewImage, area: &HashSet<u32>) -> Vec<(usize, usize)> {
    let inside = |v: &ViewImage, k: usize| v.features[k].landmark_id.is_some_and(|id| area.contains(&id));
    corrs
        .pairs
        .iter()
        .copied()
        .filter(|&(i, j)| inside(x, i) && inside(p, j))
        .collect()
}

/// Fraction of the original pair's correspondences that survive when the
/// query is replaced by its variant. Correspondences of the two matchings
/// are identified through their keypoint in `p`, which both share.
pub fn consistency_score(
    q: &ViewImage,
    p: &ViewImage,
    q_variant: &ViewImage,
    params: &MatchParams,
) -> ConsistencyScore {
    let q_ids: HashSet<u32> = q.features.iter().filter_map(|f| f.landmark_id).collect();
    let area: HashSet<u32> = p
        .features
        .iter()
        .filter_map(|f| f.landmark_id)
        .filter(|id| q_ids.contains(id))
        .collect();
    let original = in_area(&match_features(q, p, params), q, p, &area);
    let altered = in_area(&match_features(q_variant, p, params), q_variant, p, &area);
    let kept = intersect_by_anchor(&original, &altered, p, params.pixel_tol);
    ConsistencyScore::new(kept, original.len())
}

/// Counts altered correspondences that coincide with a distinct original one,
/// i.e. whose `p` keypoints lie within `tol`. Each original correspondence is
/// consumed at most once, nearest first, ties to the lowest index.
fn intersect_by_anchor(
    original: &[(usize, usize)],
    altered: &[(usize, usize)],
    p: &ViewImage,
    tol: f64,
) -> usize {
    let mut used = vec![false; original.len()];
    let mut kept = 0;
    for &(_, j) in altered {
        let anchor = p.features[j].keypoint;
        let mut best: Option<(usize, f64)> = None;
        for (k, &(_, jo)) in original.iter().enumerate() {
            if used[k] {
                continue;
            }
            let d = (p.features[jo].keypoint - anchor).norm();
            if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        if let Some((k, _)) = best {
            used[k] = true;
            kept += 1;
        }
    }
    kept
}

pub fn validate_pair(score: &ConsistencyScore, threshold: &Threshold) -> bool {
    match threshold.mode {
        ThresholdMode::Relative => score.value >= threshold.value,
        ThresholdMode::Absolute => score.kept as f64 >= threshold.value,
    }
}

/// Identity-verified matches between an image and its own variant, relative
/// to the landmark-bearing features of the image.
pub fn self_consistency(x: &ViewImage, x_variant: &ViewImage, params: &MatchParams) -> ConsistencyScore {
    let verified = verify_identity(&match_features(x, x_variant, params), x, x_variant, params.pixel_tol);
    let kept = verified
        .pairs
        .iter()
        .filter(|&&(i, _)| x.features[i].landmark_id.is_some())
        .count();
    ConsistencyScore::new(kept, x.num_landmark_features())
}

/// Consistency scores keyed by `(query_id, positive_id, prompt)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub scores: BTreeMap<(u32, u32, String), ConsistencyScore>,
}

impl ScoreTable {
    pub fn get(&self, query: u32, positive: u32, prompt: &str) -> Option<&ConsistencyScore> {
        self.scores.get(&(query, positive, prompt.to_string()))
    }

    pub fn insert(&mut self, query: u32, positive: u32, prompt: &str, score: ConsistencyScore) {
        self.scores.insert((query, positive, prompt.to_string()), score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Keys whose score passes `threshold`.
    pub fn valid_keys(&self, threshold: &Threshold) -> BTreeSet<(u32, u32, String)> {
        self.scores
            .iter()
            .filter(|(_, s)| validate_pair(s, threshold))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Scores every matching pair in both orientations under every prompt.
pub fn score_all_pairs(
    world: &World,
    variants: &VariantStore,
    prompts: &PromptSet,
    params: &MatchParams,
) -> Result<ScoreTable> {
    let oriented: Vec<(u32, u32)> = world
        .matching_pairs
        .iter()
        .flat_map(|p| [(p.a, p.b), (p.b, p.a)])
        .collect();
    let rows = oriented
        .par_iter()
        .map(|&(qi, pi)| {
            let q = world.map_view(qi).ok_or(Error::MissingView(qi))?;
            let p = world.map_view(pi).ok_or(Error::MissingView(pi))?;
            prompts
                .shifts
                .iter()
                .map(|s| {
                    let var = variants
                        .get(qi, &s.name)
                        .ok_or_else(|| Error::MissingVariant(qi, s.name.clone()))?;
                    Ok(((qi, pi, s.name.clone()), consistency_score(q, p, var, params)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable {
        scores: rows.into_iter().flatten().collect(),
    })
}
