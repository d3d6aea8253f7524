use std::cmp::Ordering;
use std::collections::HashMap;

use super::model::{dot, EmbeddingModel};
use crate::error::{Error, Result};
use crate::worldgen::{sorted_intersection_count, ViewImage};

/// Landmark ids observed by each view, used to exclude views that overlap
/// the query or the positive.
#[derive(Debug, Clone, Default)]
pub struct CoObservations {
    ids: HashMap<u32, Vec<u32>>,
}

impl CoObservations {
    pub fn from_views<'a>(views: impl IntoIterator<Item = &'a ViewImage>) -> Self {
        Self {
            ids: views.into_iter().map(|v| (v.id, v.landmark_ids())).collect(),
        }
    }

    pub fn shares_any(&self, a: u32, b: u32) -> bool {
        match (self.ids.get(&a), self.ids.get(&b)) {
            (Some(x), Some(y)) => sorted_intersection_count(x, y) > 0,
            _ => false,
        }
    }
}

/// Aggregated descriptors of `views` under `model`.
pub fn embed_views<'a>(views: impl IntoIterator<Item = &'a ViewImage>, model: &EmbeddingModel) -> HashMap<u32, Vec<f64>> {
    views.into_iter().map(|v| (v.id, model.aggregate(v))).collect()
}

/// The `m` pool views most similar to the query among those sharing no
/// landmark with the query or the positive; ties go to the lower view id.
pub fn mine_negatives(
    query_id: u32,
    positive_id: Option<u32>,
    pool: &[u32],
    embeddings: &HashMap<u32, Vec<f64>>,
    m: usize,
    exclusion: &CoObservations,
) -> Result<Vec<u32>> {
    let fq = embeddings.get(&query_id).ok_or(Error::MissingView(query_id))?;
    let mut scored = Vec::new();
    for &v in pool {
        if v == query_id
            || Some(v) == positive_id
            || exclusion.shares_any(v, query_id)
            || positive_id.is_some_and(|p| exclusion.shares_any(v, p))
        {
            continue;
        }
        let fv = embeddings.get(&v).ok_or(Error::MissingView(v))?;
        scored.push((dot(fq, fv), v));
    }
    if scored.len() < m {
        return Err(Error::InsufficientNegatives {
            needed: m,
            eligible: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.dedup_by_key(|s| s.1);
    Ok(scored.into_iter().take(m).map(|(_, v)| v).collect())
}
