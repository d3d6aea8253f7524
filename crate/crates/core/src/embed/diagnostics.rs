//! Alignment and uniformity of the embedding distribution.

use super::model::{dot, EmbeddingModel};
use crate::variants::VariantStore;
use crate::worldgen::ViewImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub alignment: f64,
    pub uniformity: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    dot(a, a) + dot(b, b) - 2.0 * dot(a, b)
}

/// Alignment is the mean `|f(x) - f(x')|^alpha` over positive pairs;
/// uniformity is `log mean exp(-t |f(x) - f(y)|^2)` over distinct pairs of
/// `points`.
pub fn diagnostics_from_embeddings(
    positives: &[(Vec<f64>, Vec<f64>)],
    points: &[Vec<f64>],
    alpha: f64,
    t: f64,
) -> Diagnostics {
    let alignment = if positives.is_empty() {
        0.0
    } else {
        positives
            .iter()
            .map(|(a, b)| sq_dist(a, b).max(0.0).sqrt().powf(alpha))
            .sum::<f64>()
            / positives.len() as f64
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            total += (-t * sq_dist(&points[i], &points[j]).max(0.0)).exp();
            count += 1;
        }
    }
    let uniformity = if count == 0 { 0.0 } else { (total / count as f64).ln() };
    Diagnostics {
        alignment,
        uniformity,
    }
}

/// Diagnostics with each original view paired to every one of its variants.
pub fn feature_diagnostics(
    views: &[ViewImage],
    variants: &VariantStore,
    model: &EmbeddingModel,
    alpha: f64,
    t: f64,
) -> Diagnostics {
    let points: Vec<Vec<f64>> = views.iter().map(|v| model.aggregate(v)).collect();
    let positives: Vec<(Vec<f64>, Vec<f64>)> = views
        .iter()
        .zip(&points)
        .flat_map(|(v, f)| {
            variants
                .by_view
                .get(&v.id)
                .into_iter()
                .flatten()
                .map(move |var| (f.clone(), model.aggregate(var)))
        })
        .collect();
    diagnostics_from_embeddings(&positives, &points, alpha, t)
}
