#![allow(dead_code)]

use locsynth::camera::CameraPose;
use locsynth::embed::{EmbeddingModel, LossKind, TrainingTuple, ViewStore};
use locsynth::variants::VariantStore;
use locsynth::worldgen::{LocalFeature, ViewImage};
use nalgebra::{DMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn view(id: u32, condition: &str, descs: Vec<Vec<f64>>) -> ViewImage {
    ViewImage {
        id,
        pose: CameraPose::from_wxyz(1.0, 0.0, 0.0, 0.0, Vector3::zeros()),
        intrinsics: Default::default(),
        features: descs
            .into_iter()
            .enumerate()
            .map(|(k, descriptor)| LocalFeature {
                keypoint: Vector2::new(10.0 + k as f64, 10.0),
                descriptor,
                landmark_id: Some(k as u32),
            })
            .collect(),
        condition: condition.into(),
    }
}

pub fn random_view(rng: &mut ChaCha8Rng, id: u32, condition: &str, d: usize) -> ViewImage {
    let n = rng.random_range(2..=5);
    let descs = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    view(id, condition, descs)
}

/// A small random training problem: query 0, positive 1, negatives 2.., and
/// variants of the query and negatives under every prompt.
pub struct Instance {
    pub originals: Vec<ViewImage>,
    pub variants: VariantStore,
    pub model: EmbeddingModel,
    pub prompts: Vec<String>,
    pub m: usize,
    pub margin: f64,
    pub weights: Vec<f64>,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(4..=7);
        let e = rng.random_range(2..=d.min(4));
        let m = rng.random_range(1..=3);
        let prompts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let originals: Vec<ViewImage> = (0..(2 + m) as u32)
            .map(|id| random_view(&mut rng, id, "original", d))
            .collect();
        let mut variants = VariantStore::default();
        for v in &originals {
            if v.id == 1 {
                continue;
            }
            let list = prompts.iter().map(|p| random_view(&mut rng, v.id, p, d)).collect();
            variants.by_view.insert(v.id, list);
        }
        let model = EmbeddingModel::new(DMatrix::from_fn(e, d, |_, _| rng.sample(StandardNormal))).unwrap();
        let margin = rng.random_range(0.3..1.8);
        let weights = prompts.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        Self {
            originals,
            variants,
            model,
            prompts,
            m,
            margin,
            weights,
        }
    }

    pub fn store(&self) -> ViewStore<'_> {
        ViewStore::new(&self.originals, Some(&self.variants))
    }

    pub fn original_tuple(&self) -> TrainingTuple {
        TrainingTuple::original(0, 1, (2..(2 + self.m) as u32).collect())
    }

    /// Original tuple followed by `k` synthetic ones.
    pub fn family(&self, k: usize) -> Vec<TrainingTuple> {
        let mut out = vec![self.original_tuple()];
        for (p, w) in self.prompts.iter().zip(&self.weights).take(k) {
            out.push(TrainingTuple {
                prompt: Some(p.clone()),
                weight: *w,
                ..self.original_tuple()
            });
        }
        out
    }

    pub fn tuples_for(&self, kind: LossKind) -> Vec<TrainingTuple> {
        match kind {
            LossKind::Contrastive => vec![self.original_tuple()],
            LossKind::Multi | LossKind::Aggregated => self.family(self.prompts.len()),
        }
    }
}

/// Central finite differences of `loss` with respect to every entry of W.
pub fn finite_difference(model: &EmbeddingModel, h: f64, loss: impl Fn(&EmbeddingModel) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(model.w.nrows(), model.w.ncols());
    for r in 0..model.w.nrows() {
        for c in 0..model.w.ncols() {
            let mut plus = model.clone();
            plus.w[(r, c)] += h;
            let mut minus = model.clone();
            minus.w[(r, c)] -= h;
            g[(r, c)] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
    }
    g
}

/// Largest entrywise error relative to the gradient's largest magnitude.
pub fn max_relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(numeric.amax()).max(1e-12);
    (analytic - numeric).amax() / scale
}
