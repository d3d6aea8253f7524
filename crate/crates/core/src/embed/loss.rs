//! Contrastive losses over real and synthetic tuples, with exact analytic
//! gradients with respect to the projection matrix.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::model::{dot, Aggregation, EmbeddingModel};
use crate::error::{Error, Result};
use crate::variants::VariantStore;
use crate::worldgen::ViewImage;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub query_id: u32,
    pub positive_id: u32,
    pub negative_ids: Vec<u32>,
    /// `None` for an original tuple.
    pub prompt: Option<String>,
    pub weight: f64,
}

impl TrainingTuple {
    pub fn original(query_id: u32, positive_id: u32, negative_ids: Vec<u32>) -> Self {
        Self {
            query_id,
            positive_id,
            negative_ids,
            prompt: None,
            weight: 1.0,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.prompt.is_some()
    }

    pub fn is_valid(&self) -> bool {
        !self.negative_ids.is_empty()
            && !self
                .negative_ids
                .iter()
                .any(|&n| n == self.query_id || n == self.positive_id)
            && (0.0..=1.0).contains(&self.weight)
            && (self.is_synthetic() || self.weight == 1.0)
    }
}

/// Resolves `(view id, prompt)` to original map views or their variants.
#[derive(Debug, Clone)]
pub struct ViewStore<'a> {
    originals: HashMap<u32, &'a ViewImage>,
    variants: Option<&'a VariantStore>,
}

impl<'a> ViewStore<'a> {
    pub fn new(views: impl IntoIterator<Item = &'a ViewImage>, variants: Option<&'a VariantStore>) -> Self {
        Self {
            originals: views.into_iter().map(|v| (v.id, v)).collect(),
            variants,
        }
    }

    pub fn original(&self, id: u32) -> Result<&'a ViewImage> {
        self.originals.get(&id).copied().ok_or(Error::MissingView(id))
    }

    pub fn resolve(&self, id: u32, prompt: Option<&str>) -> Result<&'a ViewImage> {
        match prompt {
            None => self.original(id),
            Some(t) => self
                .variants
                .and_then(|v| v.get(id, t))
                .ok_or_else(|| Error::MissingVariant(id, t.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Multi,
    Aggregated,
}

/// Aggregated embeddings of the views touched by one loss evaluation, with
/// the accumulated `dL/df` of each.
struct Slots<'a> {
    keys: Vec<(u32, Option<&'a str>)>,
    views: Vec<&'a ViewImage>,
    aggs: Vec<Aggregation>,
    grads: Vec<Vec<f64>>,
}

impl<'a> Slots<'a> {
    fn new() -> Self {
        Self {
            keys: Vec::new(),
            views: Vec::new(),
            aggs: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn slot(&mut self, store: &ViewStore<'a>, model: &EmbeddingModel, id: u32, prompt: Option<&'a str>) -> Result<usize> {
        if let Some(k) = self.keys.iter().position(|&key| key == (id, prompt)) {
            return Ok(k);
        }
        let view = store.resolve(id, prompt)?;
        let agg = Aggregation::compute(view, model);
        self.grads.push(vec![0.0; agg.f.len()]);
        self.keys.push((id, prompt));
        self.views.push(view);
        self.aggs.push(agg);
        Ok(self.keys.len() - 1)
    }

    fn f(&self, k: usize) -> &[f64] {
        &self.aggs[k].f
    }

    fn add_grad(&mut self, k: usize, g: &[f64], scale: f64) {
        for (a, b) in self.grads[k].iter_mut().zip(g) {
            *a += scale * b;
        }
    }

    fn backprop(&self, model: &EmbeddingModel) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(model.embedding_dim(), model.descriptor_dim());
        for ((agg, view), g) in self.aggs.iter().zip(&self.views).zip(&self.grads) {
            if g.iter().any(|x| *x != 0.0) {
                agg.backprop(view, g, &mut grad);
            }
        }
        grad
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `weight |q - p|^2 + sum_j [margin - |q - n_j|^2]^+` and its gradients
/// with respect to `q`, `p` and each `n_j`. The hinge has zero slope at the
/// kink.
struct Contrastive {
    loss: f64,
    dq: Vec<f64>,
    dp: Vec<f64>,
    dn: Vec<Option<Vec<f64>>>,
}

fn contrastive_core(
    q: &[f64],
    p: &[f64],
    negatives: &[&[f64]],
    weight: f64,
    negative_weight: f64,
    margin: f64,
) -> Contrastive {
    let dqp = sub(q, p);
    let mut loss = weight * dot(&dqp, &dqp);
    let mut dq: Vec<f64> = dqp.iter().map(|x| 2.0 * weight * x).collect();
    let dp: Vec<f64> = dq.iter().map(|x| -x).collect();
    let mut dn = Vec::with_capacity(negatives.len());
    for n in negatives {
        let dqn = sub(q, n);
        let slack = margin - dot(&dqn, &dqn);
        if slack > 0.0 {
            loss += negative_weight * slack;
            for (g, x) in dq.iter_mut().zip(&dqn) {
                *g -= 2.0 * negative_weight * x;
            }
            dn.push(Some(dqn.iter().map(|x| 2.0 * negative_weight * x).collect()));
        } else {
            dn.push(None);
        }
    }
    Contrastive { loss, dq, dp, dn }
}

/// Mean followed by l2 normalization; a singleton passes through unchanged.
struct SetAggregate {
    phi: Vec<f64>,
    mean_norm: f64,
    count: usize,
    degenerate: bool,
}

fn set_aggregate(members: &[&[f64]]) -> SetAggregate {
    if members.len() == 1 {
        return SetAggregate {
            phi: members[0].to_vec(),
            mean_norm: 1.0,
            count: 1,
            degenerate: false,
        };
    }
    let e = members[0].len();
    let mut mean = vec![0.0; e];
    for m in members {
        for (a, b) in mean.iter_mut().zip(m.iter()) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= members.len() as f64);
    let n = dot(&mean, &mean).sqrt();
    if n > 0.0 {
        SetAggregate {
            phi: mean.iter().map(|a| a / n).collect(),
            mean_norm: n,
            count: members.len(),
            degenerate: false,
        }
    } else {
        let mut e0 = vec![0.0; e];
        e0[0] = 1.0;
        SetAggregate {
            phi: e0,
            mean_norm: 0.0,
            count: members.len(),
            degenerate: true,
        }
    }
}

impl SetAggregate {
    /// `dL/df_i` for every member, given `dL/dphi`.
    fn member_grad(&self, grad_phi: &[f64]) -> Vec<f64> {
        if self.degenerate {
            return vec![0.0; grad_phi.len()];
        }
        if self.count == 1 {
            return grad_phi.to_vec();
        }
        let pg = dot(&self.phi, grad_phi);
        grad_phi
            .iter()
            .zip(&self.phi)
            .map(|(g, p)| (g - p * pg) / (self.mean_norm * self.count as f64))
            .collect()
    }
}

fn check_family(tuples: &[TrainingTuple]) -> Result<()> {
    let first = tuples.first().ok_or(Error::EmptyTupleSet)?;
    for t in &tuples[1..] {
        if t.positive_id != first.positive_id {
            return Err(Error::MismatchedTupleFamily(format!(
                "positive {} differs from {}",
                t.positive_id, first.positive_id
            )));
        }
        if t.negative_ids.len() != first.negative_ids.len() {
            return Err(Error::MismatchedTupleFamily("negative counts differ".into()));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_tuple<'a>(
    slots: &mut Slots<'a>,
    tuple: &'a TrainingTuple,
    store: &ViewStore<'a>,
    model: &EmbeddingModel,
    weight: f64,
    negative_weight: f64,
    margin: f64,
    scale: f64,
) -> Result<f64> {
    let prompt = tuple.prompt.as_deref();
    let q = slots.slot(store, model, tuple.query_id, prompt)?;
    let p = slots.slot(store, model, tuple.positive_id, None)?;
    let ns = tuple
        .negative_ids
        .iter()
        .map(|&n| slots.slot(store, model, n, prompt))
        .collect::<Result<Vec<_>>>()?;
    let negs: Vec<&[f64]> = ns.iter().map(|&k| slots.f(k)).collect();
    let c = contrastive_core(slots.f(q), slots.f(p), &negs, weight, negative_weight, margin);
    slots.add_grad(q, &c.dq, scale);
    slots.add_grad(p, &c.dp, scale);
    for (&k, g) in ns.iter().zip(&c.dn) {
        if let Some(g) = g {
            slots.add_grad(k, g, scale);
        }
    }
    Ok(c.loss)
}

/// Loss value and `dL/dW` for one training unit.
///
/// * `Contrastive`: `tuples` holds exactly one tuple, its weight is ignored.
/// * `Multi`: weighted sum over the tuples divided by their number.
/// * `Aggregated`: `tuples[0]` is the original, the rest are synthetic
///   variants sharing its positive; one contrastive loss on set aggregates.
pub fn evaluate(
    kind: LossKind,
    tuples: &[TrainingTuple],
    store: &ViewStore<'_>,
    model: &EmbeddingModel,
    margin: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if tuples.is_empty() {
        return Err(Error::EmptyTupleSet);
    }
    let mut slots = Slots::new();
    let loss = match kind {
        LossKind::Contrastive => eval_tuple(&mut slots, &tuples[0], store, model, 1.0, 1.0, margin, 1.0)?,
        LossKind::Multi => {
            let k = tuples.len() as f64;
            let mut total = 0.0;
            for t in tuples {
                total += eval_tuple(&mut slots, t, store, model, t.weight, 1.0, margin, 1.0 / k)?;
            }
            total / k
        }
        LossKind::Aggregated => {
            check_family(tuples)?;
            let p = slots.slot(store, model, tuples[0].positive_id, None)?;
            let qs = tuples
                .iter()
                .map(|t| slots.slot(store, model, t.query_id, t.prompt.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let ns = (0..tuples[0].negative_ids.len())
                .map(|m| {
                    tuples
                        .iter()
                        .map(|t| slots.slot(store, model, t.negative_ids[m], t.prompt.as_deref()))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let q_set = set_aggregate(&qs.iter().map(|&k| slots.f(k)).collect::<Vec<_>>());
            let n_sets: Vec<SetAggregate> = ns
                .iter()
                .map(|members| set_aggregate(&members.iter().map(|&k| slots.f(k)).collect::<Vec<_>>()))
                .collect();
            let negs: Vec<&[f64]> = n_sets.iter().map(|s| s.phi.as_slice()).collect();
            let c = contrastive_core(&q_set.phi, slots.f(p), &negs, 1.0, 1.0, margin);
            let gq = q_set.member_grad(&c.dq);
            for &k in &qs {
                slots.add_grad(k, &gq, 1.0);
            }
            slots.add_grad(p, &c.dp, 1.0);
            for ((set, members), g) in n_sets.iter().zip(&ns).zip(&c.dn) {
                if let Some(g) = g {
                    let gm = set.member_grad(g);
                    for &k in members {
                        slots.add_grad(k, &gm, 1.0);
                    }
                }
            }
            c.loss
        }
    };
    Ok((loss, slots.backprop(model)))
}

/// Multi-pair loss where each tuple's weight also scales its hinge terms.
pub fn evaluate_multi_weighted(
    tuples: &[TrainingTuple],
    store: &ViewStore<'_>,
    model: &EmbeddingModel,
    margin: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if tuples.is_empty() {
        return Err(Error::EmptyTupleSet);
    }
    let mut slots = Slots::new();
    let k = tuples.len() as f64;
    let mut total = 0.0;
    for t in tuples {
        total += eval_tuple(&mut slots, t, store, model, t.weight, t.weight, margin, 1.0 / k)?;
    }
    Ok((total / k, slots.backprop(model)))
}

pub fn loss_contrastive(tuple: &TrainingTuple, store: &ViewStore<'_>, model: &EmbeddingModel, margin: f64) -> Result<f64> {
    Ok(evaluate(LossKind::Contrastive, std::slice::from_ref(tuple), store, model, margin)?.0)
}

pub fn loss_multi(tuples: &[TrainingTuple], store: &ViewStore<'_>, model: &EmbeddingModel, margin: f64) -> Result<f64> {
    Ok(evaluate(LossKind::Multi, tuples, store, model, margin)?.0)
}

pub fn loss_aggregated(family: &[TrainingTuple], store: &ViewStore<'_>, model: &EmbeddingModel, margin: f64) -> Result<f64> {
    Ok(evaluate(LossKind::Aggregated, family, store, model, margin)?.0)
}

pub fn gradient(
    kind: LossKind,
    tuples: &[TrainingTuple],
    store: &ViewStore<'_>,
    model: &EmbeddingModel,
    margin: f64,
) -> Result<DMatrix<f64>> {
    Ok(evaluate(kind, tuples, store, model, margin)?.1)
}

/// The contrastive form on fixed embeddings, for callers that already hold
/// aggregated vectors.
pub fn contrastive_on_embeddings(q: &[f64], p: &[f64], negatives: &[&[f64]], margin: f64) -> f64 {
    contrastive_core(q, p, negatives, 1.0, 1.0, margin).loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_embedding_arithmetic() {
        // |(1,0)-(0,1)|^2 = 2, negative at distance 0 contributes the full margin
        let l = contrastive_on_embeddings(&[1.0, 0.0], &[0.0, 1.0], &[&[1.0, 0.0]], 0.7);
        assert!((l - 2.7).abs() < 1e-15);
        let zero = contrastive_on_embeddings(&[1.0, 0.0], &[1.0, 0.0], &[&[-1.0, 0.0]], 0.7);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn set_aggregate_of_singleton_is_identity() {
        let v = [0.6, 0.8];
        let s = set_aggregate(&[&v]);
        assert_eq!(s.phi, v.to_vec());
        assert_eq!(s.member_grad(&[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn set_aggregate_cancellation_is_degenerate() {
        let s = set_aggregate(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(s.degenerate);
        assert_eq!(s.member_grad(&[1.0, 1.0]), vec![0.0, 0.0]);
    }
}
