//! Retrieval over map views: cosine similarity of aggregated descriptors, or a
//! selective match kernel over binarized per-cell residuals of projected
//! local features.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::worldgen::ViewImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `C x e`.
    pub centroids: DMatrix<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Index of the nearest centroid, lowest index on ties.
    pub fn assign(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.len() {
            let d = sq_dist_row(&self.centroids, c, z);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

fn sq_dist_row(m: &DMatrix<f64>, row: usize, z: &[f64]) -> f64 {
    z.iter()
        .enumerate()
        .map(|(j, v)| (m[(row, j)] - v).powi(2))
        .sum()
}

/// k-means with k-means++ seeding and a fixed number of Lloyd iterations.
pub fn train_codebook(vectors: &[Vec<f64>], clusters: usize, iters: usize, seed: u64) -> Result<Codebook> {
    train_codebook_traced(vectors, clusters, iters, seed).map(|(c, _)| c)
}

/// As [`train_codebook`], also returning the within-cluster SSE measured at
/// each assignment step.
pub fn train_codebook_traced(
    vectors: &[Vec<f64>],
    clusters: usize,
    iters: usize,
    seed: u64,
) -> Result<(Codebook, Vec<f64>)> {
    if clusters == 0 || vectors.len() < clusters {
        return Err(Error::TooFewVectors {
            got: vectors.len(),
            clusters,
        });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch("codebook training vectors differ in length".into()));
    }
    let mut rng = rng::stream(seed, &[0xc0de]);
    let n = vectors.len();

    // k-means++ seeding
    let mut centroids = DMatrix::zeros(clusters, dim);
    let first = rng.random_range(0..n);
    set_row(&mut centroids, 0, &vectors[first]);
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist_row(&centroids, 0, v)).collect();
    for c in 1..clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc && *d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        set_row(&mut centroids, c, &vectors[pick]);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist_row(&centroids, c, v));
        }
    }

    let mut codebook = Codebook { centroids };
    let mut trace = Vec::with_capacity(iters);
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    for _ in 0..iters {
        for (i, v) in vectors.iter().enumerate() {
            (assignment[i], dist[i]) = codebook.assign(v);
        }
        trace.push(dist.iter().sum());
        let mut sums = DMatrix::<f64>::zeros(clusters, dim);
        let mut counts = vec![0usize; clusters];
        for (v, &a) in vectors.iter().zip(&assignment) {
            counts[a] += 1;
            for (j, x) in v.iter().enumerate() {
                sums[(a, j)] += x;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                for j in 0..dim {
                    codebook.centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        // empty cells take the point farthest from its updated centroid
        for c in 0..clusters {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .map(|i| (i, sq_dist_row(&codebook.centroids, assignment[i], &vectors[i])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            counts[assignment[far]] -= 1;
            assignment[far] = c;
            counts[c] = 1;
            set_row(&mut codebook.centroids, c, &vectors[far]);
        }
    }
    Ok((codebook, trace))
}

fn set_row(m: &mut DMatrix<f64>, row: usize, v: &[f64]) {
    for (j, x) in v.iter().enumerate() {
        m[(row, j)] = *x;
    }
}

/// Binarized aggregated residuals, one entry per occupied codebook cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AsmkSignature {
    /// cell id -> vector of +-1.
    pub cells: BTreeMap<usize, Vec<i8>>,
    /// Occupied cells whose residual sum vanished.
    pub dropped: Vec<usize>,
    pub codebook_size: usize,
    pub dim: usize,
}

impl AsmkSignature {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn asmk_aggregate_vectors(projected: &[Vec<f64>], codebook: &Codebook) -> AsmkSignature {
    let dim = codebook.dim();
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for z in projected {
        let (c, _) = codebook.assign(z);
        let s = sums.entry(c).or_insert_with(|| vec![0.0; dim]);
        for (j, zj) in z.iter().enumerate() {
            s[j] += zj - codebook.centroids[(c, j)];
        }
    }
    let mut cells = BTreeMap::new();
    let mut dropped = Vec::new();
    for (c, s) in sums {
        if s.iter().all(|x| *x == 0.0) {
            dropped.push(c);
        } else {
            cells.insert(c, s.iter().map(|x| if *x < 0.0 { -1 } else { 1 }).collect());
        }
    }
    AsmkSignature {
        cells,
        dropped,
        codebook_size: codebook.len(),
        dim,
    }
}

pub fn asmk_aggregate(view: &ViewImage, model: &EmbeddingModel, codebook: &Codebook) -> AsmkSignature {
    let projected: Vec<Vec<f64>> = view.features.iter().map(|f| model.project(&f.descriptor)).collect();
    asmk_aggregate_vectors(&projected, codebook)
}

/// `sign(u)|u|^alpha` above the threshold, zero otherwise.
pub fn selectivity(u: f64, alpha: f64, threshold: f64) -> f64 {
    if u >= threshold {
        u.signum() * u.abs().powf(alpha)
    } else {
        0.0
    }
}

pub fn asmk_score(a: &AsmkSignature, b: &AsmkSignature, alpha: f64, sel_threshold: f64) -> Result<f64> {
    if a.dim != b.dim || a.codebook_size != b.codebook_size {
        return Err(Error::CodebookMismatch(format!(
            "{}x{} vs {}x{}",
            a.codebook_size, a.dim, b.codebook_size, b.dim
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (c, ba) in &a.cells {
        if let Some(bb) = b.cells.get(c) {
            let agree: i64 = ba.iter().zip(bb).map(|(x, y)| (*x as i64) * (*y as i64)).sum();
            total += selectivity(agree as f64 / a.dim as f64, alpha, sel_threshold);
        }
    }
    Ok(total / ((a.len() * b.len()) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    GlobalCosine,
    Asmk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsmkParams {
    pub codebook_size: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub sel_threshold: f64,
}

impl Default for AsmkParams {
    fn default() -> Self {
        Self {
            codebook_size: 64,
            iterations: 20,
            alpha: 3.0,
            sel_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// `(view_id, score)` ordered by descending score, then ascending id.
    pub entries: Vec<(u32, f64)>,
}

impl RankedList {
    pub fn from_scores(mut scored: Vec<(u32, f64)>, k: usize) -> Self {
        scored.sort_by(rank_order);
        scored.truncate(k);
        Self { entries: scored }
    }

    pub fn top(&self, k: usize) -> &[(u32, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Map views indexed for both backends.
#[derive(Debug, Clone)]
pub struct Index {
    pub ids: Vec<u32>,
    pub globals: Vec<Vec<f64>>,
    pub codebook: Option<Codebook>,
    pub signatures: Vec<AsmkSignature>,
    pub params: AsmkParams,
}

impl Index {
    /// Global descriptors only.
    pub fn global(views: &[ViewImage], model: &EmbeddingModel) -> Self {
        Self {
            ids: views.iter().map(|v| v.id).collect(),
            globals: views.iter().map(|v| model.aggregate(v)).collect(),
            codebook: None,
            signatures: Vec::new(),
            params: AsmkParams::default(),
        }
    }

    /// Both backends; the codebook is trained on the projected local
    /// features of `views`.
    pub fn build(views: &[ViewImage], model: &EmbeddingModel, params: AsmkParams, seed: u64) -> Result<Self> {
        let locals: Vec<Vec<f64>> = views
            .iter()
            .flat_map(|v| v.features.iter().map(|f| model.project(&f.descriptor)))
            .collect();
        let codebook = train_codebook(&locals, params.codebook_size, params.iterations, seed)?;
        Ok(Self::with_codebook(views, model, codebook, params))
    }

    pub fn with_codebook(views: &[ViewImage], model: &EmbeddingModel, codebook: Codebook, params: AsmkParams) -> Self {
        let mut index = Self::global(views, model);
        index.signatures = views.iter().map(|v| asmk_aggregate(v, model, &codebook)).collect();
        index.codebook = Some(codebook);
        index.params = params;
        index
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn retrieve(&self, query: &ViewImage, model: &EmbeddingModel, backend: Backend, k: usize) -> Result<RankedList> {
        let scored: Vec<(u32, f64)> = match backend {
            Backend::GlobalCosine => {
                let f = model.aggregate(query);
                self.ids
                    .iter()
                    .zip(&self.globals)
                    .map(|(id, g)| (*id, f.iter().zip(g).map(|(a, b)| a * b).sum()))
                    .collect()
            }
            Backend::Asmk => {
                let codebook = self
                    .codebook
                    .as_ref()
                    .ok_or_else(|| Error::Config("asmk retrieval needs a codebook".into()))?;
                let sig = asmk_aggregate(query, model, codebook);
                self.ids
                    .iter()
                    .zip(&self.signatures)
                    .map(|(id, s)| Ok((*id, asmk_score(&sig, s, self.params.alpha, self.params.sel_threshold)?)))
                    .collect::<Result<_>>()?
            }
        };
        Ok(RankedList::from_scores(scored, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn sse(vectors: &[Vec<f64>], cb: &Codebook) -> f64 {
        vectors.iter().map(|v| cb.assign(v).1).sum()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = random_vectors(30, 3, 1);
        let cb = train_codebook(&v, 1, 5, 0).unwrap();
        for j in 0..3 {
            let mean = v.iter().map(|x| x[j]).sum::<f64>() / 30.0;
            assert!((cb.centroids[(0, j)] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn one_cluster_per_vector() {
        let v = random_vectors(12, 4, 2);
        let cb = train_codebook(&v, 12, 5, 3).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..12).map(|r| cb.centroids.row(r).iter().copied().collect()).collect();
        let mut expected = v.clone();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, expected);
    }

    #[test]
    fn sse_is_monotone_and_beats_random_assignment() {
        let v = random_vectors(100, 3, 4);
        let (cb, trace) = train_codebook_traced(&v, 4, 15, 5).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{trace:?}");
        }
        // random assignment, centroids at the assigned means
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<usize> = (0..100).map(|_| rng.random_range(0..4)).collect();
        let mut random_sse = 0.0;
        for c in 0..4 {
            let members: Vec<&Vec<f64>> = v.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            let mean: Vec<f64> = (0..3)
                .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
                .collect();
            random_sse += members
                .iter()
                .map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .sum::<f64>();
        }
        assert!(sse(&v, &cb) <= random_sse);
        assert!(train_codebook(&v[..3], 4, 5, 0).is_err());
    }

    #[test]
    fn codebook_is_deterministic() {
        let v = random_vectors(50, 3, 7);
        assert_eq!(train_codebook(&v, 5, 10, 1).unwrap(), train_codebook(&v, 5, 10, 1).unwrap());
    }

    fn toy_codebook() -> Codebook {
        Codebook {
            centroids: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 10.0, 10.0]),
        }
    }

    #[test]
    fn single_feature_signature() {
        let sig = asmk_aggregate_vectors(&[vec![9.0, 12.0]], &toy_codebook());
        assert_eq!(sig.cells.len(), 1);
        assert_eq!(sig.cells[&1], vec![-1, 1]);
    }

    #[test]
    fn cancelling_residuals_drop_the_cell() {
        let sig = asmk_aggregate_vectors(&[vec![1.0, -2.0], vec![-1.0, 2.0], vec![11.0, 9.0]], &toy_codebook());
        assert_eq!(sig.dropped, vec![0]);
        assert_eq!(sig.cells.keys().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn toy_kernel_by_hand() {
        let cb = Codebook {
            centroids: DMatrix::zeros(3, 4),
        };
        let mk = |cells: Vec<(usize, Vec<i8>)>| AsmkSignature {
            cells: cells.into_iter().collect(),
            dropped: Vec::new(),
            codebook_size: cb.len(),
            dim: 4,
        };
        let a = mk(vec![(0, vec![1, 1, 1, 1]), (1, vec![1, -1, 1, -1]), (2, vec![1, 1, -1, -1])]);
        let b = mk(vec![(0, vec![1, 1, 1, -1]), (1, vec![-1, 1, -1, 1])]);
        // cell 0: u = 2/4 -> 1/8; cell 1: u = -1 -> 0
        let expected = 0.125 / 6f64.sqrt();
        assert!((asmk_score(&a, &b, 3.0, 0.0).unwrap() - expected).abs() < 1e-15);
        // a negative threshold lets cell 1 through: (1/8 - 1)/sqrt6
        let loose = (0.125 - 1.0) / 6f64.sqrt();
        assert!((asmk_score(&a, &b, 3.0, -1.0).unwrap() - loose).abs() < 1e-15);
        assert_eq!(asmk_score(&a, &a, 3.0, 0.0).unwrap(), 1.0);
        let other = AsmkSignature { dim: 5, ..b.clone() };
        assert!(matches!(asmk_score(&a, &other, 3.0, 0.0), Err(Error::CodebookMismatch(_))));
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let r = RankedList::from_scores(vec![(5, 0.5), (2, 0.9), (3, 0.5), (1, 0.1)], 10);
        assert_eq!(r.ids(), vec![2, 3, 5, 1]);
        assert_eq!(RankedList::from_scores(vec![(5, 0.5), (2, 0.9)], 1).ids(), vec![2]);
    }
}
