use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::worldgen::ViewImage;

/// Linear projection of local descriptors into the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    /// `e x d`.
    pub w: DMatrix<f64>,
}

impl EmbeddingModel {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.nrows() > w.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "embedding dim {} must be in 1..={}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite projection entry".into()));
        }
        Ok(Self { w })
    }

    /// Entries i.i.d. Gaussian with standard deviation `1/sqrt(d)`.
    pub fn init(e: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, &[0x1417]);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt())
            .map_err(|err| Error::DimensionMismatch(err.to_string()))?;
        Self::new(DMatrix::from_fn(e, d, |_, _| normal.sample(&mut rng)))
    }

    pub fn embedding_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.w.nrows())
            .map(|r| x.iter().enumerate().map(|(c, xc)| self.w[(r, c)] * xc).sum())
            .collect()
    }

    pub fn aggregate(&self, view: &ViewImage) -> Vec<f64> {
        Aggregation::compute(view, self).f
    }
}

/// Norm-weighted mean of projected local features, l2-normalized.
pub fn aggregate(view: &ViewImage, model: &EmbeddingModel) -> Vec<f64> {
    model.aggregate(view)
}

/// Forward pass of the aggregation with what is needed for backprop.
#[derive(Debug, Clone)]
pub struct Aggregation {
    projected: Vec<Vec<f64>>,
    norms: Vec<f64>,
    sum_norm: f64,
    pub f: Vec<f64>,
    /// True when the weighted sum vanished and `f` fell back to `e_0`.
    pub degenerate: bool,
}

impl Aggregation {
    pub fn compute(view: &ViewImage, model: &EmbeddingModel) -> Self {
        let e = model.embedding_dim();
        let projected: Vec<Vec<f64>> = view
            .features
            .iter()
            .map(|f| model.project(&f.descriptor))
            .collect();
        let norms: Vec<f64> = projected.iter().map(|z| dot(z, z).sqrt()).collect();
        let total: f64 = norms.iter().sum();
        let mut mean = vec![0.0; e];
        for (z, n) in projected.iter().zip(&norms) {
            for (m, zi) in mean.iter_mut().zip(z) {
                *m += n * zi;
            }
        }
        if total > 0.0 {
            mean.iter_mut().for_each(|m| *m /= total);
        }
        let mean_norm = dot(&mean, &mean).sqrt();
        let (f, degenerate) = if mean_norm > 0.0 && mean_norm.is_finite() {
            (mean.iter().map(|m| m / mean_norm).collect(), false)
        } else {
            let mut e0 = vec![0.0; e];
            e0[0] = 1.0;
            (e0, true)
        };
        Self {
            projected,
            norms,
            sum_norm: total * mean_norm,
            f,
            degenerate,
        }
    }

    /// Accumulates `dL/dW` into `grad` given `dL/df`.
    ///
    /// With `h = sum_i |z_i| z_i` and `f = h/|h|`:
    /// `dL/dh = (g - f (f.g)) / |h|` and
    /// `dL/dW = sum_i ((z_i.a)/|z_i| z_i + |z_i| a) x_i^T`.
    pub fn backprop(&self, view: &ViewImage, grad_f: &[f64], grad: &mut DMatrix<f64>) {
        if self.degenerate {
            return;
        }
        let fg = dot(&self.f, grad_f);
        let a: Vec<f64> = grad_f
            .iter()
            .zip(&self.f)
            .map(|(g, f)| (g - f * fg) / self.sum_norm)
            .collect();
        for ((feat, z), &n) in view.features.iter().zip(&self.projected).zip(&self.norms) {
            if n == 0.0 {
                continue;
            }
            let za = dot(z, &a) / n;
            for r in 0..z.len() {
                let coef = za * z[r] + n * a[r];
                if coef == 0.0 {
                    continue;
                }
                for (c, x) in feat.descriptor.iter().enumerate() {
                    grad[(r, c)] += coef * x;
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Entrywise mean of the projection matrices.
pub fn average_models(models: &[EmbeddingModel]) -> Result<EmbeddingModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no models to average".into()))?;
    let shape = first.w.shape();
    let mut sum = DMatrix::zeros(shape.0, shape.1);
    for m in models {
        if m.w.shape() != shape {
            return Err(Error::DimensionMismatch(format!(
                "model shape {:?} vs {:?}",
                m.w.shape(),
                shape
            )));
        }
        sum += &m.w;
    }
    EmbeddingModel::new(sum / models.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraPose;
    use crate::worldgen::LocalFeature;
    use nalgebra::{Vector2, Vector3};

    pub(crate) fn view_from(descs: &[Vec<f64>]) -> ViewImage {
        ViewImage {
            id: 0,
            pose: CameraPose::from_wxyz(1.0, 0.0, 0.0, 0.0, Vector3::zeros()),
            intrinsics: Default::default(),
            features: descs
                .iter()
                .map(|d| LocalFeature {
                    keypoint: Vector2::new(1.0, 1.0),
                    descriptor: d.clone(),
                    landmark_id: None,
                })
                .collect(),
            condition: "original".into(),
        }
    }

    #[test]
    fn single_feature_is_normalized_projection() {
        let m = EmbeddingModel::init(3, 5, 1).unwrap();
        let d = vec![0.3, -0.2, 0.5, 0.1, 0.9];
        let z = m.project(&d);
        let n = dot(&z, &z).sqrt();
        let f = aggregate(&view_from(&[d]), &m);
        for (a, b) in f.iter().zip(&z) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicates_do_not_change_the_aggregate() {
        let m = EmbeddingModel::init(3, 5, 1).unwrap();
        let d = vec![0.3, -0.2, 0.5, 0.1, 0.9];
        let e = vec![-0.1, 0.4, 0.0, 0.2, 0.3];
        let one = aggregate(&view_from(&[d.clone(), e.clone()]), &m);
        let two = aggregate(&view_from(&[d.clone(), d, e.clone(), e]), &m);
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_weighted_mean_by_hand() {
        // W keeps the first two coordinates of 4-dim descriptors
        let w = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let m = EmbeddingModel::new(w).unwrap();
        let descs = vec![
            vec![3.0, 4.0, 9.0, 9.0],  // z=(3,4)  |z|=5
            vec![1.0, 0.0, 1.0, 0.0],  // z=(1,0)  |z|=1
            vec![0.0, -2.0, 0.0, 5.0], // z=(0,-2) |z|=2
            vec![0.0, 0.0, 7.0, 7.0],  // z=0
            vec![-6.0, 8.0, 0.0, 0.0], // z=(-6,8) |z|=10
        ];
        // sum |z| z = (15,20) + (1,0) + (0,-4) + (-60,80) = (-44, 96)
        let norm = (44.0f64 * 44.0 + 96.0 * 96.0).sqrt();
        let f = aggregate(&view_from(&descs), &m);
        assert!((f[0] + 44.0 / norm).abs() < 1e-12);
        assert!((f[1] - 96.0 / norm).abs() < 1e-12);
    }

    #[test]
    fn zero_sum_is_degenerate() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = EmbeddingModel::new(w).unwrap();
        let a = Aggregation::compute(&view_from(&[vec![1.0, 0.0], vec![-1.0, 0.0]]), &m);
        assert!(a.degenerate);
        assert_eq!(a.f, vec![1.0, 0.0]);
    }

    #[test]
    fn averaging() {
        let a = EmbeddingModel::init(2, 3, 1).unwrap();
        assert_eq!(average_models(&[a.clone()]).unwrap(), a);
        let neg = EmbeddingModel::new(-a.w.clone()).unwrap();
        assert!(average_models(&[a.clone(), neg]).unwrap().w.iter().all(|x| *x == 0.0));
        let b = EmbeddingModel::init(2, 4, 1).unwrap();
        assert!(average_models(&[a, b]).is_err());
    }

    #[test]
    fn rejects_wide_embeddings() {
        assert!(EmbeddingModel::new(DMatrix::zeros(5, 3)).is_err());
        assert!(EmbeddingModel::new(DMatrix::from_element(2, 3, f64::NAN)).is_err());
    }
}
