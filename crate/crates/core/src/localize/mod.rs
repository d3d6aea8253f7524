//! Pose estimation from retrieval shortlists and localization metrics.

pub mod pnp;

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::geometry::{match_features, squared_distance, MatchParams};
use crate::index::RankedList;
use crate::worldgen::{Landmark, LocalFeature, ViewImage};

pub use pnp::{dlt_pose, pnp_ransac, reprojection_error, Correspondence2d3d, RansacParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    /// Meters.
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyLevel {
    pub name: String,
    pub max_translation: f64,
    pub max_rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyThresholds {
    /// Strictest first.
    pub levels: Vec<AccuracyLevel>,
}

impl Default for AccuracyThresholds {
    fn default() -> Self {
        let level = |name: &str, t, r| AccuracyLevel {
            name: name.into(),
            max_translation: t,
            max_rotation: r,
        };
        Self {
            levels: vec![level("high", 0.25, 2.0), level("mid", 0.5, 5.0), level("low", 5.0, 10.0)],
        }
    }
}

impl AccuracyThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("thresholds: at least one level is required".into()));
        }
        for w in self.levels.windows(2) {
            if !(w[1].max_translation > w[0].max_translation && w[1].max_rotation > w[0].max_rotation) {
                return Err(Error::Config(format!(
                    "thresholds: level {} must be looser than {}",
                    w[1].name, w[0].name
                )));
            }
        }
        Ok(())
    }
}

/// Translation distance and the angle of `R_est R_gt^T` in degrees.
pub fn pose_error(est: &CameraPose, gt: &CameraPose) -> PoseError {
    // conj(a) * b, expanded so that b = +-a gives an exactly zero vector part
    let (a, b) = (est.rotation.quaternion(), gt.rotation.quaternion());
    let (va, vb) = (a.imag(), b.imag());
    let w = a.w * b.w + va.dot(&vb);
    let v = vb * a.w - va * b.w - va.cross(&vb);
    let angle = 2.0 * v.norm().atan2(w.abs());
    PoseError {
        translation: (est.position - gt.position).norm(),
        rotation: angle.to_degrees().min(180.0),
    }
}

/// Mean of the top-k positions and sign-aligned chordal mean of their
/// rotations.
pub fn ewb_pose(ranked: &RankedList, poses: &HashMap<u32, CameraPose>, k: usize) -> Result<CameraPose> {
    let top = ranked.top(k.max(1));
    if top.is_empty() {
        return Err(Error::EmptyRanking);
    }
    let chosen: Vec<CameraPose> = top
        .iter()
        .map(|(id, _)| poses.get(id).copied().ok_or(Error::MissingView(*id)))
        .collect::<Result<_>>()?;
    if chosen.iter().all(|p| *p == chosen[0]) {
        return Ok(chosen[0]);
    }
    let position = chosen.iter().fold(Vector3::zeros(), |acc, p| acc + p.position) / chosen.len() as f64;
    let reference = *chosen[0].rotation.quaternion();
    let mut sum = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for p in &chosen {
        let q = *p.rotation.quaternion();
        sum += if q.dot(&reference) < 0.0 { -q } else { q };
    }
    Ok(CameraPose::new(UnitQuaternion::from_quaternion(sum), position))
}

fn projected(view: &ViewImage, model: &EmbeddingModel) -> ViewImage {
    ViewImage {
        features: view
            .features
            .iter()
            .map(|f| LocalFeature {
                descriptor: model.project(&f.descriptor),
                ..f.clone()
            })
            .collect(),
        ..view.clone()
    }
}

/// 2D-3D correspondences from matching the query against the top-k map
/// views, one per landmark (the closest match in projected descriptor space).
pub fn lift_matches(
    query: &ViewImage,
    ranked: &RankedList,
    map_views: &HashMap<u32, &ViewImage>,
    landmarks: &HashMap<u32, &Landmark>,
    model: &EmbeddingModel,
    k: usize,
    params: &MatchParams,
) -> Result<Vec<Correspondence2d3d>> {
    let q = projected(query, model);
    let mut best: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (id, _) in ranked.top(k) {
        let view = map_views.get(id).ok_or(Error::MissingView(*id))?;
        let m = projected(view, model);
        for (i, j) in match_features(&q, &m, params).pairs {
            let Some(lid) = m.features[j].landmark_id else {
                continue;
            };
            let d = squared_distance(&q.features[i].descriptor, &m.features[j].descriptor);
            let entry = best.entry(lid).or_insert((d, i));
            if d < entry.0 {
                *entry = (d, i);
            }
        }
    }
    best.into_iter()
        .map(|(lid, (_, i))| {
            let lm = landmarks.get(&lid).ok_or_else(|| Error::Data {
                path: "landmarks".into(),
                msg: format!("unknown landmark {lid}"),
            })?;
            Ok(Correspondence2d3d {
                pixel: query.features[i].keypoint,
                point: lm.position,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn sfm_localize(
    query: &ViewImage,
    ranked: &RankedList,
    map_views: &HashMap<u32, &ViewImage>,
    landmarks: &HashMap<u32, &Landmark>,
    model: &EmbeddingModel,
    k: usize,
    match_params: &MatchParams,
    ransac: &RansacParams,
) -> Result<CameraPose> {
    let corr = lift_matches(query, ranked, map_views, landmarks, model, k, match_params)?;
    pnp_ransac(&corr, &query.intrinsics, ransac).map(|(pose, _)| pose)
}

/// Percentage of queries within each level; `None` entries count as
/// failures.
pub fn localization_rate(errors: &[Option<PoseError>], thresholds: &AccuracyThresholds) -> Vec<f64> {
    thresholds
        .levels
        .iter()
        .map(|level| {
            if errors.is_empty() {
                return 0.0;
            }
            let ok = errors
                .iter()
                .flatten()
                .filter(|e| e.translation <= level.max_translation && e.rotation <= level.max_rotation)
                .count();
            100.0 * ok as f64 / errors.len() as f64
        })
        .collect()
}

pub const DEFAULT_RECALL_RADIUS: f64 = 25.0;

/// Fraction of queries with at least one of the top-k results within
/// `radius` of the query position, for each k.
pub fn recall_at_k(
    rankings: &[(u32, RankedList)],
    positions: &HashMap<u32, Vector3<f64>>,
    radius: f64,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; ks.len()];
    for (query, ranked) in rankings {
        let qp = positions.get(query).ok_or(Error::MissingView(*query))?;
        // rank of the first database view within the radius
        let mut first = None;
        for (rank, (id, _)) in ranked.entries.iter().enumerate() {
            let p = positions.get(id).ok_or(Error::MissingView(*id))?;
            if (p - qp).norm() <= radius {
                first = Some(rank);
                break;
            }
        }
        if let Some(r) = first {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if r < k {
                    *h += 1;
                }
            }
        }
    }
    let n = rankings.len().max(1) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(axis_angle: Vector3<f64>, position: Vector3<f64>) -> CameraPose {
        CameraPose::new(UnitQuaternion::from_scaled_axis(axis_angle), position)
    }

    #[test]
    fn default_levels() {
        let t = AccuracyThresholds::default();
        let got: Vec<(f64, f64)> = t.levels.iter().map(|l| (l.max_translation, l.max_rotation)).collect();
        assert_eq!(got, vec![(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)]);
        assert!(t.validate().is_ok());
        let mut bad = t.clone();
        bad.levels.swap(0, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pose_error_by_construction() {
        let a = pose(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let e = pose_error(&a, &a);
        assert_eq!((e.translation, e.rotation), (0.0, 0.0));
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let delta = UnitQuaternion::from_scaled_axis(axis * 3f64.to_radians());
        let b = CameraPose::new(delta * a.rotation, a.position + Vector3::new(0.0, 0.3, 0.0));
        let e = pose_error(&b, &a);
        assert!((e.translation - 0.3).abs() < 1e-12);
        assert!((e.rotation - 3.0).abs() < 1e-9);
        let r = pose_error(&a, &b);
        assert!((r.rotation - e.rotation).abs() < 1e-12);
        let flipped = CameraPose {
            rotation: UnitQuaternion::new_unchecked(-a.rotation.into_inner()),
            ..a
        };
        assert!(pose_error(&flipped, &a).rotation < 1e-12);
    }

    #[test]
    fn ewb_examples() {
        let mut poses = HashMap::new();
        poses.insert(1, pose(Vector3::zeros(), Vector3::zeros()));
        poses.insert(2, pose(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vector3::new(2.0, 0.0, 0.0)));
        poses.insert(3, pose(Vector3::new(0.3, 0.1, 0.0), Vector3::new(7.0, 1.0, 2.0)));
        let ranked = RankedList::from_scores(vec![(1, 0.9), (2, 0.8), (3, 0.1)], 3);
        let p = ewb_pose(&ranked, &poses, 2).unwrap();
        assert!((p.position - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let (axis, angle) = p.rotation.axis_angle().unwrap();
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((axis.into_inner() - Vector3::z()).norm() < 1e-12);
        let top1 = RankedList::from_scores(vec![(3, 0.9), (1, 0.8)], 2);
        assert_eq!(ewb_pose(&top1, &poses, 1).unwrap(), poses[&3]);
        assert!(matches!(
            ewb_pose(&RankedList { entries: vec![] }, &poses, 1),
            Err(Error::EmptyRanking)
        ));
    }

    #[test]
    fn ewb_sign_alignment() {
        let base = pose(Vector3::new(0.2, -0.4, 1.0), Vector3::zeros());
        let negated = CameraPose {
            rotation: UnitQuaternion::new_unchecked(-base.rotation.into_inner()),
            position: Vector3::new(0.1, 0.0, 0.0),
        };
        let poses: HashMap<u32, CameraPose> = [(1, base), (2, negated)].into_iter().collect();
        let ranked = RankedList::from_scores(vec![(1, 0.9), (2, 0.8)], 2);
        let p = ewb_pose(&ranked, &poses, 2).unwrap();
        assert!(pose_error(&p, &base).rotation < 1e-9);
    }

    #[test]
    fn rate_counts() {
        let e = |t, r| Some(PoseError {
            translation: t,
            rotation: r,
        });
        let t = AccuracyThresholds::default();
        assert_eq!(localization_rate(&[e(0.0, 0.0)], &t), vec![100.0, 100.0, 100.0]);
        assert_eq!(localization_rate(&[e(0.3, 3.0)], &t), vec![0.0, 100.0, 100.0]);
        assert_eq!(localization_rate(&[e(0.1, 1.0), None], &t), vec![50.0, 50.0, 50.0]);
    }

    #[test]
    fn recall_examples() {
        let positions: HashMap<u32, Vector3<f64>> = [
            (0, Vector3::new(0.0, 0.0, 0.0)),
            (1, Vector3::new(100.0, 0.0, 0.0)),
            (10, Vector3::new(1.0, 0.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let r = vec![(10, RankedList::from_scores(vec![(1, 0.9), (0, 0.5)], 2))];
        assert_eq!(recall_at_k(&r, &positions, 25.0, &[1, 2]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(recall_at_k(&r, &positions, 0.5, &[1, 2]).unwrap(), vec![0.0, 0.0]);
    }
}
