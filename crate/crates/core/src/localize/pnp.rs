//! Camera pose from 2D-3D correspondences: linear DLT on normalized image
//! coordinates inside a RANSAC loop.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Reprojection error bound (pixels).
    pub inlier_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_px: 3.0,
            min_inliers: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2d3d {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

/// Direct linear transform on at least six correspondences, followed by
/// projection of the left 3x3 block onto the nearest rotation.
pub fn dlt_pose(corr: &[Correspondence2d3d], intrinsics: &CameraIntrinsics) -> Result<CameraPose> {
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences(corr.len()));
    }
    let n = corr.len();
    let centroid = corr.iter().fold(Vector3::zeros(), |acc, c| acc + c.point) / n as f64;
    let mean_dist = corr.iter().map(|c| (c.point - centroid).norm()).sum::<f64>() / n as f64;
    let scale = if mean_dist > 0.0 { 3f64.sqrt() / mean_dist } else { 1.0 };

    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, c) in corr.iter().enumerate() {
        let x = intrinsics.normalize(&c.pixel);
        let p = (c.point - centroid) * scale;
        let h = [p.x, p.y, p.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -x.x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -x.y * h[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InsufficientCorrespondences(n))?;
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap();
    let h = v_t.row(smallest);
    // P' = [M' | t'] acts on normalized points; undo the normalization
    let m = Matrix3::new(h[0], h[1], h[2], h[4], h[5], h[6], h[8], h[9], h[10]) * scale;
    let t_norm = Vector3::new(h[3], h[7], h[11]);
    let mut t = t_norm - m * centroid;
    let mut m = m;
    if m.determinant() < 0.0 {
        m = -m;
        t = -t;
    }
    let msvd = m.svd(true, true);
    let (u, vt) = (msvd.u.unwrap(), msvd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    let lambda = msvd.singular_values.sum() / 3.0;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InsufficientCorrespondences(n));
    }
    Ok(CameraPose::from_world_to_camera(&r, &(t / lambda)))
}

/// Pixel reprojection error; infinite for points behind the camera.
pub fn reprojection_error(pose: &CameraPose, intrinsics: &CameraIntrinsics, c: &Correspondence2d3d) -> f64 {
    match intrinsics.project(pose, &c.point) {
        Some(uv) => (uv - c.pixel).norm(),
        None => f64::INFINITY,
    }
}

fn inliers_of(pose: &CameraPose, intrinsics: &CameraIntrinsics, corr: &[Correspondence2d3d], px: f64) -> Vec<usize> {
    corr.iter()
        .enumerate()
        .filter(|(_, c)| reprojection_error(pose, intrinsics, c) <= px)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC over six-point DLT hypotheses with a final refit on the inliers.
/// Returns the pose and ascending inlier indices.
pub fn pnp_ransac(
    corr: &[Correspondence2d3d],
    intrinsics: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<(CameraPose, Vec<usize>)> {
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences(corr.len()));
    }
    let mut rng = rng::stream(params.seed, &[0x9a9]);
    let mut best: Vec<usize> = Vec::new();
    let mut sample = Vec::with_capacity(MIN_CORRESPONDENCES);
    for _ in 0..params.iterations {
        sample.clear();
        sample.extend(
            index::sample(&mut rng, corr.len(), MIN_CORRESPONDENCES)
                .into_iter()
                .map(|i| corr[i]),
        );
        let Ok(pose) = dlt_pose(&sample, intrinsics) else {
            continue;
        };
        let inliers = inliers_of(&pose, intrinsics, corr, params.inlier_px);
        if inliers.len() > best.len() {
            best = inliers;
            if best.len() == corr.len() {
                break;
            }
        }
    }
    let required = params.min_inliers.max(MIN_CORRESPONDENCES);
    if best.len() < required {
        return Err(Error::NoConsensus {
            inliers: best.len(),
            required,
        });
    }
    // refit until the inlier set settles
    let mut pose = dlt_pose(&best.iter().map(|&i| corr[i]).collect::<Vec<_>>(), intrinsics)?;
    for _ in 0..3 {
        let refreshed = inliers_of(&pose, intrinsics, corr, params.inlier_px);
        if refreshed == best || refreshed.len() < required {
            break;
        }
        best = refreshed;
        pose = dlt_pose(&best.iter().map(|&i| corr[i]).collect::<Vec<_>>(), intrinsics)?;
    }
    let inliers = inliers_of(&pose, intrinsics, corr, params.inlier_px);
    if inliers.len() < required {
        return Err(Error::NoConsensus {
            inliers: inliers.len(),
            required,
        });
    }
    Ok((pose, inliers))
}
