//! Procedural street world: landmarks along a piecewise-linear trajectory,
//! broadside mapping cameras, perturbed query cameras, and views rendered as
//! sets of noisy local features with ground-truth landmark associations.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{look_rotation, CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::variants;

pub const ORIGINAL: &str = "original";

const STREAM_LANDMARKS: u64 = 1;
const STREAM_MAP_POSE: u64 = 2;
const STREAM_QUERY_POSE: u64 = 3;
const STREAM_RENDER: u64 = 4;
const STREAM_QUERY_SHIFT: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u32,
    pub position: Vector3<f64>,
    pub base_descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    pub keypoint: Vector2<f64>,
    pub descriptor: Vec<f64>,
    /// `None` for clutter.
    pub landmark_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub id: u32,
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
    pub features: Vec<LocalFeature>,
    pub condition: String,
}

impl ViewImage {
    pub fn is_original(&self) -> bool {
        self.condition == ORIGINAL
    }

    /// Sorted, deduplicated landmark ids observed by this view.
    pub fn landmark_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.features.iter().filter_map(|f| f.landmark_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn num_landmark_features(&self) -> usize {
        self.features
            .iter()
            .filter(|f| f.landmark_id.is_some())
            .count()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.descriptor.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingPair {
    pub a: u32,
    pub b: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub map_views: Vec<ViewImage>,
    pub query_views: Vec<ViewImage>,
    pub matching_pairs: Vec<MatchingPair>,
    pub seed: u64,
    /// Seed of the prompt set whose shifts were applied to query views.
    pub prompt_seed: u64,
    pub max_view_distance: f64,
}

impl World {
    pub fn descriptor_dim(&self) -> usize {
        self.landmarks.first().map_or(0, |l| l.base_descriptor.len())
    }

    pub fn view(&self, id: u32) -> Option<&ViewImage> {
        self.map_views
            .iter()
            .chain(self.query_views.iter())
            .find(|v| v.id == id)
    }

    pub fn map_view(&self, id: u32) -> Option<&ViewImage> {
        self.map_views
            .get(id as usize)
            .filter(|v| v.id == id)
            .or_else(|| self.map_views.iter().find(|v| v.id == id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderNoise {
    /// Pixels.
    pub keypoint_sigma: f64,
    pub descriptor_sigma: f64,
    pub clutter_count: usize,
}

impl RenderNoise {
    pub const ZERO: RenderNoise = RenderNoise {
        keypoint_sigma: 0.0,
        descriptor_sigma: 0.0,
        clutter_count: 0,
    };
}

impl Default for RenderNoise {
    fn default() -> Self {
        Self {
            keypoint_sigma: 0.5,
            descriptor_sigma: 0.05,
            clutter_count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_landmarks: usize,
    pub descriptor_dim: usize,
    pub num_map_views: usize,
    pub num_queries: usize,
    /// Street polyline in the ground plane (meters).
    pub waypoints: Vec<[f64; 2]>,
    /// Landmarks extend this far past both ends of the street.
    pub street_margin: f64,
    pub camera_height: f64,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Visibility radius (meters).
    pub max_view_distance: f64,
    pub map_heading_jitter_deg: f64,
    pub query_translation_sigma: f64,
    pub query_rotation_sigma_deg: f64,
    pub min_visible: usize,
    pub min_coobs: usize,
    pub focal: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub map_noise: RenderNoise,
    pub query_noise: RenderNoise,
    /// Prompt names applied to copies of the query views; empty disables
    /// shifted queries.
    pub query_conditions: Vec<String>,
    pub prompt_seed: u64,
    /// Replace generated queries with exact copies of the map views.
    pub queries_are_map_views: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_landmarks: 500,
            descriptor_dim: 32,
            num_map_views: 40,
            num_queries: 20,
            waypoints: vec![[0.0, 0.0], [60.0, 0.0], [100.0, -25.0]],
            street_margin: 8.0,
            camera_height: 1.5,
            lateral_min: 6.0,
            lateral_max: 14.0,
            height_min: 0.0,
            height_max: 6.0,
            max_view_distance: 30.0,
            map_heading_jitter_deg: 3.0,
            query_translation_sigma: 0.5,
            query_rotation_sigma_deg: 3.0,
            min_visible: 8,
            min_coobs: 10,
            focal: 500.0,
            image_width: 640,
            image_height: 480,
            map_noise: RenderNoise::default(),
            query_noise: RenderNoise::default(),
            query_conditions: vec!["at night".into(), "at night with rain".into()],
            prompt_seed: 0,
            queries_are_map_views: false,
        }
    }
}

impl WorldConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: self.focal,
            principal_point: [self.image_width as f64 / 2.0, self.image_height as f64 / 2.0],
            width: self.image_width,
            height: self.image_height,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::DegenerateWorld(msg.to_string()));
        if self.num_landmarks < 10 {
            return bad("num_landmarks must be at least 10");
        }
        if self.descriptor_dim < 4 {
            return bad("descriptor_dim must be at least 4");
        }
        if self.num_map_views < 2 {
            return bad("trajectory needs at least 2 map views");
        }
        if !(self.max_view_distance > 0.0) {
            return bad("visibility radius must be positive");
        }
        if self.waypoints.len() < 2 {
            return bad("street needs at least 2 waypoints");
        }
        if !self.intrinsics().is_valid() {
            return bad("invalid intrinsics");
        }
        if self.lateral_max < self.lateral_min || self.height_max < self.height_min {
            return bad("empty landmark box");
        }
        Ok(())
    }
}

/// Arc-length parameterized polyline in the ground plane.
struct Street {
    points: Vec<Vector2<f64>>,
    cumulative: Vec<f64>,
}

impl Street {
    fn new(waypoints: &[[f64; 2]]) -> Self {
        let points: Vec<Vector2<f64>> = waypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        Self { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and unit direction at arc length `s`; extrapolates past the ends.
    fn at(&self, s: f64) -> (Vector2<f64>, Vector2<f64>) {
        let last = self.points.len() - 2;
        let seg = (0..=last)
            .find(|&i| s <= self.cumulative[i + 1])
            .unwrap_or(last);
        let dir = (self.points[seg + 1] - self.points[seg]).normalize();
        (self.points[seg] + dir * (s - self.cumulative[seg]), dir)
    }
}

fn left_normal(dir: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(-dir.y, dir.x, 0.0)
}

fn yaw_rotate(v: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle) * v
}

pub fn random_unit_vector(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalizes in place; leaves an all-zero vector untouched.
pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.check()?;
    let street = Street::new(&config.waypoints);
    let length = street.length();
    if !(length > 0.0) {
        return Err(Error::DegenerateWorld("street has zero length".into()));
    }
    let intrinsics = config.intrinsics();
    let d = config.descriptor_dim;

    let mut rng = rng::stream(seed, &[STREAM_LANDMARKS]);
    let landmarks: Vec<Landmark> = (0..config.num_landmarks as u32)
        .map(|id| {
            let s = rng.random_range(-config.street_margin..=length + config.street_margin);
            let (p, dir) = street.at(s);
            let lateral = rng.random_range(config.lateral_min..=config.lateral_max);
            let height = rng.random_range(config.height_min..=config.height_max);
            let position = Vector3::new(p.x, p.y, 0.0) + left_normal(&dir) * lateral
                + Vector3::new(0.0, 0.0, height);
            Landmark {
                id,
                position,
                base_descriptor: random_unit_vector(&mut rng, d),
            }
        })
        .collect();

    let n_map = config.num_map_views;
    let heading_jitter = Normal::new(0.0, config.map_heading_jitter_deg.to_radians())
        .map_err(|e| Error::DegenerateWorld(e.to_string()))?;
    let map_poses: Vec<CameraPose> = (0..n_map)
        .map(|i| {
            let mut rng = rng::stream(seed, &[STREAM_MAP_POSE, i as u64]);
            let s = length * i as f64 / (n_map - 1) as f64;
            let (p, dir) = street.at(s);
            let forward = yaw_rotate(&left_normal(&dir), heading_jitter.sample(&mut rng));
            CameraPose::new(
                look_rotation(&forward),
                Vector3::new(p.x, p.y, config.camera_height),
            )
        })
        .collect();

    let min_visible = config.min_visible.max(4);
    let render = |id: u32, pose: &CameraPose, noise: &RenderNoise| -> Result<ViewImage> {
        let view = render_view(
            &landmarks,
            config.max_view_distance,
            pose,
            &intrinsics,
            noise,
            rng::derive_seed(seed, &[STREAM_RENDER, id as u64]),
        )
        .map_err(|_| Error::DegenerateWorld(format!("view {id} sees no landmarks")))?;
        let visible = view.num_landmark_features();
        if visible < min_visible {
            return Err(Error::DegenerateWorld(format!(
                "view {id} sees {visible} landmarks (< {min_visible})"
            )));
        }
        Ok(ViewImage { id, ..view })
    };

    let map_views = map_poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| render(i as u32, pose, &config.map_noise))
        .collect::<Result<Vec<_>>>()?;

    let mut query_views: Vec<ViewImage> = if config.queries_are_map_views {
        map_views
            .iter()
            .enumerate()
            .map(|(i, v)| ViewImage {
                id: (n_map + i) as u32,
                ..v.clone()
            })
            .collect()
    } else {
        let t_sigma = Normal::new(0.0, config.query_translation_sigma)
            .map_err(|e| Error::DegenerateWorld(e.to_string()))?;
        let r_sigma = Normal::new(0.0, config.query_rotation_sigma_deg.to_radians())
            .map_err(|e| Error::DegenerateWorld(e.to_string()))?;
        (0..config.num_queries)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, &[STREAM_QUERY_POSE, i as u64]);
                let s = rng.random_range(0.0..=length);
                let (p, dir) = street.at(s);
                let forward = yaw_rotate(&left_normal(&dir), r_sigma.sample(&mut rng));
                let tilt = UnitQuaternion::from_euler_angles(
                    r_sigma.sample(&mut rng) / 3.0,
                    r_sigma.sample(&mut rng) / 3.0,
                    0.0,
                );
                let position = Vector3::new(
                    p.x + t_sigma.sample(&mut rng),
                    p.y + t_sigma.sample(&mut rng),
                    config.camera_height + t_sigma.sample(&mut rng) / 3.0,
                );
                let pose = CameraPose::new(look_rotation(&forward) * tilt, position);
                render((n_map + i) as u32, &pose, &config.query_noise)
            })
            .collect::<Result<Vec<_>>>()?
    };

    if !config.query_conditions.is_empty() {
        let prompts = variants::default_prompt_set(d, config.prompt_seed);
        let shifts = config
            .query_conditions
            .iter()
            .map(|name| {
                prompts.get(name).ok_or_else(|| {
                    Error::Config(format!("world.query_conditions: unknown prompt {name:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let first_id = (n_map + query_views.len()) as u32;
        let shifted = query_views
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let shift = shifts[i % shifts.len()];
                let v = variants::apply_variant(
                    q,
                    shift,
                    rng::derive_seed(seed, &[STREAM_QUERY_SHIFT, q.id as u64]),
                )?;
                Ok(ViewImage {
                    id: first_id + i as u32,
                    ..v
                })
            })
            .collect::<Result<Vec<_>>>()?;
        query_views.extend(shifted);
    }

    let mut world = World {
        landmarks,
        map_views,
        query_views,
        matching_pairs: Vec::new(),
        seed,
        prompt_seed: config.prompt_seed,
        max_view_distance: config.max_view_distance,
    };
    world.matching_pairs = make_matching_pairs(&world, config.min_coobs.max(1));
    Ok(world)
}

/// Renders the landmarks visible from `pose` as noisy local features, then
/// appends clutter. The returned view has id 0 and condition "original".
pub fn render_view(
    landmarks: &[Landmark],
    max_view_distance: f64,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    noise: &RenderNoise,
    seed: u64,
) -> Result<ViewImage> {
    let mut rng = rng::stream(seed, &[]);
    let mut features = Vec::new();
    for lm in landmarks {
        let pc = pose.to_camera(&lm.position);
        if pc.norm() > max_view_distance {
            continue;
        }
        let Some(uv) = intrinsics.project_camera(&pc) else {
            continue;
        };
        if !intrinsics.contains(&uv) {
            continue;
        }
        let mut keypoint = uv;
        if noise.keypoint_sigma > 0.0 {
            keypoint.x += noise.keypoint_sigma * rng.sample::<f64, _>(StandardNormal);
            keypoint.y += noise.keypoint_sigma * rng.sample::<f64, _>(StandardNormal);
            keypoint.x = keypoint.x.clamp(0.0, intrinsics.width as f64);
            keypoint.y = keypoint.y.clamp(0.0, intrinsics.height as f64);
        }
        let mut descriptor = lm.base_descriptor.clone();
        if noise.descriptor_sigma > 0.0 {
            for x in descriptor.iter_mut() {
                *x += noise.descriptor_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            normalize_in_place(&mut descriptor);
        }
        features.push(LocalFeature {
            keypoint,
            descriptor,
            landmark_id: Some(lm.id),
        });
    }
    if features.is_empty() {
        return Err(Error::NoVisibleLandmarks);
    }
    let dim = features[0].descriptor.len();
    for _ in 0..noise.clutter_count {
        features.push(clutter_feature(&mut rng, intrinsics, dim));
    }
    Ok(ViewImage {
        id: 0,
        pose: *pose,
        intrinsics: *intrinsics,
        features,
        condition: ORIGINAL.to_string(),
    })
}

pub(crate) fn clutter_feature(
    rng: &mut StreamRng,
    intrinsics: &CameraIntrinsics,
    dim: usize,
) -> LocalFeature {
    LocalFeature {
        keypoint: Vector2::new(
            rng.random_range(0.0..=intrinsics.width as f64),
            rng.random_range(0.0..=intrinsics.height as f64),
        ),
        descriptor: random_unit_vector(rng, dim),
        landmark_id: None,
    }
}

/// Number of common elements of two sorted id lists.
pub fn sorted_intersection_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// All map-view pairs `(a, b)`, `a < b`, sharing at least `min_coobs`
/// landmarks, in lexicographic order.
pub fn make_matching_pairs(world: &World, min_coobs: usize) -> Vec<MatchingPair> {
    let ids: BTreeMap<u32, Vec<u32>> = world
        .map_views
        .iter()
        .map(|v| (v.id, v.landmark_ids()))
        .collect();
    let entries: Vec<(&u32, &Vec<u32>)> = ids.iter().collect();
    let mut pairs = Vec::new();
    for (i, (&a, la)) in entries.iter().enumerate() {
        for (&b, lb) in &entries[i + 1..] {
            let count = sorted_intersection_count(la, lb);
            if count >= min_coobs.max(1) {
                pairs.push(MatchingPair { a, b, count });
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_config() -> WorldConfig {
        WorldConfig {
            num_landmarks: 120,
            num_map_views: 5,
            num_queries: 3,
            waypoints: vec![[0.0, 0.0], [20.0, 0.0]],
            ..WorldConfig::default()
        }
    }

    #[test]
    fn too_few_landmarks_is_degenerate() {
        let cfg = WorldConfig {
            num_landmarks: 0,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg, 7), Err(Error::DegenerateWorld(_))));
    }

    #[test]
    fn sparse_world_is_degenerate() {
        let cfg = WorldConfig {
            num_landmarks: 10,
            waypoints: vec![[0.0, 0.0], [500.0, 0.0]],
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg, 7), Err(Error::DegenerateWorld(_))));
    }

    #[test]
    fn landmark_invariants() {
        let w = generate_world(&small_config(), 3).unwrap();
        for (i, lm) in w.landmarks.iter().enumerate() {
            assert_eq!(lm.id, i as u32);
            assert!((norm(&lm.base_descriptor) - 1.0).abs() < 1e-9);
        }
        for v in w.map_views.iter().chain(&w.query_views) {
            assert!(!v.features.is_empty());
            for f in &v.features {
                assert!(v.intrinsics.contains(&f.keypoint));
                assert!(f.descriptor.iter().all(|x| x.is_finite()));
                if let Some(id) = f.landmark_id {
                    assert!((id as usize) < w.landmarks.len());
                }
            }
        }
    }

    #[test]
    fn pairs_match_brute_force_on_toy_world() {
        let w = generate_world(&small_config(), 11).unwrap();
        assert_eq!(w.map_views.len(), 5);
        let mut expected = Vec::new();
        for a in &w.map_views {
            for b in &w.map_views {
                if a.id >= b.id {
                    continue;
                }
                let sa: HashSet<u32> = a.features.iter().filter_map(|f| f.landmark_id).collect();
                let sb: HashSet<u32> = b.features.iter().filter_map(|f| f.landmark_id).collect();
                let count = sa.intersection(&sb).count();
                if count >= 3 {
                    expected.push(MatchingPair { a: a.id, b: b.id, count });
                }
            }
        }
        assert!(!expected.is_empty());
        assert_eq!(make_matching_pairs(&w, 3), expected);
    }

    #[test]
    fn duplicated_view_self_overlap() {
        let mut w = generate_world(&small_config(), 5).unwrap();
        let copy = ViewImage {
            id: 99,
            ..w.map_views[2].clone()
        };
        let n = copy.num_landmark_features();
        w.map_views.push(copy);
        let pairs = make_matching_pairs(&w, 1);
        let p = pairs.iter().find(|p| p.a == 2 && p.b == 99).unwrap();
        assert_eq!(p.count, n);
    }

    #[test]
    fn disjoint_views_have_no_pair() {
        let cfg = WorldConfig {
            num_landmarks: 300,
            num_map_views: 2,
            waypoints: vec![[0.0, 0.0], [200.0, 0.0]],
            num_queries: 1,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 1).unwrap();
        assert!(make_matching_pairs(&w, 1).is_empty());
    }

    #[test]
    fn zero_noise_keypoints_are_exact_projections() {
        let w = generate_world(&small_config(), 2).unwrap();
        let pose = w.map_views[1].pose;
        let intr = w.map_views[1].intrinsics;
        let v = render_view(&w.landmarks, 30.0, &pose, &intr, &RenderNoise::ZERO, 9).unwrap();
        for f in &v.features {
            let lm = &w.landmarks[f.landmark_id.unwrap() as usize];
            let uv = intr.project(&pose, &lm.position).unwrap();
            assert!((uv - f.keypoint).norm() < 1e-9);
            assert_eq!(f.descriptor, lm.base_descriptor);
            // back-projection passes through the landmark
            let (o, dir) = pose.back_project_ray(&intr, &f.keypoint);
            let rel = lm.position - o;
            let dist = (rel - dir * rel.dot(&dir)).norm();
            assert!(dist < 1e-6, "ray misses landmark by {dist}");
        }
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let w = generate_world(&small_config(), 2).unwrap();
        // landmarks lie on the +y side; look towards -y
        let pose = CameraPose::new(
            look_rotation(&Vector3::new(0.0, -1.0, 0.0)),
            Vector3::new(10.0, 0.0, 1.5),
        );
        let r = render_view(&w.landmarks, 30.0, &pose, &CameraIntrinsics::default(), &RenderNoise::ZERO, 1);
        assert!(matches!(r, Err(Error::NoVisibleLandmarks)));
    }

    #[test]
    fn keypoint_noise_matches_configured_sigma() {
        let w = generate_world(&WorldConfig::default(), 7).unwrap();
        let noise = RenderNoise {
            keypoint_sigma: 0.5,
            descriptor_sigma: 0.0,
            clutter_count: 0,
        };
        let mut residuals = Vec::new();
        for (i, mv) in w.map_views.iter().enumerate() {
            let v = render_view(&w.landmarks, 30.0, &mv.pose, &mv.intrinsics, &noise, 100 + i as u64).unwrap();
            for f in &v.features {
                let lm = &w.landmarks[f.landmark_id.unwrap() as usize];
                let uv = mv.intrinsics.project(&mv.pose, &lm.position).unwrap();
                // skip features clamped at the border
                if f.keypoint.x <= 0.0
                    || f.keypoint.y <= 0.0
                    || f.keypoint.x >= 640.0
                    || f.keypoint.y >= 480.0
                {
                    continue;
                }
                residuals.push(f.keypoint.x - uv.x);
                residuals.push(f.keypoint.y - uv.y);
            }
        }
        assert!(residuals.len() >= 1000);
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.5).abs() < 0.1, "empirical std {std}");
    }

    #[test]
    fn every_map_view_sees_enough() {
        let cfg = WorldConfig::default();
        let w = generate_world(&cfg, 7).unwrap();
        assert_eq!(w.map_views.len(), 40);
        assert_eq!(w.query_views.len(), 40);
        for v in &w.map_views {
            assert!(v.num_landmark_features() >= cfg.min_visible);
        }
        for p in &w.matching_pairs {
            assert!(p.a < p.b);
        }
    }
}
