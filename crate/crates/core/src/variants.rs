//! Simulated text-prompted image editing: each prompt is a fixed translation
//! in descriptor space plus noise, feature dropout and clutter. Keypoints are
//! left untouched so a variant is related to its source by the identity
//! transformation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::worldgen::{clutter_feature, normalize_in_place, random_unit_vector, ViewImage, World};

/// The eleven prompts of the default set, in order.
pub const DEFAULT_PROMPTS: [&str; 11] = [
    "at dawn",
    "at dusk",
    "at noon",
    "at sunset",
    "in winter",
    "in summer",
    "with rain",
    "with snow",
    "with sun",
    "at night with rain",
    "at night",
];

// (bias_gain, descriptor_noise_sigma, dropout_rate, clutter_rate), index-aligned
// with DEFAULT_PROMPTS. Night prompts are the most severe.
const SEVERITY: [(f64, f64, f64, f64); 11] = [
    (0.50, 0.04, 0.20, 0.08),
    (0.50, 0.04, 0.20, 0.08),
    (0.20, 0.02, 0.05, 0.04),
    (0.60, 0.05, 0.30, 0.08),
    (0.45, 0.04, 0.20, 0.10),
    (0.25, 0.03, 0.08, 0.04),
    (0.50, 0.05, 0.25, 0.10),
    (0.55, 0.05, 0.25, 0.10),
    (0.30, 0.03, 0.10, 0.04),
    (1.10, 0.06, 0.40, 0.12),
    (1.00, 0.05, 0.35, 0.10),
];

#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub name: String,
    /// Unit direction shared by every image edited with this prompt.
    pub descriptor_bias: Vec<f64>,
    pub bias_gain: f64,
    pub descriptor_noise_sigma: f64,
    pub dropout_rate: f64,
    pub clutter_rate: f64,
    /// Failure injection; zero keeps keypoints bit-identical.
    pub keypoint_corruption_sigma: f64,
}

impl DomainShift {
    /// A shift that changes nothing but the condition label.
    pub fn identity(name: &str, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            descriptor_bias: vec![0.0; dim],
            bias_gain: 0.0,
            descriptor_noise_sigma: 0.0,
            dropout_rate: 0.0,
            clutter_rate: 0.0,
            keypoint_corruption_sigma: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.dropout_rate)
            && self.clutter_rate >= 0.0
            && self.descriptor_noise_sigma >= 0.0
            && self.keypoint_corruption_sigma >= 0.0
    }

    /// Directory-safe form of the prompt name.
    pub fn slug(&self) -> String {
        slug(&self.name)
    }
}

pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub shifts: Vec<DomainShift>,
}

impl PromptSet {
    pub fn new(shifts: Vec<DomainShift>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &shifts {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate prompt {:?}", s.name)));
            }
            if !s.is_valid() {
                return Err(Error::Config(format!("invalid parameters for prompt {:?}", s.name)));
            }
        }
        Ok(Self { shifts })
    }

    pub fn get(&self, name: &str) -> Option<&DomainShift> {
        self.shifts.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.shifts.iter().map(|s| s.name.as_str()).collect()
    }
}

pub fn default_prompt_set(dim: usize, seed: u64) -> PromptSet {
    let shifts = DEFAULT_PROMPTS
        .iter()
        .zip(SEVERITY.iter())
        .map(|(name, &(gain, noise, dropout, clutter))| {
            let mut rng = rng::stream(seed, &[rng::str_key(name)]);
            DomainShift {
                name: name.to_string(),
                descriptor_bias: random_unit_vector(&mut rng, dim),
                bias_gain: gain,
                descriptor_noise_sigma: noise,
                dropout_rate: dropout,
                clutter_rate: clutter,
                keypoint_corruption_sigma: 0.0,
            }
        })
        .collect();
    PromptSet { shifts }
}

pub fn apply_variant(view: &ViewImage, shift: &DomainShift, seed: u64) -> Result<ViewImage> {
    if !view.is_original() {
        return Err(Error::AlreadySynthetic(view.id, view.condition.clone()));
    }
    let mut rng = rng::stream(seed, &[view.id as u64, rng::str_key(&shift.name)]);
    let mut features = Vec::with_capacity(view.features.len());
    for f in &view.features {
        // one draw per feature keeps streams aligned across dropout rates
        let u: f64 = rng.random();
        if u < shift.dropout_rate {
            continue;
        }
        let mut out = f.clone();
        let touched = shift.bias_gain != 0.0 || shift.descriptor_noise_sigma > 0.0;
        if touched {
            for (x, b) in out.descriptor.iter_mut().zip(&shift.descriptor_bias) {
                *x += shift.bias_gain * b;
            }
            if shift.descriptor_noise_sigma > 0.0 {
                for x in out.descriptor.iter_mut() {
                    *x += shift.descriptor_noise_sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            normalize_in_place(&mut out.descriptor);
        }
        if shift.keypoint_corruption_sigma > 0.0 {
            let intr = &view.intrinsics;
            out.keypoint.x = (out.keypoint.x
                + shift.keypoint_corruption_sigma * rng.sample::<f64, _>(StandardNormal))
            .clamp(0.0, intr.width as f64);
            out.keypoint.y = (out.keypoint.y
                + shift.keypoint_corruption_sigma * rng.sample::<f64, _>(StandardNormal))
            .clamp(0.0, intr.height as f64);
        }
        features.push(out);
    }
    let clutter = (shift.clutter_rate * view.features.len() as f64).ceil() as usize;
    let dim = view.descriptor_dim();
    for _ in 0..clutter {
        features.push(clutter_feature(&mut rng, &view.intrinsics, dim));
    }
    Ok(ViewImage {
        id: view.id,
        pose: view.pose,
        intrinsics: view.intrinsics,
        features,
        condition: shift.name.clone(),
    })
}

/// Variant store keyed by `(view_id, prompt name)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariantStore {
    pub by_view: BTreeMap<u32, Vec<ViewImage>>,
}

impl VariantStore {
    pub fn get(&self, view_id: u32, prompt: &str) -> Option<&ViewImage> {
        self.by_view
            .get(&view_id)?
            .iter()
            .find(|v| v.condition == prompt)
    }

    pub fn len(&self) -> usize {
        self.by_view.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One variant per (map view, prompt), generated in parallel with streams
/// keyed by view and prompt.
pub fn generate_all_variants(world: &World, prompts: &PromptSet, seed: u64) -> Result<VariantStore> {
    let per_view = world
        .map_views
        .par_iter()
        .map(|v| {
            let list = prompts
                .shifts
                .iter()
                .map(|s| apply_variant(v, s, seed))
                .collect::<Result<Vec<_>>>()?;
            Ok((v.id, list))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VariantStore {
        by_view: per_view.into_iter().collect(),
    })
}
