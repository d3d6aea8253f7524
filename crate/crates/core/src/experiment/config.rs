//! Experiment configuration: one TOML file with nested sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{SamplingMode, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::geometry::{MatchParams, Threshold};
use crate::index::{AsmkParams, Backend};
use crate::localize::{AccuracyThresholds, RansacParams, DEFAULT_RECALL_RADIUS};
use crate::worldgen::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub backend: Backend,
    pub asmk: AsmkParams,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            backend: Backend::GlobalCosine,
            asmk: AsmkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Shortlist sizes for both protocols.
    pub ks: Vec<usize>,
    pub thresholds: AccuracyThresholds,
    pub recall_radius: f64,
    pub recall_ks: Vec<usize>,
    pub ransac: RansacParams,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            thresholds: AccuracyThresholds::default(),
            recall_radius: DEFAULT_RECALL_RADIUS,
            recall_ks: vec![1, 5, 10],
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    SyntheticUniform,
    SyntheticFiltered,
    SyntheticFilteredGeometry,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline,
        Method::SyntheticUniform,
        Method::SyntheticFiltered,
        Method::SyntheticFilteredGeometry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::SyntheticUniform => "synthetic_uniform",
            Method::SyntheticFiltered => "synthetic_filtered",
            Method::SyntheticFilteredGeometry => "synthetic_filtered_geometry",
        }
    }

    /// The train config of this grid row; synthetic rows keep the base mode
    /// unless it is the baseline.
    pub fn apply(self, base: &TrainConfig, tau: f64) -> TrainConfig {
        let synth_mode = if base.mode == TrainMode::Baseline {
            TrainMode::MultiK
        } else {
            base.mode
        };
        let mut cfg = base.clone();
        match self {
            Method::Baseline => cfg.mode = TrainMode::Baseline,
            Method::SyntheticUniform => {
                cfg.mode = synth_mode;
                cfg.threshold.value = 0.0;
                cfg.sampling = SamplingMode::Uniform;
            }
            Method::SyntheticFiltered => {
                cfg.mode = synth_mode;
                cfg.threshold.value = tau;
                cfg.sampling = SamplingMode::Uniform;
            }
            Method::SyntheticFilteredGeometry => {
                cfg.mode = synth_mode;
                cfg.threshold.value = tau;
                cfg.sampling = SamplingMode::GeometryAware;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub methods: Vec<Method>,
    /// Validation threshold of the filtered rows (same mode as
    /// `train.threshold`).
    pub tau: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            tau: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// World, variant, codebook and RANSAC seed.
    pub seed: u64,
    /// Training seeds; one model per seed.
    pub seeds: Vec<u64>,
    pub world: WorldConfig,
    pub matching: MatchParams,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub evaluation: EvaluationConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![1, 2, 3, 4, 5],
            world: WorldConfig {
                min_coobs: 20,
                ..WorldConfig::default()
            },
            matching: MatchParams::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            evaluation: EvaluationConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.evaluation.ks.is_empty() || self.evaluation.ks.contains(&0) {
            return Err(Error::Config("evaluation.ks must be non-empty and positive".into()));
        }
        if self.evaluation.recall_ks.contains(&0) {
            return Err(Error::Config("evaluation.recall_ks must be positive".into()));
        }
        if !(self.evaluation.recall_radius > 0.0) {
            return Err(Error::Config("evaluation.recall_radius must be positive".into()));
        }
        if !(self.matching.ratio > 0.0 && self.matching.ratio <= 1.0) || self.matching.pixel_tol < 0.0 {
            return Err(Error::Config("matching.ratio must lie in (0, 1] and pixel_tol be >= 0".into()));
        }
        if self.retrieval.asmk.codebook_size == 0 {
            return Err(Error::Config("retrieval.asmk.codebook_size must be positive".into()));
        }
        if self.ablation.methods.is_empty() {
            return Err(Error::Config("ablation.methods must not be empty".into()));
        }
        self.evaluation.thresholds.validate()?;
        self.train.validate()?;
        for m in &self.ablation.methods {
            m.apply(&self.train, self.ablation.tau).validate()?;
        }
        Ok(())
    }

    pub fn threshold(&self) -> Threshold {
        self.train.threshold
    }

    /// The defaults as TOML with a comment above every key.
    pub fn reference() -> String {
        let text = toml::to_string_pretty(&Self::default()).expect("default config serializes");
        let mut out = String::from("# Reference configuration; every value shown is the default.\n\n");
        let mut section = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') {
                section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
                if let Some(doc) = doc_for(&section, "") {
                    out.push_str(&format!("# {doc}\n"));
                }
            } else if let Some((key, _)) = trimmed.split_once(" = ") {
                if let Some(doc) = doc_for(&section, key) {
                    out.push_str(&format!("# {doc}\n"));
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

fn doc_for(section: &str, key: &str) -> Option<&'static str> {
    Some(match (section, key) {
        ("", "seed") => "World, variant, codebook and RANSAC seed (overridden by --seed).",
        ("", "seeds") => "Training seeds; the train stage writes one model per seed plus their average.",
        ("world", "") => "Synthetic street world.",
        ("world", "num_landmarks") => "Landmarks scattered along the left side of the street.",
        ("world", "descriptor_dim") => "Local descriptor dimension d.",
        ("world", "num_map_views") => "Map cameras evenly spaced along the street.",
        ("world", "num_queries") => "Clean query cameras; shifted copies are added per query_conditions.",
        ("world", "waypoints") => "Street polyline in the ground plane, meters.",
        ("world", "street_margin") => "Landmarks extend this far past both street ends, meters.",
        ("world", "camera_height") => "Camera height above ground, meters.",
        ("world", "lateral_min") => "Landmark distance from the street center line, meters (min).",
        ("world", "lateral_max") => "Landmark distance from the street center line, meters (max).",
        ("world", "height_min") => "Landmark height, meters (min).",
        ("world", "height_max") => "Landmark height, meters (max).",
        ("world", "max_view_distance") => "Visibility radius, meters.",
        ("world", "map_heading_jitter_deg") => "Gaussian yaw jitter of map cameras, degrees.",
        ("world", "query_translation_sigma") => "Gaussian position jitter of query cameras, meters.",
        ("world", "query_rotation_sigma_deg") => "Gaussian yaw jitter of query cameras, degrees (tilt uses a third).",
        ("world", "min_visible") => "Every view must see at least this many landmarks.",
        ("world", "min_coobs") => "Co-observed landmarks needed for a matching pair.",
        ("world", "focal") => "Focal length, pixels.",
        ("world", "image_width") => "Image width, pixels.",
        ("world", "image_height") => "Image height, pixels.",
        ("world", "query_conditions") => "Prompts applied to copies of the clean queries, cycled.",
        ("world", "prompt_seed") => "Seed of the prompt set (bias directions) shared by queries and variants.",
        ("world", "queries_are_map_views") => "Use exact copies of the map views as queries.",
        ("world.map_noise", "") => "Rendering noise of map views.",
        ("world.query_noise", "") => "Rendering noise of query views.",
        (_, "keypoint_sigma") => "Keypoint noise, pixels.",
        (_, "descriptor_sigma") => "Descriptor noise before normalization.",
        (_, "clutter_count") => "Clutter features without a landmark.",
        ("matching", "") => "Mutual nearest-neighbour matching and identity verification.",
        ("matching", "ratio") => "Symmetric Lowe ratio on descriptor distances.",
        ("matching", "pixel_tol") => "Keypoint agreement tolerance under the identity transform, pixels.",
        ("train", "") => "Training of the linear embedding.",
        ("train", "embedding_dim") => "Embedding dimension e (<= d).",
        ("train", "margin") => "Contrastive margin on squared distances.",
        ("train", "learning_rate") => "Peak step size of the cosine schedule.",
        ("train", "weight_decay") => "Decoupled weight decay.",
        ("train", "episodes") => "Training episodes.",
        ("train", "pairs_per_episode") => "Query-positive pairs per episode.",
        ("train", "negative_pool_size") => "Pool size for hard negative mining (capped at the map size).",
        ("train", "negatives") => "Negatives per tuple (M).",
        ("train", "batch_size") => "Training units per gradient step.",
        ("train", "mode") => "baseline | swap_pi | multi_k | aggregated_k.",
        ("train", "pi") => "swap_pi: probability of using a synthetic tuple.",
        ("train", "k_synthetic") => "multi_k / aggregated_k: synthetic tuples per unit (K).",
        ("train", "sampling") => "uniform | geometry_aware (probability proportional to 1/s).",
        ("train", "seed") => "Replaced by each entry of seeds.",
        ("train", "multi_weight_negatives") => "multi_k: also scale hinge terms by the tuple weight.",
        ("train", "multi_negative_cap") => "multi_k: keep at most this many negatives in synthetic tuples (0 keeps all).",
        ("train.threshold", "") => "Pair validation; a value of 0 accepts every synthetic pair.",
        ("train.threshold", "mode") => "relative (on the score) | absolute (on kept correspondences).",
        ("train.threshold", "value") => "Minimum score or kept count.",
        ("retrieval", "") => "Retrieval backend.",
        ("retrieval", "backend") => "global_cosine | asmk.",
        ("retrieval.asmk", "") => "Selective match kernel.",
        ("retrieval.asmk", "codebook_size") => "Codebook cells, trained on projected map features.",
        ("retrieval.asmk", "iterations") => "k-means iterations.",
        ("retrieval.asmk", "alpha") => "Selectivity exponent.",
        ("retrieval.asmk", "sel_threshold") => "Similarities below this contribute nothing.",
        ("evaluation", "") => "Localization and place recognition metrics.",
        ("evaluation", "ks") => "Shortlist sizes for EWB and Global-SfM.",
        ("evaluation", "recall_radius") => "Place recognition radius, meters.",
        ("evaluation", "recall_ks") => "k values of recall@k.",
        ("evaluation.ransac", "") => "PnP + RANSAC.",
        ("evaluation.ransac", "iterations") => "RANSAC iterations.",
        ("evaluation.ransac", "inlier_px") => "Inlier reprojection error, pixels.",
        ("evaluation.ransac", "min_inliers") => "Minimum inliers for a pose.",
        ("evaluation.ransac", "seed") => "Combined with the experiment seed and the query id.",
        ("evaluation.thresholds", "") => "Accuracy levels, strictest first.",
        ("evaluation.thresholds.levels", "") => {
            "Level name, max translation (m) and max rotation (deg)."
        }
        ("ablation", "") => "Ablation grid.",
        ("ablation", "methods") => {
            "Rows: baseline | synthetic_uniform | synthetic_filtered | synthetic_filtered_geometry."
        }
        ("ablation", "tau") => "Threshold of the filtered rows.",
        _ => return None,
    })
}
