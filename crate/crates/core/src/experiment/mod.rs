//! Pipeline stages behind the command-line verbs, and the ablation grid.
//!
//! Every stage reads its inputs from and writes its outputs to CSV
//! directories; the in-memory helpers are shared with the ablation runner.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{AblationConfig, EvaluationConfig, ExperimentConfig, Method, RetrievalConfig};

use crate::embed::{average_models, train, EmbeddingModel, SyntheticData, TrainConfig, TrainMode, TrainOutcome};
use crate::error::{Error, Result};
use crate::geometry::{score_all_pairs, ScoreTable};
use crate::index::{Backend, Index, RankedList};
use crate::io;
use crate::localize::{ewb_pose, localization_rate, pose_error, recall_at_k, sfm_localize, PoseError, RansacParams};
use crate::rng;
use crate::variants::{default_prompt_set, generate_all_variants, PromptSet, VariantStore};
use crate::worldgen::{generate_world, World};

const STREAM_VARIANTS: u64 = 21;
const STREAM_CODEBOOK: u64 = 22;
const STREAM_RANSAC: u64 = 23;

pub const MODEL_AVG: &str = "model_avg.csv";
pub const TRACE: &str = "trace.csv";
pub const RANKINGS: &str = "rankings.csv";
pub const LOCALIZATION: &str = "localization.csv";
pub const SUMMARY: &str = "summary.csv";
pub const RECALL: &str = "recall.csv";
pub const ABLATION: &str = "ablation.csv";

pub fn model_file(seed: u64) -> String {
    format!("model_seed{seed}.csv")
}

pub fn cmd_worldgen(cfg: &ExperimentConfig, out: &Path) -> Result<World> {
    let world = generate_world(&cfg.world, cfg.seed)?;
    io::write_world(out, &world)?;
    Ok(world)
}

/// Prompt set, variants of every map view, and consistency scores of every
/// oriented matching pair.
pub fn make_variants(cfg: &ExperimentConfig, world: &World) -> Result<(PromptSet, VariantStore, ScoreTable)> {
    let prompts = default_prompt_set(world.descriptor_dim(), world.prompt_seed);
    let variants = generate_all_variants(world, &prompts, rng::derive_seed(cfg.seed, &[STREAM_VARIANTS]))?;
    let scores = score_all_pairs(world, &variants, &prompts, &cfg.matching)?;
    Ok((prompts, variants, scores))
}

pub fn cmd_variants(
    cfg: &ExperimentConfig,
    world_dir: &Path,
    out: &Path,
) -> Result<(PromptSet, VariantStore, ScoreTable)> {
    let world = io::read_world(world_dir)?;
    let (prompts, variants, scores) = make_variants(cfg, &world)?;
    io::write_variants(out, &prompts, &variants)?;
    io::write_scores(&out.join(io::CONSISTENCY), &scores, &cfg.threshold())?;
    Ok((prompts, variants, scores))
}

/// One model per seed, in seed order.
pub fn train_seeds(
    world: &World,
    synthetic: Option<SyntheticData<'_>>,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<(u64, TrainOutcome)>> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            Ok((seed, train(world, synthetic, &cfg)?))
        })
        .collect()
}

fn write_training(out: &Path, runs: &[(u64, TrainOutcome)]) -> Result<EmbeddingModel> {
    io::ensure_dir(out)?;
    for (seed, run) in runs {
        io::write_model(&out.join(model_file(*seed)), &run.model)?;
    }
    let models: Vec<EmbeddingModel> = runs.iter().map(|(_, r)| r.model.clone()).collect();
    let avg = average_models(&models)?;
    io::write_model(&out.join(MODEL_AVG), &avg)?;
    let traces: Vec<(u64, _)> = runs.iter().map(|(s, r)| (*s, r.trace.clone())).collect();
    io::write_trace(&out.join(TRACE), &traces)?;
    Ok(avg)
}

/// Trains one model per configured seed and their average. The baseline
/// never touches `variants_dir`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    world_dir: &Path,
    variants_dir: Option<&Path>,
    out: &Path,
) -> Result<Vec<(u64, TrainOutcome)>> {
    let world = io::read_world(world_dir)?;
    let runs = if cfg.train.mode == TrainMode::Baseline {
        train_seeds(&world, None, &cfg.train, &cfg.seeds)?
    } else {
        let dir = variants_dir
            .ok_or_else(|| Error::Config(format!("train.mode {:?} needs a variants directory", cfg.train.mode)))?;
        let (prompts, variants) = io::read_variants(dir, &world)?;
        let scores = io::read_scores(&dir.join(io::CONSISTENCY))?;
        let names: Vec<String> = prompts.names().iter().map(|s| s.to_string()).collect();
        let data = SyntheticData {
            variants: &variants,
            scores: &scores,
            prompts: &names,
        };
        train_seeds(&world, Some(data), &cfg.train, &cfg.seeds)?
    };
    write_training(out, &runs)?;
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Ewb,
    Sfm,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ewb => "ewb",
            Protocol::Sfm => "sfm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRecord {
    pub query_id: u32,
    pub condition: String,
    pub protocol: Protocol,
    pub k: usize,
    pub error: Option<PoseError>,
    pub status: String,
}

/// Query groups of the reports: clean queries, shifted queries, all.
pub const GROUPS: [&str; 3] = ["clean", "shifted", "all"];

fn in_group(condition: &str, group: &str) -> bool {
    match group {
        "clean" => condition == crate::worldgen::ORIGINAL,
        "shifted" => condition != crate::worldgen::ORIGINAL,
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub protocol: Protocol,
    pub k: usize,
    /// Percent localized per accuracy level.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub group: String,
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rankings: Vec<(u32, RankedList)>,
    pub records: Vec<LocalizationRecord>,
    pub summary: Vec<SummaryRow>,
    pub recall: Vec<RecallRow>,
}

fn status_of(err: &Error) -> &'static str {
    match err {
        Error::NoConsensus { .. } => "no_consensus",
        Error::InsufficientCorrespondences(_) => "insufficient_correspondences",
        Error::EmptyRanking => "empty_ranking",
        _ => "error",
    }
}

/// Summary rows from localization records, in group, protocol, k order;
/// groups without queries are skipped.
pub fn summarize(records: &[LocalizationRecord], cfg: &EvaluationConfig) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for group in GROUPS {
        for protocol in [Protocol::Ewb, Protocol::Sfm] {
            for &k in &cfg.ks {
                let errors: Vec<Option<PoseError>> = records
                    .iter()
                    .filter(|r| r.protocol == protocol && r.k == k && in_group(&r.condition, group))
                    .map(|r| r.error)
                    .collect();
                if errors.is_empty() {
                    continue;
                }
                rows.push(SummaryRow {
                    group: group.to_string(),
                    protocol,
                    k,
                    rates: localization_rate(&errors, &cfg.thresholds),
                });
            }
        }
    }
    rows
}

/// Retrieval for every query, both localization protocols for every k, and
/// recall@k.
pub fn evaluate_model(cfg: &ExperimentConfig, world: &World, model: &EmbeddingModel) -> Result<Evaluation> {
    let eval = &cfg.evaluation;
    let index = match cfg.retrieval.backend {
        Backend::GlobalCosine => Index::global(&world.map_views, model),
        Backend::Asmk => Index::build(
            &world.map_views,
            model,
            cfg.retrieval.asmk,
            rng::derive_seed(cfg.seed, &[STREAM_CODEBOOK]),
        )?,
    };
    let depth = eval
        .ks
        .iter()
        .chain(&eval.recall_ks)
        .copied()
        .max()
        .unwrap_or(1);
    let poses: HashMap<u32, _> = world.map_views.iter().map(|v| (v.id, v.pose)).collect();
    let map: HashMap<u32, _> = world.map_views.iter().map(|v| (v.id, v)).collect();
    let landmarks: HashMap<u32, _> = world.landmarks.iter().map(|l| (l.id, l)).collect();

    let per_query = world
        .query_views
        .par_iter()
        .map(|q| {
            let ranked = index.retrieve(q, model, cfg.retrieval.backend, depth)?;
            let mut records = Vec::new();
            for &k in &eval.ks {
                let record = |protocol, est: Result<_>| {
                    let (error, status) = match est {
                        Ok(pose) => (Some(pose_error(&pose, &q.pose)), "ok".to_string()),
                        Err(e) => (None, status_of(&e).to_string()),
                    };
                    LocalizationRecord {
                        query_id: q.id,
                        condition: q.condition.clone(),
                        protocol,
                        k,
                        error,
                        status,
                    }
                };
                records.push(record(Protocol::Ewb, ewb_pose(&ranked, &poses, k)));
                let ransac = RansacParams {
                    seed: rng::derive_seed(cfg.seed, &[STREAM_RANSAC, eval.ransac.seed, q.id as u64, k as u64]),
                    ..eval.ransac
                };
                let sfm = sfm_localize(q, &ranked, &map, &landmarks, model, k, &cfg.matching, &ransac);
                records.push(record(Protocol::Sfm, sfm));
            }
            Ok(((q.id, ranked), records))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rankings = Vec::with_capacity(per_query.len());
    let mut records = Vec::new();
    for (r, recs) in per_query {
        rankings.push(r);
        records.extend(recs);
    }
    let summary = summarize(&records, eval);

    let positions: HashMap<u32, _> = world
        .map_views
        .iter()
        .chain(&world.query_views)
        .map(|v| (v.id, v.pose.position))
        .collect();
    let mut recall = Vec::new();
    if !eval.recall_ks.is_empty() {
        for group in GROUPS {
            let subset: Vec<(u32, RankedList)> = rankings
                .iter()
                .filter(|(id, _)| world.view(*id).is_some_and(|v| in_group(&v.condition, group)))
                .cloned()
                .collect();
            if subset.is_empty() {
                continue;
            }
            let values = recall_at_k(&subset, &positions, eval.recall_radius, &eval.recall_ks)?;
            recall.extend(eval.recall_ks.iter().zip(values).map(|(&k, recall)| RecallRow {
                group: group.to_string(),
                k,
                recall,
            }));
        }
    }
    Ok(Evaluation {
        rankings,
        records,
        summary,
        recall,
    })
}

fn level_columns(cfg: &EvaluationConfig) -> Vec<String> {
    cfg.thresholds.levels.iter().map(|l| format!("pct_{}", l.name)).collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow], cfg: &EvaluationConfig) -> Result<()> {
    let header: Vec<String> = ["condition", "protocol", "k"]
        .iter()
        .map(|s| s.to_string())
        .chain(level_columns(cfg))
        .collect();
    io::write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            [r.group.clone(), r.protocol.name().to_string(), r.k.to_string()]
                .into_iter()
                .chain(r.rates.iter().map(|x| io::fmt_fixed(*x, 2)))
                .collect::<Vec<_>>()
        }),
    )
}

pub fn write_evaluation(out: &Path, ev: &Evaluation, cfg: &EvaluationConfig) -> Result<()> {
    io::ensure_dir(out)?;
    io::write_rankings(&out.join(RANKINGS), &ev.rankings)?;
    io::write_csv(
        &out.join(LOCALIZATION),
        &["query_id", "condition", "protocol", "k", "tx_err_m", "rot_err_deg", "status"].map(String::from),
        ev.records.iter().map(|r| {
            let (t, rot) = r
                .error
                .map_or((String::new(), String::new()), |e| (io::fmt(e.translation), io::fmt(e.rotation)));
            [
                r.query_id.to_string(),
                r.condition.clone(),
                r.protocol.name().to_string(),
                r.k.to_string(),
                t,
                rot,
                r.status.clone(),
            ]
        }),
    )?;
    write_summary(&out.join(SUMMARY), &ev.summary, cfg)?;
    io::write_csv(
        &out.join(RECALL),
        &["condition", "k", "recall"].map(String::from),
        ev.recall
            .iter()
            .map(|r| [r.group.clone(), r.k.to_string(), io::fmt_fixed(r.recall, 6)]),
    )
}

/// Reads `localization.csv` back into records.
pub fn read_localization(path: &Path) -> Result<Vec<LocalizationRecord>> {
    let (_, rows) = io::read_csv(path)?;
    rows.iter()
        .map(|r| {
            if r.len() != 7 {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    msg: "localization rows have seven fields".into(),
                });
            }
            let bad = |what: &str| Error::Data {
                path: path.to_path_buf(),
                msg: format!("cannot parse {what}"),
            };
            let protocol = match r[2].as_str() {
                "ewb" => Protocol::Ewb,
                "sfm" => Protocol::Sfm,
                _ => return Err(bad("protocol")),
            };
            let error = if r[4].is_empty() {
                None
            } else {
                Some(PoseError {
                    translation: r[4].parse().map_err(|_| bad("tx_err_m"))?,
                    rotation: r[5].parse().map_err(|_| bad("rot_err_deg"))?,
                })
            };
            Ok(LocalizationRecord {
                query_id: r[0].parse().map_err(|_| bad("query_id"))?,
                condition: r[1].clone(),
                protocol,
                k: r[3].parse().map_err(|_| bad("k"))?,
                error,
                status: r[6].clone(),
            })
        })
        .collect()
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, world_dir: &Path, model_path: &Path, out: &Path) -> Result<Evaluation> {
    let world = io::read_world(world_dir)?;
    let model = io::read_model(model_path)?;
    if model.descriptor_dim() != world.descriptor_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects d={}, world has d={}",
            model.descriptor_dim(),
            world.descriptor_dim()
        )));
    }
    let ev = evaluate_model(cfg, &world, &model)?;
    write_evaluation(out, &ev, &cfg.evaluation)?;
    Ok(ev)
}

/// Per-seed values of one (method, condition, protocol, k, level) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub method: Method,
    pub group: String,
    pub protocol: Protocol,
    pub k: usize,
    pub level: String,
    pub values: Vec<f64>,
}

impl AblationCell {
    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, method: Method, group: &str, protocol: Protocol, k: usize, level: &str) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.group == group && c.protocol == protocol && c.k == k && c.level == level)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let baseline: HashMap<(String, Protocol, usize, String), f64> = self
            .cells
            .iter()
            .filter(|c| c.method == Method::Baseline)
            .map(|c| ((c.group.clone(), c.protocol, c.k, c.level.clone()), c.median()))
            .collect();
        io::write_csv(
            path,
            &["method", "condition", "protocol", "k", "level", "median", "min", "max", "delta_vs_baseline"]
                .map(String::from),
            self.cells.iter().map(|c| {
                let delta = baseline
                    .get(&(c.group.clone(), c.protocol, c.k, c.level.clone()))
                    .map_or(String::new(), |b| io::fmt_fixed(c.median() - b, 2));
                [
                    c.method.name().to_string(),
                    c.group.clone(),
                    c.protocol.name().to_string(),
                    c.k.to_string(),
                    c.level.clone(),
                    io::fmt_fixed(c.median(), 2),
                    io::fmt_fixed(c.min(), 2),
                    io::fmt_fixed(c.max(), 2),
                    delta,
                ]
            }),
        )
    }
}

/// Collects per-seed summaries of each method into report cells.
pub fn collect_report(runs: &[(Method, Vec<Vec<SummaryRow>>)], cfg: &EvaluationConfig) -> AblationReport {
    let mut cells = Vec::new();
    for (method, per_seed) in runs {
        let mut grouped: BTreeMap<(usize, usize), AblationCell> = BTreeMap::new();
        for summary in per_seed {
            for (row_idx, row) in summary.iter().enumerate() {
                for (li, level) in cfg.thresholds.levels.iter().enumerate() {
                    grouped
                        .entry((row_idx, li))
                        .or_insert_with(|| AblationCell {
                            method: *method,
                            group: row.group.clone(),
                            protocol: row.protocol,
                            k: row.k,
                            level: level.name.clone(),
                            values: Vec::new(),
                        })
                        .values
                        .push(row.rates[li]);
                }
            }
        }
        cells.extend(grouped.into_values());
    }
    AblationReport { cells }
}

/// Output locations of one ablation run.
pub fn ablation_dirs(out: &Path) -> (PathBuf, PathBuf) {
    (out.join("world"), out.join("variants"))
}

/// World, variants, then for each method one model per seed, each evaluated
/// separately; medians with min/max across seeds go to `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<AblationReport> {
    let (world_dir, variants_dir) = ablation_dirs(out);
    cmd_worldgen(cfg, &world_dir)?;
    let world = io::read_world(&world_dir)?;
    let needs_variants = cfg.ablation.methods.iter().any(|m| *m != Method::Baseline);
    let synthetic = if needs_variants {
        cmd_variants(cfg, &world_dir, &variants_dir)?;
        let (prompts, variants) = io::read_variants(&variants_dir, &world)?;
        let scores = io::read_scores(&variants_dir.join(io::CONSISTENCY))?;
        Some((prompts, variants, scores))
    } else {
        None
    };
    let names: Vec<String> = synthetic
        .as_ref()
        .map(|(p, _, _)| p.names().iter().map(|s| s.to_string()).collect())
        .unwrap_or_default();
    let data = synthetic.as_ref().map(|(_, variants, scores)| SyntheticData {
        variants,
        scores,
        prompts: &names,
    });

    let mut runs = Vec::new();
    for &method in &cfg.ablation.methods {
        let train_cfg = method.apply(&cfg.train, cfg.ablation.tau);
        let method_dir = out.join(method.name());
        let trained = train_seeds(&world, data, &train_cfg, &cfg.seeds)?;
        write_training(&method_dir, &trained)?;
        let mut summaries = Vec::new();
        for (seed, run) in &trained {
            let ev = evaluate_model(cfg, &world, &run.model)?;
            let seed_dir = method_dir.join(format!("seed{seed}"));
            write_evaluation(&seed_dir, &ev, &cfg.evaluation)?;
            summaries.push(ev.summary);
        }
        runs.push((method, summaries));
    }
    let report = collect_report(&runs, &cfg.evaluation);
    report.write(&out.join(ABLATION))?;
    Ok(report)
}
