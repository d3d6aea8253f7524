//! CSV persistence of worlds, variants, scores, models and reports.
//!
//! Floats are written with the shortest representation that round-trips, so
//! a stage reading another stage's output sees bit-identical values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::embed::{EmbeddingModel, EpisodeStats};
use crate::error::{Error, Result};
use crate::geometry::{validate_pair, ConsistencyScore, ScoreTable, Threshold};
use crate::index::RankedList;
use crate::variants::{slug, DomainShift, PromptSet, VariantStore};
use crate::worldgen::{Landmark, LocalFeature, MatchingPair, ViewImage, World};

pub const LANDMARKS: &str = "landmarks.csv";
pub const VIEWS: &str = "views.csv";
pub const FEATURES: &str = "features";
pub const PAIRS: &str = "pairs.csv";
pub const META: &str = "meta.csv";
pub const VARIANT_FEATURES: &str = "features_variants";
pub const PROMPTS: &str = "prompts.csv";
pub const CONSISTENCY: &str = "consistency.csv";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a header and rows of pre-formatted fields.
pub fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let csv_err = |e: csv::Error| Error::data(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    let csv_err = |e: csv::Error| Error::data(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::data(path, format!("cannot parse {what} from {field:?}")))
}

fn column(header: &[String], path: &Path, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::data(path, format!("missing column {name}")))
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_fixed(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}")
}

fn desc_header(prefix: &[&str], d: usize) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..d).map(|i| format!("d{i}")))
        .collect()
}

fn write_features(path: &Path, view: &ViewImage) -> Result<()> {
    let header = desc_header(&["keypoint_x", "keypoint_y", "landmark_id"], view.descriptor_dim());
    write_csv(
        path,
        &header,
        view.features.iter().map(|f| {
            [
                fmt(f.keypoint.x),
                fmt(f.keypoint.y),
                f.landmark_id.map(|l| l.to_string()).unwrap_or_default(),
            ]
            .into_iter()
            .chain(f.descriptor.iter().map(|x| fmt(*x)))
            .collect::<Vec<_>>()
        }),
    )
}

fn read_features(path: &Path) -> Result<Vec<LocalFeature>> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 3 || header[..3] != ["keypoint_x", "keypoint_y", "landmark_id"] {
        return Err(Error::data(path, "unexpected feature header"));
    }
    rows.iter()
        .map(|r| {
            if r.len() != header.len() {
                return Err(Error::data(path, "ragged feature row"));
            }
            Ok(LocalFeature {
                keypoint: Vector2::new(parse(path, &r[0], "keypoint")?, parse(path, &r[1], "keypoint")?),
                landmark_id: if r[2].is_empty() {
                    None
                } else {
                    Some(parse(path, &r[2], "landmark id")?)
                },
                descriptor: r[3..].iter().map(|x| parse(path, x, "descriptor")).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn write_world(dir: &Path, world: &World) -> Result<()> {
    ensure_dir(dir)?;
    write_csv(
        &dir.join(META),
        &["key".into(), "value".into()],
        [
            ["seed".to_string(), world.seed.to_string()],
            ["prompt_seed".into(), world.prompt_seed.to_string()],
            ["max_view_distance".into(), fmt(world.max_view_distance)],
        ],
    )?;
    write_csv(
        &dir.join(LANDMARKS),
        &desc_header(&["landmark_id", "x", "y", "z"], world.descriptor_dim()),
        world.landmarks.iter().map(|l| {
            [l.id.to_string(), fmt(l.position.x), fmt(l.position.y), fmt(l.position.z)]
                .into_iter()
                .chain(l.base_descriptor.iter().map(|x| fmt(*x)))
                .collect::<Vec<_>>()
        }),
    )?;
    let header: Vec<String> = [
        "view_id", "role", "condition", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "focal", "cx", "cy", "width",
        "height",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let roles = world
        .map_views
        .iter()
        .map(|v| ("map", v))
        .chain(world.query_views.iter().map(|v| ("query", v)));
    write_csv(
        &dir.join(VIEWS),
        &header,
        roles.map(|(role, v)| {
            let q = v.pose.wxyz();
            let i = &v.intrinsics;
            vec![
                v.id.to_string(),
                role.to_string(),
                v.condition.clone(),
                fmt(q[0]),
                fmt(q[1]),
                fmt(q[2]),
                fmt(q[3]),
                fmt(v.pose.position.x),
                fmt(v.pose.position.y),
                fmt(v.pose.position.z),
                fmt(i.focal),
                fmt(i.principal_point[0]),
                fmt(i.principal_point[1]),
                i.width.to_string(),
                i.height.to_string(),
            ]
        }),
    )?;
    for v in world.map_views.iter().chain(&world.query_views) {
        write_features(&dir.join(FEATURES).join(format!("{}.csv", v.id)), v)?;
    }
    write_csv(
        &dir.join(PAIRS),
        &["view_a".into(), "view_b".into(), "co_observations".into()],
        world
            .matching_pairs
            .iter()
            .map(|p| [p.a.to_string(), p.b.to_string(), p.count.to_string()]),
    )
}

pub fn read_world(dir: &Path) -> Result<World> {
    let meta_path = dir.join(META);
    let (_, meta_rows) = read_csv(&meta_path)?;
    let meta: BTreeMap<String, String> = meta_rows
        .into_iter()
        .filter(|r| r.len() == 2)
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::data(&meta_path, format!("missing key {k}")))
    };

    let lm_path = dir.join(LANDMARKS);
    let (_, lm_rows) = read_csv(&lm_path)?;
    let landmarks = lm_rows
        .iter()
        .map(|r| {
            if r.len() < 5 {
                return Err(Error::data(&lm_path, "short landmark row"));
            }
            Ok(Landmark {
                id: parse(&lm_path, &r[0], "landmark id")?,
                position: Vector3::new(
                    parse(&lm_path, &r[1], "x")?,
                    parse(&lm_path, &r[2], "y")?,
                    parse(&lm_path, &r[3], "z")?,
                ),
                base_descriptor: r[4..].iter().map(|x| parse(&lm_path, x, "descriptor")).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let views_path = dir.join(VIEWS);
    let (header, rows) = read_csv(&views_path)?;
    let col = |name: &str| column(&header, &views_path, name);
    let cols: Vec<usize> = [
        "view_id", "role", "condition", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "focal", "cx", "cy", "width",
        "height",
    ]
    .iter()
    .map(|n| col(n))
    .collect::<Result<_>>()?;
    let mut map_views = Vec::new();
    let mut query_views = Vec::new();
    for r in &rows {
        let f = |i: usize| -> Result<f64> { parse(&views_path, &r[cols[i]], &header[cols[i]]) };
        let id: u32 = parse(&views_path, &r[cols[0]], "view id")?;
        // stored quaternions are already unit; renormalizing would perturb
        // the last bits and break exact round trips
        let q = Quaternion::new(f(3)?, f(4)?, f(5)?, f(6)?);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::data(&views_path, format!("view {id}: rotation is not a unit quaternion")));
        }
        let pose = CameraPose::new(UnitQuaternion::new_unchecked(q), Vector3::new(f(7)?, f(8)?, f(9)?));
        let intrinsics = CameraIntrinsics {
            focal: f(10)?,
            principal_point: [f(11)?, f(12)?],
            width: parse(&views_path, &r[cols[13]], "width")?,
            height: parse(&views_path, &r[cols[14]], "height")?,
        };
        let features = read_features(&dir.join(FEATURES).join(format!("{id}.csv")))?;
        let view = ViewImage {
            id,
            pose,
            intrinsics,
            features,
            condition: r[cols[2]].clone(),
        };
        match r[cols[1]].as_str() {
            "map" => map_views.push(view),
            "query" => query_views.push(view),
            other => return Err(Error::data(&views_path, format!("unknown role {other:?}"))),
        }
    }

    let pairs_path = dir.join(PAIRS);
    let (_, pair_rows) = read_csv(&pairs_path)?;
    let matching_pairs = pair_rows
        .iter()
        .map(|r| {
            if r.len() != 3 {
                return Err(Error::data(&pairs_path, "pair rows have three fields"));
            }
            Ok(MatchingPair {
                a: parse(&pairs_path, &r[0], "view id")?,
                b: parse(&pairs_path, &r[1], "view id")?,
                count: parse(&pairs_path, &r[2], "count")?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(World {
        landmarks,
        map_views,
        query_views,
        matching_pairs,
        seed: parse(&meta_path, get("seed")?, "seed")?,
        prompt_seed: parse(&meta_path, get("prompt_seed")?, "prompt_seed")?,
        max_view_distance: parse(&meta_path, get("max_view_distance")?, "max_view_distance")?,
    })
}

pub fn write_prompts(path: &Path, prompts: &PromptSet) -> Result<()> {
    let d = prompts.shifts.first().map_or(0, |s| s.descriptor_bias.len());
    let header: Vec<String> = [
        "name",
        "bias_gain",
        "descriptor_noise_sigma",
        "dropout_rate",
        "clutter_rate",
        "keypoint_corruption_sigma",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain((0..d).map(|i| format!("b{i}")))
    .collect();
    write_csv(
        path,
        &header,
        prompts.shifts.iter().map(|s| {
            [
                s.name.clone(),
                fmt(s.bias_gain),
                fmt(s.descriptor_noise_sigma),
                fmt(s.dropout_rate),
                fmt(s.clutter_rate),
                fmt(s.keypoint_corruption_sigma),
            ]
            .into_iter()
            .chain(s.descriptor_bias.iter().map(|x| fmt(*x)))
            .collect::<Vec<_>>()
        }),
    )
}

pub fn read_prompts(path: &Path) -> Result<PromptSet> {
    let (_, rows) = read_csv(path)?;
    let shifts = rows
        .iter()
        .map(|r| {
            if r.len() < 6 {
                return Err(Error::data(path, "short prompt row"));
            }
            Ok(DomainShift {
                name: r[0].clone(),
                bias_gain: parse(path, &r[1], "bias_gain")?,
                descriptor_noise_sigma: parse(path, &r[2], "descriptor_noise_sigma")?,
                dropout_rate: parse(path, &r[3], "dropout_rate")?,
                clutter_rate: parse(path, &r[4], "clutter_rate")?,
                keypoint_corruption_sigma: parse(path, &r[5], "keypoint_corruption_sigma")?,
                descriptor_bias: r[6..].iter().map(|x| parse(path, x, "bias")).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PromptSet::new(shifts).map_err(|e| Error::data(path, e.to_string()))
}

pub fn variant_path(dir: &Path, prompt: &str, view_id: u32) -> PathBuf {
    dir.join(VARIANT_FEATURES).join(slug(prompt)).join(format!("{view_id}.csv"))
}

/// Writes `prompts.csv` and one feature file per variant.
pub fn write_variants(dir: &Path, prompts: &PromptSet, variants: &VariantStore) -> Result<()> {
    ensure_dir(dir)?;
    write_prompts(&dir.join(PROMPTS), prompts)?;
    for (id, list) in &variants.by_view {
        for v in list {
            write_features(&variant_path(dir, &v.condition, *id), v)?;
        }
    }
    Ok(())
}

/// Reads the variants of every map view of `world` under every prompt.
pub fn read_variants(dir: &Path, world: &World) -> Result<(PromptSet, VariantStore)> {
    let prompts = read_prompts(&dir.join(PROMPTS))?;
    let mut store = VariantStore::default();
    for v in &world.map_views {
        let list = prompts
            .shifts
            .iter()
            .map(|s| {
                Ok(ViewImage {
                    features: read_features(&variant_path(dir, &s.name, v.id))?,
                    condition: s.name.clone(),
                    ..v.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        store.by_view.insert(v.id, list);
    }
    Ok((prompts, store))
}

pub fn write_scores(path: &Path, scores: &ScoreTable, threshold: &Threshold) -> Result<()> {
    write_csv(
        path,
        &["query_id", "positive_id", "prompt", "kept", "original", "score", "valid"]
            .map(String::from),
        scores.scores.iter().map(|((q, p, prompt), s)| {
            [
                q.to_string(),
                p.to_string(),
                prompt.clone(),
                s.kept.to_string(),
                s.original.to_string(),
                fmt_fixed(s.value, 6),
                u8::from(validate_pair(s, threshold)).to_string(),
            ]
        }),
    )
}

/// Scores are recomputed from the kept/original counts, not the rounded
/// score column.
pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let (header, rows) = read_csv(path)?;
    let c: Vec<usize> = ["query_id", "positive_id", "prompt", "kept", "original"]
        .iter()
        .map(|n| column(&header, path, n))
        .collect::<Result<_>>()?;
    let mut table = ScoreTable::default();
    for r in &rows {
        table.insert(
            parse(path, &r[c[0]], "query id")?,
            parse(path, &r[c[1]], "positive id")?,
            &r[c[2]],
            ConsistencyScore::new(parse(path, &r[c[3]], "kept")?, parse(path, &r[c[4]], "original")?),
        );
    }
    Ok(table)
}

/// `e,d` header line, the dimensions, then `e` rows of `d` values at 17
/// significant digits.
pub fn write_model(path: &Path, model: &EmbeddingModel) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let (e, d) = model.w.shape();
    let mut text = format!("e,d\n{e},{d}\n");
    for r in 0..e {
        let row: Vec<String> = (0..d).map(|c| format!("{:.16e}", model.w[(r, c)])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|err| Error::io(path, err))
}

pub fn read_model(path: &Path) -> Result<EmbeddingModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("e,d") {
        return Err(Error::data(path, "expected header e,d"));
    }
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::data(path, "missing dimensions"))?
        .split(',')
        .map(|x| parse(path, x, "dimension"))
        .collect::<Result<_>>()?;
    let [e, d] = dims[..] else {
        return Err(Error::data(path, "dimensions line has two fields"));
    };
    let mut values = Vec::with_capacity(e * d);
    for line in lines.take(e) {
        let row: Vec<f64> = line.split(',').map(|x| parse(path, x, "weight")).collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::data(path, format!("row of {} values, expected {d}", row.len())));
        }
        values.extend(row);
    }
    if values.len() != e * d {
        return Err(Error::data(path, format!("expected {e} rows")));
    }
    EmbeddingModel::new(DMatrix::from_row_slice(e, d, &values)).map_err(|err| Error::data(path, err.to_string()))
}

pub fn write_trace(path: &Path, traces: &[(u64, Vec<EpisodeStats>)]) -> Result<()> {
    write_csv(
        path,
        &["seed", "episode", "mean_loss", "synth_fraction"].map(String::from),
        traces.iter().flat_map(|(seed, trace)| {
            trace.iter().map(move |s| {
                [
                    seed.to_string(),
                    s.episode.to_string(),
                    fmt(s.mean_loss),
                    fmt(s.synth_fraction),
                ]
            })
        }),
    )
}

pub fn write_rankings(path: &Path, rankings: &[(u32, RankedList)]) -> Result<()> {
    write_csv(
        path,
        &["query_id", "rank", "view_id", "score"].map(String::from),
        rankings.iter().flat_map(|(q, list)| {
            list.entries.iter().enumerate().map(move |(rank, (id, score))| {
                [q.to_string(), (rank + 1).to_string(), id.to_string(), fmt_fixed(*score, 6)]
            })
        }),
    )
}

pub fn read_rankings(path: &Path) -> Result<Vec<(u32, RankedList)>> {
    let (_, rows) = read_csv(path)?;
    let mut out: Vec<(u32, RankedList)> = Vec::new();
    for r in &rows {
        if r.len() != 4 {
            return Err(Error::data(path, "ranking rows have four fields"));
        }
        let q: u32 = parse(path, &r[0], "query id")?;
        let entry = (parse(path, &r[2], "view id")?, parse(path, &r[3], "score")?);
        match out.last_mut() {
            Some((last, list)) if *last == q => list.entries.push(entry),
            _ => out.push((q, RankedList { entries: vec![entry] })),
        }
    }
    Ok(out)
}
