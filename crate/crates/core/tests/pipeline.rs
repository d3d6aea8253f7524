use std::path::Path;
use std::process::Command;

use locsynth::embed::{EmbeddingModel, TrainConfig, TrainMode};
use locsynth::experiment::{self, read_localization, summarize, ExperimentConfig};
use locsynth::geometry::MatchParams;
use locsynth::io;
use locsynth::worldgen::{generate_world, RenderNoise, WorldConfig};
use nalgebra::DMatrix;

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_toml("seeds = [1]\n[train]\nepisodes = 2\npairs_per_episode = 40\n").unwrap()
}

#[test]
fn world_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let world = generate_world(&WorldConfig::default(), 11).unwrap();
    io::write_world(dir.path(), &world).unwrap();
    assert_eq!(io::read_world(dir.path()).unwrap(), world);
}

#[test]
fn variants_scores_and_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let world = generate_world(&cfg.world, 2).unwrap();
    let (prompts, variants, scores) = experiment::make_variants(&cfg, &world).unwrap();
    io::write_variants(dir.path(), &prompts, &variants).unwrap();
    let (p2, v2) = io::read_variants(dir.path(), &world).unwrap();
    assert_eq!(p2, prompts);
    assert_eq!(v2, variants);

    let path = dir.path().join("scores.csv");
    io::write_scores(&path, &scores, &cfg.threshold()).unwrap();
    assert_eq!(io::read_scores(&path).unwrap(), scores);

    let model = EmbeddingModel::init(16, 32, 5).unwrap();
    let path = dir.path().join("model.csv");
    io::write_model(&path, &model).unwrap();
    assert_eq!(io::read_model(&path).unwrap(), model);
}

#[test]
fn malformed_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "e,d\n2,2\n1,0\n0\n").unwrap();
    let err = io::read_model(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn summary_recomputes_from_localization_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let world = generate_world(&cfg.world, 3).unwrap();
    let model = EmbeddingModel::init(16, 32, 1).unwrap();
    let ev = experiment::evaluate_model(&cfg, &world, &model).unwrap();
    experiment::write_evaluation(dir.path(), &ev, &cfg.evaluation).unwrap();

    let records = read_localization(&dir.path().join(experiment::LOCALIZATION)).unwrap();
    assert_eq!(records, ev.records);
    let again = summarize(&records, &cfg.evaluation);
    let path = dir.path().join("again.csv");
    experiment::write_summary(&path, &again, &cfg.evaluation).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join(experiment::SUMMARY)).unwrap()
    );
    // every query appears once per protocol and k
    assert_eq!(records.len(), world.query_views.len() * 2 * cfg.evaluation.ks.len());
}

#[test]
fn self_localization_is_perfect() {
    let mut cfg = small_config();
    cfg.world.queries_are_map_views = true;
    cfg.world.map_noise = RenderNoise::ZERO;
    cfg.world.query_conditions.clear();
    let world = generate_world(&cfg.world, 4).unwrap();
    let model = EmbeddingModel::new(DMatrix::identity(32, 32)).unwrap();
    let ev = experiment::evaluate_model(&cfg, &world, &model).unwrap();
    for row in ev.summary.iter().filter(|r| r.k == 1) {
        assert!(row.rates.iter().all(|r| *r == 100.0), "{row:?}");
    }
    assert!(ev.recall.iter().all(|r| r.recall == 1.0));
}

#[test]
fn baseline_training_ignores_variants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.mode = TrainMode::Baseline;
    let world = dir.path().join("world");
    experiment::cmd_worldgen(&cfg, &world).unwrap();
    experiment::cmd_train(&cfg, &world, Some(Path::new("/nonexistent")), &dir.path().join("m")).unwrap();
    assert!(dir.path().join("m").join(experiment::MODEL_AVG).exists());

    cfg.train.mode = TrainMode::MultiK;
    let err = experiment::cmd_train(&cfg, &world, None, &dir.path().join("m2")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn method_rows_differ_only_in_filtering_and_sampling() {
    use experiment::Method;
    let base = TrainConfig::default();
    let rows: Vec<TrainConfig> = Method::ALL.iter().map(|m| m.apply(&base, 0.2)).collect();
    assert_eq!(rows[0].mode, TrainMode::Baseline);
    assert_eq!(rows[1].threshold.value, 0.0);
    assert_eq!(rows[2].threshold.value, 0.2);
    assert_ne!(rows[2].sampling, rows[3].sampling);
    for r in &rows[1..] {
        assert_eq!(r.mode, TrainMode::MultiK);
        assert_eq!(r.episodes, base.episodes);
    }
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    for text in ["bogus = 1\n", "[train]\nmargin = -1.0\n", "seeds = []\n", "[matching]\nratio = 1.5\n"] {
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}");
    }
    let reference = ExperimentConfig::reference();
    assert_eq!(ExperimentConfig::from_toml(&reference).unwrap(), ExperimentConfig::default());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_locsynth");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nonsense = true\n").unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["config"]), Some(0));
    assert_eq!(status(&["--config", bad.to_str().unwrap(), "config"]), Some(2));
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("out");
    assert_eq!(
        status(&["evaluate", "--world", missing.to_str().unwrap(), "--model", "x.csv", "--out", out.to_str().unwrap()]),
        Some(2)
    );
    let world = dir.path().join("w");
    assert_eq!(status(&["worldgen", "--out", world.to_str().unwrap()]), Some(0));
    let model = dir.path().join("missing_model.csv");
    assert_eq!(
        status(&[
            "evaluate",
            "--world",
            world.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        Some(3)
    );
}

#[test]
fn matching_defaults() {
    let p = MatchParams::default();
    assert_eq!((p.ratio, p.pixel_tol), (0.9, 2.0));
}
