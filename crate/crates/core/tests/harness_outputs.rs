use std::path::Path;
use std::process::Command;

use ctxmdp::environment::{FixtureDump, GroundTruth};
use ctxmdp::harness::run::{environment_for_seed, trace_path, write_outputs};
use ctxmdp::harness::trace::CSV_COLUMNS;
use ctxmdp::harness::{emit_csv, run_experiment, run_replication, ExperimentConfig, FixtureKind, LearnerKind};

fn quick_config(learner: LearnerKind, episodes: usize) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(learner, episodes, vec![11]);
    config.rho_scale = 0.1;
    config
}

fn parse_rows(path: &Path) -> Vec<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, CSV_COLUMNS);
    reader
        .records()
        .map(|r| r.unwrap().iter().map(|f| f.parse::<f64>().unwrap()).collect())
        .collect()
}

#[test]
fn three_episode_csv_has_four_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    emit_csv(&run_replication(&quick_config(LearnerKind::Ofu, 3), 11).unwrap(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(LearnerKind::Ofu, 60);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    emit_csv(&run_replication(&config, 11).unwrap(), &a).unwrap();
    emit_csv(&run_replication(&config, 11).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn cumulative_regret_is_prefix_sum_of_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    emit_csv(&run_replication(&quick_config(LearnerKind::Random, 400), 11).unwrap(), &path).unwrap();
    let rows = parse_rows(&path);
    assert_eq!(rows.len(), 400);
    let mut running = 0.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1) as f64);
        let gap = row[1] - row[2];
        assert!(gap >= -1e-12, "episode {}: negative gap {gap}", i + 1);
        running += gap;
        // each field carries 12 significant digits
        assert!((row[4] - running).abs() <= 1e-9 * running.abs().max(1.0), "episode {}", i + 1);
        assert!(row[3] >= 0.0 && row[3] <= 4.0);
    }
}

#[test]
fn oracle_learner_regret_is_zero_in_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(LearnerKind::Oracle, 100);
    config.seeds = vec![1, 2, 3];
    let outcome = run_experiment(&config).unwrap();
    let written = write_outputs(&config, &outcome, dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    for seed in [1, 2, 3] {
        let rows = parse_rows(&trace_path(dir.path(), LearnerKind::Oracle, seed));
        assert!(rows.iter().all(|r| r[4].abs() <= 1e-9));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle_summary.json")).unwrap()).unwrap();
    assert!(summary["final_regret_mean"].as_f64().unwrap().abs() <= 1e-9);
}

#[test]
fn learners_rank_as_expected_on_context_dependent_fixture() {
    let final_regret = |learner| {
        let mut config = ExperimentConfig::new(learner, 2048, (0..8).collect());
        config.fixture = FixtureKind::ContextDependent;
        config.rho_scale = 0.1;
        run_experiment(&config).unwrap().summary.final_regret_mean
    };
    let ofu = final_regret(LearnerKind::Ofu);
    let blind = final_regret(LearnerKind::ContextBlind);
    let random = final_regret(LearnerKind::Random);
    assert!(ofu < blind, "ofu {ofu} vs context_blind {blind}");
    assert!(blind < random, "context_blind {blind} vs random {random}");
}

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctxmdp"));
    cmd.env_remove("CTXMDP_OUTPUT_DIR").env_remove("CTXMDP_WORKERS");
    cmd
}

#[test]
fn cli_run_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["run", "--learner", "ofu", "--episodes", "12", "--seeds", "3,4", "--rho-scale", "0.1"])
        .env("CTXMDP_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["episodes"], 12);
    let trace = dir.path().join("ofu_seed4.csv");
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 13);

    let replay = |path: &Path| {
        cli()
            .args(["replay", "--learner", "ofu", "--episodes", "12", "--rho-scale", "0.1", "--seed", "4", "--trace"])
            .arg(path)
            .output()
            .unwrap()
            .status
    };
    assert!(replay(&trace).success());
    let text = std::fs::read_to_string(&trace).unwrap();
    let tampered = dir.path().join("tampered.csv");
    std::fs::write(&tampered, text.replacen("\n5,", "\n5,9", 1)).unwrap();
    assert_eq!(replay(&tampered).code(), Some(1));
}

#[test]
fn cli_config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "learner = \"ofu\"\nepisodes = 5\nseeds = [1]\nepisodse = 6\n").unwrap();
    let out = cli().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("episodse"));
}

#[test]
fn cli_dump_fixture_reproduces_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.json");
    let status = cli()
        .args(["dump-fixture", "--fixture", "context_dependent", "--seed", "9", "--output"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let dump: FixtureDump = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(dump.seed, Some(9));
    let loaded = GroundTruth::from_dump(&dump).unwrap();
    let mut config = ExperimentConfig::new(LearnerKind::Ofu, 1, vec![9]);
    config.fixture = FixtureKind::ContextDependent;
    let original = environment_for_seed(&config, 9).unwrap();
    for x in [[0.0, 0.0], [0.5, -0.5], [-0.9, 0.1]] {
        let (k1, r1) = loaded.true_models(&x).unwrap();
        let (k2, r2) = original.true_models(&x).unwrap();
        assert_eq!(k1.probs(), k2.probs());
        assert_eq!(r1.means(), r2.means());
    }
}

#[test]
fn shipped_example_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/separation.toml");
    let config = ExperimentConfig::load(&path).unwrap();
    assert_eq!(config.fixture, FixtureKind::ContextDependent);
    assert_eq!(config.seeds.len(), 8);
}
