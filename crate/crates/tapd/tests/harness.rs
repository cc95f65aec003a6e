use std::fs;
use std::path::Path;

use proptest::prelude::*;
use tapd::checkpoint::{decode_tensors, encode_tensors, load_snapshot, read_tensors, write_tensors};
use tapd::config::{config_hash, parse_config, render_config};
use tapd::report::{
    combined_table, emit_reports, load_run, parse_transfer_table_csv, scores_csv, transfer_table_csv, TableFormat,
    SCORES_HEADER,
};
use tapd::run::{read_metrics, resume, train, RunManifest, RunOptions, RunStatus, MANIFEST, METRICS};
use tapd_core::env::{EnvConfig, TaskKind};
use tapd_core::metrics::{transfer_table, Arrow, FinalScore};
use tapd_core::nn::{Tensor, TensorMap};
use tapd_core::schedule::{check_template, expected_total_steps, Algorithm, ExperimentConfig};

fn micro(alg: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        algorithm: alg,
        num_processes: 2,
        num_steps: 5,
        steps_active: 100,
        steps_agnostic: 20,
        steps_agnostic_compress: 20,
        steps_compress: 20,
        agnostic_samples: 2,
        visits: 2,
        tasks: vec![TaskKind::Chase, TaskKind::Volley],
        fisher: tapd_core::consolidation::FisherConfig { steps: 2, batch: 5 },
        env: EnvConfig { max_episode_steps: 6, ..EnvConfig::default() },
        ewc: tapd_core::consolidation::EwcConfig { start: 0, ..Default::default() },
        eval_window: 3,
        ..ExperimentConfig::toy()
    }
}

fn file(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn config_file_keys_cover_the_table() {
    let text = "\
profile=toy
algorithm=online_ewc_baseline
batch-size-fisher=16
eval-steps=1e5
ewc-lambda=4
ewc-gamma=0.5
gamma=0.95
ewc-start=2e3
entropy-coef=0.02
lr=1e-3
eps=1e-6
alpha=0.9
num-env-steps-agnostic=2e4
num-env-steps-compress=4e3
num-env-steps-agnostic-compress=2e3
num-env-steps-progress=4e4
num-processes=5
num-visits=2
value-loss-coef=0.25
max-grad-norm=1
num-steps-fisher=50
num-steps=16
num-samples-drawn-in-task-agnostic-phase=4
agnostic-phase=false
";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.algorithm, Algorithm::OnlineEwcBaseline);
    assert_eq!((cfg.fisher.batch, cfg.fisher.steps), (16, 50));
    assert_eq!((cfg.ewc.lambda, cfg.ewc.gamma, cfg.ewc.start), (4.0, 0.5, 2000));
    assert_eq!((cfg.optim.lr, cfg.optim.eps, cfg.optim.alpha), (1e-3, 1e-6, 0.9));
    assert_eq!((cfg.a2c.gamma, cfg.a2c.entropy_coef, cfg.a2c.value_loss_coef, cfg.a2c.max_grad_norm), (0.95, 0.02, 0.25, 1.0));
    assert_eq!((cfg.num_processes, cfg.num_steps, cfg.visits, cfg.agnostic_samples), (5, 16, 2, 4));
    assert_eq!((cfg.steps_agnostic, cfg.steps_compress, cfg.steps_agnostic_compress, cfg.steps_active), (20_000, 4_000, 2_000, 40_000));
    assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
}

#[test]
fn tensor_blobs_round_trip_and_detect_damage() {
    let mut map = TensorMap::new();
    map.insert("a.weight", Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap()).unwrap();
    map.insert("a.bias", Tensor::from_vec(&[2], vec![1e300, -1e-300]).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tensors(dir.path(), "t", &map).unwrap();
    let back = read_tensors(dir.path(), "t").unwrap();
    assert_eq!(back, map);
    assert_eq!(back.checksum(), map.checksum());
    let (manifest, mut bytes) = encode_tensors(&map);
    bytes[3] ^= 1;
    assert!(decode_tensors(&manifest, &bytes, dir.path()).is_err());
    assert!(decode_tensors(&manifest, &bytes[..8], dir.path()).is_err());
}

#[test]
fn run_directory_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(Algorithm::Tapd);
    let m = train(&cfg, dir.path(), RunOptions::default()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.config_hash, config_hash(&cfg));
    assert_eq!(m.global_step, expected_total_steps(&cfg));
    check_template(&cfg, &m.records).unwrap();
    assert_eq!(RunManifest::load(&dir.path().join(MANIFEST)).unwrap(), m);
    let (snap, lines) = load_snapshot(&dir.path().join("checkpoints/final")).unwrap();
    assert_eq!(lines as usize, read_metrics(&dir.path().join(METRICS)).unwrap().len());
    assert_eq!(format!("{:016x}", snap.kb.checksum()), m.checksums.as_ref().unwrap().kb);
    assert!(train(&cfg, dir.path(), RunOptions::default()).is_err());
    let again = resume(&dir.path().join(MANIFEST), RunOptions::default()).unwrap();
    assert_eq!(again, m);
}

#[test]
fn interrupted_run_resumes_to_identical_files() {
    let cfg = micro(Algorithm::Tapd);
    let whole = tempfile::tempdir().unwrap();
    let m1 = train(&cfg, whole.path(), RunOptions::default()).unwrap();
    let part = tempfile::tempdir().unwrap();
    let m = train(&cfg, part.path(), RunOptions { max_units: Some(3) }).unwrap();
    assert_eq!(m.status, RunStatus::Running);
    assert_eq!(m.units_completed, 3);
    // Simulate a crash mid-unit: trailing metrics beyond the checkpoint.
    let metrics = part.path().join(METRICS);
    let mut text = fs::read_to_string(&metrics).unwrap();
    text.push_str("{\"garbage\": 1}\n");
    fs::write(&metrics, text).unwrap();
    let m = resume(&part.path().join(MANIFEST), RunOptions { max_units: Some(2) }).unwrap();
    assert_eq!(m.units_completed, 5);
    let m2 = resume(&part.path().join(MANIFEST), RunOptions::default()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(file(whole.path(), METRICS), file(part.path(), METRICS));
}

#[test]
fn corrupt_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(Algorithm::PncBaseline);
    train(&cfg, dir.path(), RunOptions { max_units: Some(1) }).unwrap();
    let path = dir.path().join(MANIFEST);
    let mut m = RunManifest::load(&path).unwrap();
    m.config = m.config.replace("seed=0", "seed=1");
    m.save(&path).unwrap();
    assert!(resume(&path, RunOptions::default()).is_err());
}

#[test]
fn reports_are_deterministic_and_parse_back() {
    let cfg = micro(Algorithm::PncBaseline);
    let mut outs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        train(&cfg, dir.path(), RunOptions::default()).unwrap();
        let run = load_run(&dir.path().join(MANIFEST)).unwrap();
        let out = dir.path().join("reports");
        emit_reports(&[run], &out, TableFormat::Csv).unwrap();
        let names = ["scores.csv", "entropy.csv", "transfer_table.csv", "variance_report.json", "plot_reports.py"];
        outs.push(names.map(|n| file(&out, n)));
        let text = String::from_utf8(file(&out, "transfer_table.csv")).unwrap();
        let table = parse_transfer_table_csv(&text, &out).unwrap();
        let run = load_run(&dir.path().join(MANIFEST)).unwrap();
        assert_eq!(table, combined_table(&[run]));
        assert_eq!(table.cells.len(), cfg.visits * cfg.tasks.len());
        let scores = String::from_utf8(file(&out, "scores.csv")).unwrap();
        assert_eq!(scores.lines().next(), Some(SCORES_HEADER));
        outs.last().unwrap();
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn several_runs_share_one_table() {
    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, alg) in [Algorithm::Tapd, Algorithm::PncBaseline, Algorithm::OnlineEwcBaseline].into_iter().enumerate() {
        let dir = root.path().join(format!("r{i}"));
        train(&micro(alg), &dir, RunOptions::default()).unwrap();
        runs.push(load_run(&dir.join(MANIFEST)).unwrap());
    }
    let out = root.path().join("out");
    emit_reports(&runs, &out, TableFormat::Json).unwrap();
    assert!(out.join("tapd-0/scores.csv").exists());
    assert!(out.join("online_ewc_baseline-2/entropy.csv").exists());
    let table: tapd_core::metrics::TransferTable =
        serde_json::from_slice(&file(&out, "transfer_table.json")).unwrap();
    assert_eq!(table.cells.len(), 3 * 2 * 2);
    let report: serde_json::Value = serde_json::from_slice(&file(&out, "variance_report.json")).unwrap();
    assert_eq!(report["algorithms"].as_object().unwrap().len(), 3);
}

#[test]
fn scores_csv_rolls_within_each_visit() {
    let records = [(0, 1.0), (0, 3.0), (1, 10.0)]
        .iter()
        .enumerate()
        .map(|(i, &(visit, score))| tapd_core::metrics::MetricRecord {
            step: 10 * (i as u64 + 1),
            phase: tapd_core::metrics::PhaseKind::Progress,
            task: TaskKind::Chase,
            visit: Some(visit),
            sample: None,
            event: tapd_core::metrics::MetricEvent::Episode { score },
        })
        .collect::<Vec<_>>();
    assert_eq!(scores_csv(&records, 100), "step,task,visit,score\n10,chase,1,1\n20,chase,1,2\n30,chase,2,10\n");
}

/// Seeded reference run. Regenerate with `TAPD_BLESS=1 cargo test`.
#[test]
fn golden_scores_for_a_seeded_run() {
    let mut cfg = micro(Algorithm::Tapd);
    cfg.seed = 7;
    let dir = tempfile::tempdir().unwrap();
    let m = train(&cfg, dir.path(), RunOptions::default()).unwrap();
    let run = load_run(&dir.path().join(MANIFEST)).unwrap();
    let got = format!(
        "{}# kb {}\n# active {}\n",
        scores_csv(&run.records, cfg.eval_window),
        m.checksums.as_ref().unwrap().kb,
        m.checksums.as_ref().unwrap().active
    );
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_scores.csv");
    if std::env::var_os("TAPD_BLESS").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    let want = fs::read_to_string(&golden).expect("golden fixture missing; run with TAPD_BLESS=1");
    assert_eq!(got, want);
}

fn arb_scores() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.9, -50.0..50.0f64), 6)
}

proptest! {
    #[test]
    fn transfer_csv_round_trips(scores in arb_scores()) {
        let tasks = [TaskKind::Chase, TaskKind::Raid];
        let finals: Vec<FinalScore> = scores.iter().enumerate().map(|(i, s)| FinalScore {
            algorithm: "tapd".into(), visit: i / 2, task: tasks[i % 2], score: *s,
        }).collect();
        let table = transfer_table(&finals);
        let text = transfer_table_csv(&table);
        let back = parse_transfer_table_csv(&text, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &table);
        for c in &table.cells {
            let prev = table.cells.iter().find(|p| p.task == c.task && p.visit + 1 == c.visit).and_then(|p| p.score);
            let want = match (prev, c.score) {
                (Some(p), Some(s)) if s > p => Some(Arrow::Up),
                (Some(p), Some(s)) if s < p => Some(Arrow::Down),
                _ => None,
            };
            prop_assert_eq!(c.arrow, want);
        }
    }

    #[test]
    fn rendered_configs_parse_back(seed in any::<u64>(), lr in 1e-6..1.0f64, lam in 0.0..100.0f64, var in 1u8..=3) {
        let mut cfg = ExperimentConfig::toy();
        cfg.seed = seed;
        cfg.optim.lr = lr;
        cfg.ewc.lambda = lam;
        cfg.variation = var;
        prop_assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    }
}
