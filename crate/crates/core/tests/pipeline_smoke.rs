//! End-to-end plumbing checks on a small synthetic dataset: training runs,
//! checkpoints round-trip, ablation parity, and frozen-model guarantees.

use padkit::checkpoint;
use padkit::data::{generate_synthetic, holdout_subject_split, SynthConfig};
use padkit::metrics::compute_pad_metrics;
use padkit::pipeline::{
    self, extract_attention, load_system, train_phase1, train_phase2, TrainConfig,
};

fn small_synth(dir: &std::path::Path) -> padkit::data::DatasetManifest {
    let cfg = SynthConfig {
        n_subjects_live: 24,
        n_subjects_attack: 24,
        image_size: 64,
        artifact_region_count: 2,
        style_jitter: 0.3,
        seed: 11,
    };
    generate_synthetic(&cfg, dir).unwrap()
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig::load(
        None,
        &[
            ("seed".into(), "3".into()),
            ("batch_size".into(), "16".into()),
            ("phase1.epochs".into(), "2".into()),
            ("phase1.input".into(), "64".into()),
            ("phase2.epochs".into(), "2".into()),
            ("fusion.epochs".into(), "3".into()),
        ],
    )
    .unwrap()
}

#[test]
fn full_pipeline_runs_and_roundtrips() {
    let data_dir = tempfile::tempdir().unwrap();
    let ckpt_dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(data_dir.path());
    let (train, test) = holdout_subject_split(&manifest, 0.2, 3).unwrap();
    assert!(train.subjects().len() > test.subjects().len());

    let cfg = tiny_train_config();
    let system = pipeline::run_full_training(&cfg, &train, ckpt_dir.path()).unwrap();

    // scoring works and stays in [0, 1]
    let scores = system.evaluate_manifest(&test).unwrap();
    assert_eq!(scores.len(), test.len());
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
    let report = compute_pad_metrics(&scores, 0.5).unwrap();
    assert_eq!(report.acer, (report.apcer + report.bpcer) / 2.0);

    // checkpoint directory reloads to an identical predictor
    let reloaded = load_system(ckpt_dir.path()).unwrap();
    let rescored = reloaded.evaluate_manifest(&test).unwrap();
    for (a, b) in scores.iter().zip(rescored.iter()) {
        assert_eq!(a.score, b.score, "reloaded system must predict identically");
    }

    // expected checkpoint layout
    for name in [
        "phase1.ckpt",
        "patch_forehead.ckpt",
        "patch_mouth_chin.ckpt",
        "fusion.ckpt",
        "attention.csv",
        "norm_stats.txt",
        "config_snapshot",
        "phase1_log.csv",
    ] {
        assert!(ckpt_dir.path().join(name).exists(), "missing {name}");
    }
}

#[test]
fn phase2_does_not_mutate_phase1_checkpoint() {
    let data_dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(data_dir.path());
    let cfg = tiny_train_config();
    let p1 = train_phase1(&cfg, &manifest).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phase1.ckpt");
    checkpoint::save_fullface(&path, &p1.model).unwrap();
    let before = std::fs::read(&path).unwrap();

    let _p2 = train_phase2(&cfg, &manifest, &p1.norm).unwrap();
    checkpoint::save_fullface(&path, &p1.model).unwrap();
    let after = std::fs::read(&path).unwrap();
    assert_eq!(before, after, "phase-2 training must not touch phase-1 weights");
}

#[test]
fn ablation_parity_ce_only_duplicated_branch() {
    // with CSA/AIAW/TF all off the total equals g1*CE + g2*CE of the
    // duplicated branch
    let data_dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(data_dir.path());
    let cfg = TrainConfig::load(
        None,
        &[
            ("seed".into(), "3".into()),
            ("batch_size".into(), "16".into()),
            ("phase1.epochs".into(), "1".into()),
            ("phase1.input".into(), "64".into()),
            ("phase1.use_csa".into(), "false".into()),
            ("phase1.use_aiaw".into(), "false".into()),
            ("phase1.use_tf".into(), "false".into()),
        ],
    )
    .unwrap();
    let p1 = train_phase1(&cfg, &manifest).unwrap();
    for log in &p1.logs {
        assert_eq!(log.parts.aiaw_org, 0.0);
        assert_eq!(log.parts.tf_org, 0.0);
        assert_eq!(log.parts.ce_org, log.parts.ce_aug);
        let expected = log.parts.ce_org + log.parts.ce_aug;
        assert!(
            (log.total - expected).abs() < 1e-5,
            "total {} != 2*CE {}",
            log.total,
            expected
        );
    }
}

#[test]
fn empty_manifest_rejected_before_any_step() {
    let cfg = tiny_train_config();
    let empty = padkit::data::DatasetManifest {
        name: "empty".into(),
        samples: Vec::new(),
    };
    assert!(train_phase1(&cfg, &empty).is_err());
}

#[test]
fn attention_table_shape_and_bounds() {
    let data_dir = tempfile::tempdir().unwrap();
    let manifest = small_synth(data_dir.path());
    let cfg = tiny_train_config();
    let p1 = train_phase1(&cfg, &manifest).unwrap();
    let table = extract_attention(&p1.model, &p1.norm, &manifest, 50.0).unwrap();
    assert_eq!(table.rows.len(), manifest.len());
    for row in &table.rows {
        for s in row.scores.scores {
            assert!((0.0..=1.0).contains(&s), "score {s} out of [0,1]");
        }
    }
}
