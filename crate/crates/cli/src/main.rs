//! padkit command line: synthetic data generation, subject-disjoint
//! splitting, the two training phases, attention extraction, fusion,
//! evaluation, prediction, and visualization.
//!
//! Exit codes: 0 success, 1 invalid input (flags, config, manifests),
//! 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use padkit::attention::{self, AttentionTable};
use padkit::checkpoint;
use padkit::data::{
    generate_synthetic, kfold_subject_split, load_manifest, save_manifest, SynthConfig,
};
use padkit::geometry::{derive_patch_regions, CANONICAL_REGIONS};
use padkit::imgproc;
use padkit::metrics::{build_report, compute_pad_metrics, load_scores, save_scores};
use padkit::pipeline::{
    self, attention_path, config_snapshot_path, extract_attention, fusion_path, load_system,
    norm_stats_path, patch_path, phase1_path, prepare_input, ChannelStats, FusionMode,
    TrainConfig,
};

const TABLE_DEFAULTS: &str = "config override keys and defaults (--set key=value, repeatable):
  seed=7                    batch_size=32
  phase1.epochs=30          phase1.input=256        phase1.lr=0.001
  phase1.sigma=2            phase1.margin=0.6
  phase1.alpha1=1 beta1=0.1 gamma1=1  alpha2=1 beta2=0.1 gamma2=1
  phase1.k_live=0.0009      phase1.k_attack=0.0006
  phase1.use_csa=true       phase1.use_aiaw=true    phase1.use_tf=true
  phase2.epochs=20          phase2.input=64         phase2.lr=0.001
  phase2.sigma=1.5          phase2.margin=1         phase2.alpha=1  phase2.beta=0.1
  phase2.use_tf=true
  attention.k_percent=50
  fusion.epochs=20          fusion.lr=0.001         fusion.mode=weighted_mlp  fusion.hidden=64
  evaluate.threshold=0.5";

#[derive(Parser)]
#[command(
    name = "padkit",
    about = "Attention-guided patch-based presentation-attack detection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; omitted sections fall back to defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set phase1.epochs=10 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; every random draw derives from it
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    /// Resolve the effective config: explicit file, else the checkpoint
    /// directory's snapshot, else defaults; then overrides.
    fn resolve(&self, ckpt_dir: Option<&Path>) -> padkit::Result<TrainConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                padkit::Error::InvalidConfig(format!("--set expects key=value, got `{kv}`"))
            })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        let path = self
            .config
            .clone()
            .or_else(|| ckpt_dir.map(config_snapshot_path).filter(|p| p.exists()));
        TrainConfig::load(path.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic disguise-face dataset with planted artifacts
    Synth {
        /// Output directory (images/ + manifest.csv)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of bona fide subjects
        #[arg(long, default_value_t = 300)]
        live: usize,
        /// Number of attack subjects
        #[arg(long, default_value_t = 300)]
        attack: usize,
        /// Square image size in pixels (>= 64)
        #[arg(long, default_value_t = 64)]
        size: u32,
        /// Planted artifact regions per attack sample (1..=7)
        #[arg(long, default_value_t = 2)]
        regions: usize,
        /// Global style transform strength in [0, 1]
        #[arg(long, default_value_t = 0.3)]
        jitter: f32,
    },
    /// Subject-disjoint k-fold split of a manifest
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of folds
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory (fold<i>/train.csv, fold<i>/test.csv)
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1: train the style-robust full-face network
    #[command(name = "train-phase1", after_help = TABLE_DEFAULTS)]
    TrainPhase1 {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Grad-CAM attention table for a manifest from the phase-1 model
    #[command(name = "extract-attention")]
    ExtractAttention {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory holding phase1.ckpt
        #[arg(long)]
        ckpt: PathBuf,
        /// Top-k% pooling percentage
        #[arg(long = "k-percent")]
        k_percent: Option<f32>,
        /// Output CSV (default: <ckpt>/attention.csv)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Phase 2: train the seven patch subnetworks
    #[command(name = "train-phase2", after_help = TABLE_DEFAULTS)]
    TrainPhase2 {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory (phase-1 outputs live here)
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the fusion MLP over attention-weighted patch embeddings
    #[command(name = "train-fusion", after_help = TABLE_DEFAULTS)]
    TrainFusion {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Attention table CSV (default: <ckpt>/attention.csv)
        #[arg(long)]
        attention: Option<PathBuf>,
        /// weighted_mlp | unweighted_mlp | majority_vote
        #[arg(long = "fusion-mode")]
        fusion_mode: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compute PAD metrics from score files or by scoring a manifest
    Evaluate {
        /// Score CSV(s); with several, folds are aggregated mean ± std
        #[arg(long = "scores")]
        scores: Vec<PathBuf>,
        /// Score a manifest with a trained system instead
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Where to write the metrics JSON
        #[arg(long)]
        out: PathBuf,
        /// Also write the computed scores CSV (manifest mode)
        #[arg(long = "scores-out")]
        scores_out: Option<PathBuf>,
        /// Operating threshold for APCER/BPCER/ACER
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score one sample
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Manifest holding the sample
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Sample id inside --manifest (defaults to the first sample)
        #[arg(long = "sample-id")]
        sample_id: Option<String>,
        /// Directly: image PNG (needs --landmarks)
        #[arg(long)]
        image: Option<PathBuf>,
        /// 98-point landmark sidecar for --image
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Write heatmap overlays and patch-box debug images
    Visualize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Visualize at most this many samples
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version exit cleanly; anything else is a usage error
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> padkit::Result<()> {
    match command {
        Command::Synth {
            out,
            seed,
            live,
            attack,
            size,
            regions,
            jitter,
        } => {
            let cfg = SynthConfig {
                n_subjects_live: live,
                n_subjects_attack: attack,
                image_size: size,
                artifact_region_count: regions,
                style_jitter: jitter,
                seed,
            };
            let manifest = generate_synthetic(&cfg, &out)?;
            println!(
                "wrote {} samples to {}",
                manifest.len(),
                out.join("manifest.csv").display()
            );
            Ok(())
        }
        Command::Split {
            manifest,
            folds,
            seed,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let parts = kfold_subject_split(&m, folds, seed)?;
            for (i, (train, test)) in parts.iter().enumerate() {
                let dir = out.join(format!("fold{i}"));
                save_manifest(train, &dir.join("train.csv"))?;
                save_manifest(test, &dir.join("test.csv"))?;
                println!(
                    "fold{i}: {} train / {} test samples -> {}",
                    train.len(),
                    test.len(),
                    dir.display()
                );
            }
            Ok(())
        }
        Command::TrainPhase1 {
            manifest,
            out,
            config,
        } => {
            let cfg = config.resolve(Some(&out))?;
            let m = load_manifest(&manifest)?;
            std::fs::create_dir_all(&out).map_err(|e| padkit::Error::io(&out, e))?;
            cfg.save(&config_snapshot_path(&out))?;
            let p1 = pipeline::train_phase1(&cfg, &m)?;
            checkpoint::save_fullface(&phase1_path(&out), &p1.model)?;
            p1.norm.save(&norm_stats_path(&out))?;
            pipeline::save_phase1_log(&p1.logs, &out.join("phase1_log.csv"))?;
            let last = p1.logs.last().unwrap();
            println!(
                "phase 1 done: {} epochs, final total loss {:.4} -> {}",
                p1.logs.len(),
                last.total,
                phase1_path(&out).display()
            );
            Ok(())
        }
        Command::ExtractAttention {
            manifest,
            ckpt,
            k_percent,
            out,
            config,
        } => {
            let mut cfg = config.resolve(Some(&ckpt))?;
            if let Some(k) = k_percent {
                cfg.attention.k_percent = k;
                cfg.validate()?;
            }
            let m = load_manifest(&manifest)?;
            let model = checkpoint::load_fullface(&phase1_path(&ckpt))?;
            let norm = ChannelStats::load(&norm_stats_path(&ckpt))?;
            let table = extract_attention(&model, &norm, &m, cfg.attention.k_percent)?;
            let out = out.unwrap_or_else(|| attention_path(&ckpt));
            table.save(&out)?;
            cfg.save(&config_snapshot_path(&ckpt))?;
            println!("wrote {} attention rows -> {}", table.rows.len(), out.display());
            Ok(())
        }
        Command::TrainPhase2 {
            manifest,
            ckpt,
            config,
        } => {
            let cfg = config.resolve(Some(&ckpt))?;
            let m = load_manifest(&manifest)?;
            let norm = ChannelStats::load(&norm_stats_path(&ckpt))?;
            let p2 = pipeline::train_phase2(&cfg, &m, &norm)?;
            for (region, model) in CANONICAL_REGIONS.iter().zip(p2.models.iter()) {
                checkpoint::save_patch(&patch_path(&ckpt, *region), model)?;
            }
            pipeline::save_phase2_log(&p2.logs, &ckpt.join("phase2_log.csv"))?;
            cfg.save(&config_snapshot_path(&ckpt))?;
            println!("phase 2 done: 7 patch models -> {}", ckpt.display());
            Ok(())
        }
        Command::TrainFusion {
            manifest,
            ckpt,
            attention,
            fusion_mode,
            config,
        } => {
            let mut cfg = config.resolve(Some(&ckpt))?;
            if let Some(mode) = fusion_mode {
                cfg.fusion.mode = FusionMode::parse(&mode)?;
            }
            let m = load_manifest(&manifest)?;
            let norm = ChannelStats::load(&norm_stats_path(&ckpt))?;
            let att_path = attention.unwrap_or_else(|| attention_path(&ckpt));
            let table = AttentionTable::load(&att_path)?;
            let mut patches = Vec::with_capacity(7);
            for region in CANONICAL_REGIONS {
                patches.push(checkpoint::load_patch(&patch_path(&ckpt, region))?);
            }
            let out = pipeline::train_fusion(&cfg, &patches, &table, &m, &norm)?;
            if let Some(model) = &out.model {
                checkpoint::save_fusion(&fusion_path(&ckpt), model)?;
            }
            pipeline::save_fusion_log(&out.logs, &ckpt.join("fusion_log.csv"))?;
            cfg.save(&config_snapshot_path(&ckpt))?;
            println!(
                "fusion done ({} mode) -> {}",
                cfg.fusion.mode.as_str(),
                ckpt.display()
            );
            Ok(())
        }
        Command::Evaluate {
            scores,
            manifest,
            ckpt,
            out,
            scores_out,
            threshold,
            config,
        } => {
            let mut fold_scores = Vec::new();
            let mut policy_threshold = threshold;
            if !scores.is_empty() {
                for path in &scores {
                    fold_scores.push(load_scores(path)?);
                }
            } else {
                let (Some(manifest), Some(ckpt)) = (manifest, ckpt) else {
                    return Err(padkit::Error::InvalidInput(
                        "evaluate needs --scores files or both --manifest and --ckpt".into(),
                    ));
                };
                let cfg = config.resolve(Some(&ckpt))?;
                if policy_threshold.is_none() {
                    policy_threshold = Some(cfg.evaluate.threshold);
                }
                let m = load_manifest(&manifest)?;
                let system = load_system(&ckpt)?;
                let scored = system.evaluate_manifest(&m)?;
                if let Some(p) = scores_out {
                    save_scores(&scored, &p)?;
                }
                fold_scores.push(scored);
            }
            let threshold = policy_threshold.unwrap_or(0.5);
            let mut folds = Vec::new();
            for s in &fold_scores {
                folds.push(compute_pad_metrics(s, threshold)?);
            }
            let report = build_report(folds, &format!("fixed threshold {threshold}"));
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| padkit::Error::InvalidInput(e.to_string()))?;
            std::fs::write(&out, json.as_bytes()).map_err(|e| padkit::Error::io(&out, e))?;
            for (i, f) in report.folds.iter().enumerate() {
                println!(
                    "fold{i}: ACER {:.2}% (APCER {:.2}%, BPCER {:.2}%), EER {:.2}%, acc {:.2}%",
                    f.acer, f.apcer, f.bpcer, f.eer, f.accuracy
                );
            }
            if let Some(agg) = &report.aggregate {
                println!(
                    "mean ± std: ACER {}, EER {}",
                    agg.display["acer"], agg.display["eer"]
                );
            }
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::Predict {
            ckpt,
            manifest,
            sample_id,
            image,
            landmarks,
        } => {
            let system = load_system(&ckpt)?;
            let sample = match (manifest, image) {
                (Some(mp), None) => {
                    let m = load_manifest(&mp)?;
                    match sample_id {
                        Some(id) => m
                            .samples
                            .iter()
                            .find(|s| s.sample_id == id)
                            .cloned()
                            .ok_or_else(|| {
                                padkit::Error::InvalidInput(format!(
                                    "sample `{id}` not in manifest"
                                ))
                            })?,
                        None => m.samples.first().cloned().ok_or_else(|| {
                            padkit::Error::InvalidInput("manifest is empty".into())
                        })?,
                    }
                }
                (None, Some(img)) => {
                    let lm = landmarks.ok_or_else(|| {
                        padkit::Error::InvalidInput("--image needs --landmarks".into())
                    })?;
                    let (w, h) = imgproc::png_dimensions(&img)?;
                    padkit::data::FaceSample {
                        sample_id: img.display().to_string(),
                        subject_id: "unknown".into(),
                        image_path: img,
                        landmark_path: lm,
                        label: padkit::data::Label::BonaFide,
                        attack_type: None,
                        reference_size: (w, h),
                    }
                }
                _ => {
                    return Err(padkit::Error::InvalidInput(
                        "predict needs --manifest or --image with --landmarks".into(),
                    ))
                }
            };
            let (score, label) = system.predict(&sample)?;
            println!(
                "{} score {:.6} -> {}",
                sample.sample_id,
                score,
                label.as_manifest_str()
            );
            Ok(())
        }
        Command::Visualize {
            manifest,
            ckpt,
            out,
            limit,
        } => {
            let m = load_manifest(&manifest)?;
            let model = checkpoint::load_fullface(&phase1_path(&ckpt))?;
            let norm = ChannelStats::load(&norm_stats_path(&ckpt))?;
            std::fs::create_dir_all(&out).map_err(|e| padkit::Error::io(&out, e))?;
            let size = model.cfg.input_size;
            let colors: [[f32; 3]; 7] = [
                [1.0, 0.2, 0.2],
                [0.2, 1.0, 0.2],
                [0.2, 0.4, 1.0],
                [1.0, 1.0, 0.2],
                [1.0, 0.2, 1.0],
                [0.2, 1.0, 1.0],
                [1.0, 0.6, 0.2],
            ];
            for sample in m.samples.iter().take(limit) {
                let img = sample.load_image()?;
                let lm = sample.load_landmarks()?;
                let input = prepare_input(&img, size, &norm);
                let hm = attention::gradcam_heatmap(&model, &input, None)?;
                let display = imgproc::resize_rgb(&img, size, size);
                let overlay = attention::overlay_heatmap(&display, &hm);
                imgproc::save_png(
                    &out.join(format!("{}_heatmap.png", sample.sample_id)),
                    &overlay,
                )?;

                let patches = derive_patch_regions(&lm)?;
                let mut boxed = img.clone();
                for (region, color) in patches.regions.iter().zip(colors.iter()) {
                    imgproc::draw_rect_outline(
                        &mut boxed,
                        region.x0 as usize,
                        region.y0 as usize,
                        region.x1 as usize,
                        region.y1 as usize,
                        *color,
                        1,
                    );
                }
                imgproc::save_png(
                    &out.join(format!("{}_patches.png", sample.sample_id)),
                    &boxed,
                )?;
            }
            println!(
                "wrote {} overlay/patch image pairs -> {}",
                m.samples.len().min(limit),
                out.display()
            );
            Ok(())
        }
    }
}
