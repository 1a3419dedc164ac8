//! Two-phase training orchestration: phase-1 full-face training, attention
//! extraction, phase-2 patch training, fusion training, and prediction.

mod config;
mod data_prep;
mod fusion_train;
mod phase1;
mod phase2;
mod predict;

pub use config::{
    AttentionConfig, EvaluateConfig, FusionConfig, FusionMode, Phase1Config, Phase2Config,
    TrainConfig,
};
pub use data_prep::{
    balanced_batches, gather_batch, prepare_input, region_crops, ChannelStats, LoadedDataset,
};
pub use fusion_train::{fused_inputs, save_fusion_log, train_fusion, FusionEpochLog, FusionOutput};
pub use phase1::{save_phase1_log, train_phase1, Phase1EpochLog, Phase1Output};
pub use phase2::{extract_attention, save_phase2_log, train_phase2, Phase2EpochLog, Phase2Output};
pub use predict::{
    attention_path, config_snapshot_path, fusion_path, load_system, norm_stats_path, patch_path,
    phase1_path, FusionKind, TrainedSystem,
};

use std::path::Path;

use crate::checkpoint;
use crate::data::DatasetManifest;
use crate::error::Result;
use crate::geometry::CANONICAL_REGIONS;

/// Run the whole training protocol into a checkpoint directory:
/// phase 1 -> attention table -> phase 2 -> fusion, then return the
/// assembled system.
pub fn run_full_training(
    cfg: &TrainConfig,
    train: &DatasetManifest,
    out_dir: &Path,
) -> Result<TrainedSystem> {
    std::fs::create_dir_all(out_dir).map_err(|e| crate::Error::io(out_dir, e))?;
    cfg.save(&config_snapshot_path(out_dir))?;

    let p1 = train_phase1(cfg, train)?;
    checkpoint::save_fullface(&phase1_path(out_dir), &p1.model)?;
    p1.norm.save(&norm_stats_path(out_dir))?;
    save_phase1_log(&p1.logs, &out_dir.join("phase1_log.csv"))?;

    let table = extract_attention(&p1.model, &p1.norm, train, cfg.attention.k_percent)?;
    table.save(&attention_path(out_dir))?;

    let p2 = train_phase2(cfg, train, &p1.norm)?;
    for (region, model) in CANONICAL_REGIONS.iter().zip(p2.models.iter()) {
        checkpoint::save_patch(&patch_path(out_dir, *region), model)?;
    }
    save_phase2_log(&p2.logs, &out_dir.join("phase2_log.csv"))?;

    let fusion_out = train_fusion(cfg, &p2.models, &table, train, &p1.norm)?;
    let fusion = match (cfg.fusion.mode, fusion_out.model) {
        (FusionMode::WeightedMlp, Some(m)) => {
            checkpoint::save_fusion(&fusion_path(out_dir), &m)?;
            FusionKind::WeightedMlp(m)
        }
        (FusionMode::UnweightedMlp, Some(m)) => {
            checkpoint::save_fusion(&fusion_path(out_dir), &m)?;
            FusionKind::UnweightedMlp(m)
        }
        _ => FusionKind::MajorityVote,
    };
    save_fusion_log(&fusion_out.logs, &out_dir.join("fusion_log.csv"))?;

    Ok(TrainedSystem {
        fullface: p1.model,
        patches: p2.models,
        fusion,
        attention_k: cfg.attention.k_percent,
        norm: p1.norm,
        threshold: cfg.evaluate.threshold,
    })
}
