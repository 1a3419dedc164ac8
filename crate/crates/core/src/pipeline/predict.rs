//! The assembled system: single-sample prediction, manifest scoring, and
//! the checkpoint directory layout.

use std::path::Path;

use ndarray::{Array1, Array4, Axis};
use rayon::prelude::*;

use crate::attention::{gradcam_heatmap, region_attention_scores};
use crate::checkpoint;
use crate::data::{DatasetManifest, FaceSample, Label};
use crate::error::{Error, Result};
use crate::geometry::{crop_and_resize, derive_patch_regions, rescale_landmarks, CANONICAL_REGIONS};
use crate::metrics::ScoredSample;
use crate::netcore::{
    fuse, majority_vote, vote_score, FullFaceModel, FusionModel, PatchModel, NUM_REGIONS,
};

use super::config::{FusionMode, TrainConfig};
use super::data_prep::{prepare_input, ChannelStats};

pub enum FusionKind {
    WeightedMlp(FusionModel),
    UnweightedMlp(FusionModel),
    MajorityVote,
}

impl FusionKind {
    pub fn mode(&self) -> FusionMode {
        match self {
            FusionKind::WeightedMlp(_) => FusionMode::WeightedMlp,
            FusionKind::UnweightedMlp(_) => FusionMode::UnweightedMlp,
            FusionKind::MajorityVote => FusionMode::MajorityVote,
        }
    }
}

pub struct TrainedSystem {
    pub fullface: FullFaceModel,
    /// Seven patch models in canonical region order.
    pub patches: Vec<PatchModel>,
    pub fusion: FusionKind,
    pub attention_k: f32,
    pub norm: ChannelStats,
    pub threshold: f64,
}

fn softmax_attack_prob(logits: &Array1<f32>) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = ((logits[0] - m) as f64).exp();
    let e1 = ((logits[1] - m) as f64).exp();
    e1 / (e0 + e1)
}

impl TrainedSystem {
    /// Score one sample: full-face Grad-CAM attention, patch embeddings,
    /// fusion. Returns `(attack probability, label at the threshold)`.
    pub fn predict(&self, sample: &FaceSample) -> Result<(f64, Label)> {
        let image = sample.load_image()?;
        let landmarks = sample.load_landmarks()?;
        let s = self.fullface.cfg.input_size;

        let input = prepare_input(&image, s, &self.norm);
        let heatmap = gradcam_heatmap(&self.fullface, &input, None)?;
        let scaled = rescale_landmarks(&landmarks, (s as u32, s as u32));
        let hm_patches = derive_patch_regions(&scaled)?;
        let attention = region_attention_scores(&heatmap, &hm_patches, self.attention_k)?;

        let native_patches = derive_patch_regions(&landmarks)?;
        let patch_in = self.patches[0].cfg.input_size;
        let mut embeddings: Vec<Array1<f32>> = Vec::with_capacity(NUM_REGIONS);
        let mut patch_logits = [[0f32; 2]; NUM_REGIONS];
        for (r, (region, model)) in CANONICAL_REGIONS
            .iter()
            .zip(self.patches.iter())
            .enumerate()
        {
            let mut crop = crop_and_resize(&image, native_patches.get(*region), patch_in, patch_in)?;
            self.norm.standardize(&mut crop);
            let mut batch = Array4::<f32>::zeros((1, 3, patch_in, patch_in));
            batch.index_axis_mut(Axis(0), 0).assign(&crop);
            let (emb, logits) = model.forward_eval(&batch)?;
            embeddings.push(emb.row(0).to_owned());
            patch_logits[r] = [logits[(0, 0)], logits[(0, 1)]];
        }
        let embeddings: [Array1<f32>; NUM_REGIONS] =
            embeddings.try_into().map_err(|_| Error::ShapeMismatch("patch count".into()))?;

        let score = match &self.fusion {
            FusionKind::WeightedMlp(m) => {
                let logits = fuse(&embeddings, &attention.scores, m)?;
                softmax_attack_prob(&logits)
            }
            FusionKind::UnweightedMlp(m) => {
                let logits = fuse(&embeddings, &[1.0; NUM_REGIONS], m)?;
                softmax_attack_prob(&logits)
            }
            FusionKind::MajorityVote => {
                let _ = majority_vote(&patch_logits);
                vote_score(&patch_logits) as f64
            }
        };
        let label = if score >= self.threshold {
            Label::Attack
        } else {
            Label::BonaFide
        };
        Ok((score, label))
    }

    /// Score every sample in a manifest.
    pub fn evaluate_manifest(&self, manifest: &DatasetManifest) -> Result<Vec<ScoredSample>> {
        manifest
            .samples
            .par_iter()
            .map(|sample| {
                let (score, _) = self.predict(sample)?;
                Ok(ScoredSample {
                    sample_id: sample.sample_id.clone(),
                    subject_id: sample.subject_id.clone(),
                    label: sample.label,
                    attack_type: sample.attack_type.clone(),
                    score,
                })
            })
            .collect()
    }
}

// ---- checkpoint directory layout ----

pub fn phase1_path(dir: &Path) -> std::path::PathBuf {
    dir.join("phase1.ckpt")
}

pub fn patch_path(dir: &Path, region: crate::geometry::RegionName) -> std::path::PathBuf {
    dir.join(format!("patch_{}.ckpt", region.as_str()))
}

pub fn fusion_path(dir: &Path) -> std::path::PathBuf {
    dir.join("fusion.ckpt")
}

pub fn attention_path(dir: &Path) -> std::path::PathBuf {
    dir.join("attention.csv")
}

pub fn norm_stats_path(dir: &Path) -> std::path::PathBuf {
    dir.join("norm_stats.txt")
}

pub fn config_snapshot_path(dir: &Path) -> std::path::PathBuf {
    dir.join("config_snapshot")
}

/// Load a full system from a checkpoint directory written by the training
/// stages. The config snapshot supplies fusion mode, attention k, and the
/// operating threshold.
pub fn load_system(dir: &Path) -> Result<TrainedSystem> {
    let cfg = TrainConfig::load(Some(&config_snapshot_path(dir)), &[])?;
    let fullface = checkpoint::load_fullface(&phase1_path(dir))?;
    let mut patches = Vec::with_capacity(NUM_REGIONS);
    for region in CANONICAL_REGIONS {
        patches.push(checkpoint::load_patch(&patch_path(dir, region))?);
    }
    let fusion = match cfg.fusion.mode {
        FusionMode::WeightedMlp => FusionKind::WeightedMlp(checkpoint::load_fusion(&fusion_path(dir))?),
        FusionMode::UnweightedMlp => {
            FusionKind::UnweightedMlp(checkpoint::load_fusion(&fusion_path(dir))?)
        }
        FusionMode::MajorityVote => FusionKind::MajorityVote,
    };
    let norm = ChannelStats::load(&norm_stats_path(dir))?;
    Ok(TrainedSystem {
        fullface,
        patches,
        fusion,
        attention_k: cfg.attention.k_percent,
        norm,
        threshold: cfg.evaluate.threshold,
    })
}
