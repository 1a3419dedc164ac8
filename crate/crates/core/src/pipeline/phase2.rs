//! Phase 2: seven independent patch subnetworks trained on region crops,
//! and extraction of the attention table that guides them.

use std::time::Instant;

use ndarray::{Array4, Axis};
use rayon::prelude::*;

use crate::attention::{
    gradcam_heatmap, region_attention_scores, AttentionRow, AttentionTable,
};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::geometry::{derive_patch_regions, rescale_landmarks, CANONICAL_REGIONS};
use crate::losses::{mine_triplets, triplet_focal_node};
use crate::netcore::{FullFaceModel, Mode, PatchConfig, PatchModel};
use crate::nn::{Adam, Graph};
use crate::rng::{substream_rng, Stream};

use super::config::TrainConfig;
use super::data_prep::{balanced_batches, prepare_input, region_crops, ChannelStats, LoadedDataset};

/// Attention extraction over a manifest: Grad-CAM heatmap per sample at the
/// model's predicted class, landmarks rescaled to the heatmap resolution,
/// then top-k% pooling per canonical region.
pub fn extract_attention(
    model: &FullFaceModel,
    norm: &ChannelStats,
    manifest: &DatasetManifest,
    k_percent: f32,
) -> Result<AttentionTable> {
    let size = model.cfg.input_size;
    let rows: Result<Vec<AttentionRow>> = manifest
        .samples
        .par_iter()
        .map(|sample| {
            let img = sample.load_image()?;
            let lm = sample.load_landmarks()?;
            let input = prepare_input(&img, size, norm);
            let hm = gradcam_heatmap(model, &input, None)?;
            let scaled = rescale_landmarks(&lm, (size as u32, size as u32));
            let patches = derive_patch_regions(&scaled)?;
            let scores = region_attention_scores(&hm, &patches, k_percent)?;
            Ok(AttentionRow {
                sample_id: sample.sample_id.clone(),
                scores,
            })
        })
        .collect();
    Ok(AttentionTable { rows: rows? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2EpochLog {
    pub epoch: usize,
    pub ce: f32,
    pub tf: f32,
    pub total: f32,
    pub wall_time_s: f64,
}

pub struct Phase2Output {
    /// One model per canonical region, in canonical order.
    pub models: Vec<PatchModel>,
    pub logs: Vec<Vec<Phase2EpochLog>>,
}

/// Train the seven patch subnetworks. The loops are independent and run in
/// parallel; each region uses the same sampler stream (identical data
/// order) and its own init/mining substreams.
pub fn train_phase2(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    norm: &ChannelStats,
) -> Result<Phase2Output> {
    cfg.validate()?;
    if !manifest.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let data = LoadedDataset::load(manifest)?;

    let results: Result<Vec<(PatchModel, Vec<Phase2EpochLog>)>> = CANONICAL_REGIONS
        .par_iter()
        .enumerate()
        .map(|(region_idx, region)| train_one_patch(cfg, &data, norm, region_idx, *region))
        .collect();
    let results = results?;
    let (models, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Phase2Output { models, logs })
}

fn train_one_patch(
    cfg: &TrainConfig,
    data: &LoadedDataset,
    norm: &ChannelStats,
    region_idx: usize,
    region: crate::geometry::RegionName,
) -> Result<(PatchModel, Vec<Phase2EpochLog>)> {
    let p2 = &cfg.phase2;
    let triplet_cfg = p2.triplet();
    let weights = cfg.loss_weights();
    let crops = region_crops(data, region, p2.input, norm)?;

    let mut model = PatchModel::new(
        PatchConfig {
            input_size: p2.input,
            ..PatchConfig::default()
        },
        &mut substream_rng(cfg.seed, Stream::ModelInit, 100 + region_idx as u64),
    );
    let mut opt = Adam::new(p2.lr);
    let mut logs = Vec::with_capacity(p2.epochs);

    for epoch in 0..p2.epochs {
        let start = Instant::now();
        let batches = balanced_batches(&data.labels, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut mining_rng = substream_rng(
            cfg.seed,
            Stream::TripletMining,
            (1 + region_idx as u64) * 10_000 + epoch as u64,
        );
        let mut ce_sum = 0f64;
        let mut tf_sum = 0f64;
        let mut total_sum = 0f64;

        for batch_indices in &batches {
            let mut batch = Array4::<f32>::zeros((batch_indices.len(), 3, p2.input, p2.input));
            for (row, &i) in batch_indices.iter().enumerate() {
                batch.index_axis_mut(Axis(0), row).assign(&crops[i]);
            }
            let labels: Vec<_> = batch_indices.iter().map(|&i| data.labels[i]).collect();
            let label_idx: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();

            let mut g = Graph::new();
            let input = g.input(batch.into_dyn());
            let fwd = model.forward(&mut g, input, Mode::Train)?;
            let ce = g.softmax_cross_entropy(fwd.logits, &label_idx);
            let mut terms = vec![(ce, weights.alpha)];
            let tf_v = if p2.use_tf {
                let mined =
                    mine_triplets(&g.value2(fwd.embeddings), &labels, &triplet_cfg, &mut mining_rng);
                let tf = triplet_focal_node(&mut g, fwd.embeddings, &mined, &triplet_cfg);
                terms.push((tf, weights.beta));
                g.scalar(tf)
            } else {
                0.0
            };
            let total = g.weighted_sum(&terms);
            let total_v = g.scalar(total);
            if !total_v.is_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite patch loss ({region}) at epoch {epoch}"
                )));
            }
            let mut grads = g.backward(total);
            let bindings = model.bindings(&fwd.vars);
            let mut updates = Vec::with_capacity(bindings.ids.len());
            for ((name, id), param) in bindings
                .names
                .iter()
                .zip(bindings.ids.iter())
                .zip(model.params_mut())
            {
                if let Some(grad) = grads.take(*id) {
                    updates.push((name.clone(), param, grad));
                }
            }
            opt.step(updates);
            model.update_running_stats(&fwd.batch_stats);

            ce_sum += g.scalar(ce) as f64;
            tf_sum += tf_v as f64;
            total_sum += total_v as f64;
        }

        let n = batches.len() as f64;
        logs.push(Phase2EpochLog {
            epoch,
            ce: (ce_sum / n) as f32,
            tf: (tf_sum / n) as f32,
            total: (total_sum / n) as f32,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((model, logs))
}

pub fn save_phase2_log(
    logs: &[Vec<Phase2EpochLog>],
    path: &std::path::Path,
) -> Result<()> {
    let mut text = String::from("region,epoch,ce,tf,total,wall_time_s\n");
    for (region, region_logs) in CANONICAL_REGIONS.iter().zip(logs.iter()) {
        for l in region_logs {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                region, l.epoch, l.ce, l.tf, l.total, l.wall_time_s
            ));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
