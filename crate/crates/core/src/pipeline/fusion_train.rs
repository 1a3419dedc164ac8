//! Fusion training: attention-weighted patch embeddings through the MLP.

use std::time::Instant;

use ndarray::{Array2, Array4, Axis};

use crate::attention::AttentionTable;
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::geometry::CANONICAL_REGIONS;
use crate::netcore::{FusionModel, PatchModel, NUM_REGIONS};
use crate::nn::{Adam, Graph};
use crate::rng::{substream_rng, Stream};

use super::config::{FusionMode, TrainConfig};
use super::data_prep::{balanced_batches, region_crops, ChannelStats, LoadedDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionEpochLog {
    pub epoch: usize,
    pub ce: f32,
    pub wall_time_s: f64,
}

/// Per-sample fused inputs `(N, 7 * embed_dim)`: frozen patch embeddings in
/// canonical order, each block scaled by its attention score (or by 1 in
/// unweighted mode).
pub fn fused_inputs(
    patches: &[PatchModel],
    attention: &AttentionTable,
    data: &LoadedDataset,
    norm: &ChannelStats,
    weighted: bool,
) -> Result<Array2<f32>> {
    assert_eq!(patches.len(), NUM_REGIONS);
    let n = data.len();
    let embed_dim = patches[0].cfg.embed_dim;
    let input = patches[0].cfg.input_size;
    let mut fused = Array2::<f32>::zeros((n, NUM_REGIONS * embed_dim));
    let att = attention.index();

    for (r, (region, model)) in CANONICAL_REGIONS.iter().zip(patches.iter()).enumerate() {
        let crops = region_crops(data, *region, input, norm)?;
        let mut batch = Array4::<f32>::zeros((n, 3, input, input));
        for (i, crop) in crops.iter().enumerate() {
            batch.index_axis_mut(Axis(0), i).assign(crop);
        }
        let (embeddings, _) = model.forward_eval(&batch)?;
        for i in 0..n {
            let weight = if weighted {
                att.get(data.sample_ids[i].as_str())
                    .ok_or_else(|| Error::MissingAttention(data.sample_ids[i].clone()))?
                    .scores[r]
            } else {
                1.0
            };
            for j in 0..embed_dim {
                fused[(i, r * embed_dim + j)] = weight * embeddings[(i, j)];
            }
        }
    }
    Ok(fused)
}

pub struct FusionOutput {
    /// None in majority-vote mode (nothing is trained).
    pub model: Option<FusionModel>,
    pub logs: Vec<FusionEpochLog>,
}

/// Train the fusion MLP with cross-entropy over frozen patch embeddings.
pub fn train_fusion(
    cfg: &TrainConfig,
    patches: &[PatchModel],
    attention: &AttentionTable,
    manifest: &DatasetManifest,
    norm: &ChannelStats,
) -> Result<FusionOutput> {
    cfg.validate()?;
    if cfg.fusion.mode == FusionMode::MajorityVote {
        return Ok(FusionOutput {
            model: None,
            logs: Vec::new(),
        });
    }
    if !manifest.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let data = LoadedDataset::load(manifest)?;
    let weighted = cfg.fusion.mode == FusionMode::WeightedMlp;
    let fused = fused_inputs(patches, attention, &data, norm, weighted)?;

    let embed_dim = patches[0].cfg.embed_dim;
    let mut model = FusionModel::new(
        embed_dim,
        cfg.fusion.hidden,
        &mut substream_rng(cfg.seed, Stream::ModelInit, 200),
    );
    let mut opt = Adam::new(cfg.fusion.lr);
    let mut logs = Vec::with_capacity(cfg.fusion.epochs);

    for epoch in 0..cfg.fusion.epochs {
        let start = Instant::now();
        let batches = balanced_batches(&data.labels, cfg.batch_size, cfg.seed, 500_000 + epoch as u64)?;
        let mut ce_sum = 0f64;
        for batch_indices in &batches {
            let mut batch = Array2::<f32>::zeros((batch_indices.len(), fused.ncols()));
            for (row, &i) in batch_indices.iter().enumerate() {
                batch.row_mut(row).assign(&fused.row(i));
            }
            let label_idx: Vec<usize> = batch_indices
                .iter()
                .map(|&i| data.labels[i].class_index())
                .collect();
            let mut g = Graph::new();
            let input = g.input(batch.into_dyn());
            let (logits, vars) = model.forward(&mut g, input)?;
            let ce = g.softmax_cross_entropy(logits, &label_idx);
            let mut grads = g.backward(ce);
            let bindings = model.bindings(&vars);
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
            ce_sum += g.scalar(ce) as f64;
        }
        logs.push(FusionEpochLog {
            epoch,
            ce: (ce_sum / batches.len() as f64) as f32,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(FusionOutput {
        model: Some(model),
        logs,
    })
}

pub fn save_fusion_log(logs: &[FusionEpochLog], path: &std::path::Path) -> Result<()> {
    let mut text = String::from("epoch,ce,wall_time_s\n");
    for l in logs {
        text.push_str(&format!("{},{},{}\n", l.epoch, l.ce, l.wall_time_s));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
