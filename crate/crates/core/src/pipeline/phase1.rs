//! Phase 1: full-face network training with CSA, AIAW and triplet focal
//! metric learning.

use std::time::Instant;

use ndarray::Array2;

use crate::data::{DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::losses::{
    aiaw_terms, mine_triplets, triplet_focal_node, Phase1Parts,
};
use crate::netcore::{csa_augment, feature_stats_rows, FullFaceConfig, FullFaceModel, Mode, StyleBank};
use crate::nn::{Adam, Graph};
use crate::rng::{stream_rng, substream_rng, Stream};

use super::config::TrainConfig;
use super::data_prep::{balanced_batches, gather_batch, ChannelStats, LoadedDataset};

/// Per-epoch averages of every phase-1 loss component.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1EpochLog {
    pub epoch: usize,
    pub parts: Phase1Parts,
    pub total: f32,
    pub wall_time_s: f64,
}

pub struct Phase1Output {
    pub model: FullFaceModel,
    pub norm: ChannelStats,
    pub logs: Vec<Phase1EpochLog>,
}

/// Train the full-face network. Every random draw derives from
/// `cfg.seed`, so identical inputs reproduce identical parameters.
pub fn train_phase1(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Phase1Output> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::InvalidInput("training manifest is empty".into()));
    }
    if !manifest.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let data = LoadedDataset::load(manifest)?;
    let norm = ChannelStats::compute(&data.images);
    let p1 = &cfg.phase1;
    let weights = cfg.loss_weights();
    let aiaw_cfg = p1.aiaw();
    let triplet_cfg = p1.triplet();

    let mut model = FullFaceModel::new(
        FullFaceConfig::for_input(p1.input),
        &mut stream_rng(cfg.seed, Stream::ModelInit),
    );
    if model.feature_size() < 2 {
        return Err(Error::InvalidConfig(format!(
            "input {} leaves a degenerate {}x{} feature map",
            p1.input,
            model.feature_size(),
            model.feature_size()
        )));
    }
    let mut bank_rng = stream_rng(cfg.seed, Stream::StyleBankInit);
    let mut opt = Adam::new(p1.lr);
    let mut logs = Vec::with_capacity(p1.epochs);

    for epoch in 0..p1.epochs {
        let start = Instant::now();
        let batches = balanced_batches(&data.labels, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut mining_rng = substream_rng(cfg.seed, Stream::TripletMining, epoch as u64);
        let mut csa_rng = substream_rng(cfg.seed, Stream::CsaSampling, epoch as u64);
        let mut sums = Phase1Parts::default();
        let mut total_sum = 0f64;
        // instance stats observed this epoch, for the style-bank update
        let mut epoch_stats: Vec<Array2<f32>> = Vec::new();
        let mut epoch_labels: Vec<Label> = Vec::new();

        for batch_indices in &batches {
            let (batch, labels) = gather_batch(&data, batch_indices, p1.input, &norm);
            let label_idx: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();

            let mut g = Graph::new();
            let input = g.input(batch.into_dyn());
            let fwd = model.forward(&mut g, input, Mode::Train)?;

            // style branch
            let f_aug = if p1.use_csa {
                if model.style_bank.is_none() {
                    let stats = feature_stats_rows(&g.value4(fwd.f_org).to_owned());
                    model.style_bank = Some(StyleBank::init_from_stats(
                        &stats,
                        &labels,
                        model.cfg.num_styles,
                        &mut bank_rng,
                    ));
                }
                let bank = model.style_bank.as_ref().unwrap();
                let (aug, _) = csa_augment(&mut g, fwd.f_org, bank, &labels, 1e-5, &mut csa_rng);
                epoch_stats.push(feature_stats_rows(&g.value4(fwd.f_org).to_owned()));
                epoch_labels.extend(labels.iter().copied());
                aug
            } else {
                fwd.f_org
            };
            let (emb_aug, logits_aug) = if p1.use_csa {
                model.heads(&mut g, f_aug, &fwd.vars)
            } else {
                (fwd.embeddings, fwd.logits)
            };

            // loss terms
            let ce_org = g.softmax_cross_entropy(fwd.logits, &label_idx);
            let ce_aug = if p1.use_csa {
                g.softmax_cross_entropy(logits_aug, &label_idx)
            } else {
                ce_org
            };
            let mut terms = vec![(ce_org, weights.gamma1), (ce_aug, weights.gamma2)];

            let (tf_org_v, tf_aug_v) = if p1.use_tf {
                let b_org =
                    mine_triplets(&g.value2(fwd.embeddings), &labels, &triplet_cfg, &mut mining_rng);
                let tf_org = triplet_focal_node(&mut g, fwd.embeddings, &b_org, &triplet_cfg);
                let tf_aug = if p1.use_csa {
                    let b_aug =
                        mine_triplets(&g.value2(emb_aug), &labels, &triplet_cfg, &mut mining_rng);
                    triplet_focal_node(&mut g, emb_aug, &b_aug, &triplet_cfg)
                } else {
                    tf_org
                };
                terms.push((tf_org, weights.beta1));
                terms.push((tf_aug, weights.beta2));
                let vals = (g.scalar(tf_org), g.scalar(tf_aug));
                (vals.0, vals.1)
            } else {
                (0.0, 0.0)
            };

            let (aiaw_org_v, aiaw_aug_v) = if p1.use_aiaw {
                let (a_org, a_aug) = aiaw_terms(&mut g, fwd.f_org, f_aug, &labels, &aiaw_cfg)?;
                terms.push((a_org, weights.alpha1));
                terms.push((a_aug, weights.alpha2));
                (g.scalar(a_org), g.scalar(a_aug))
            } else {
                (0.0, 0.0)
            };

            let total = g.weighted_sum(&terms);
            let total_v = g.scalar(total);
            if !total_v.is_finite() {
                return Err(Error::Runtime(format!(
                    "non-finite loss at epoch {epoch}"
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

            sums.ce_org += g.scalar(ce_org);
            sums.ce_aug += g.scalar(ce_aug);
            sums.tf_org += tf_org_v;
            sums.tf_aug += tf_aug_v;
            sums.aiaw_org += aiaw_org_v;
            sums.aiaw_aug += aiaw_aug_v;
            total_sum += total_v as f64;
        }

        if p1.use_csa && !epoch_stats.is_empty() {
            let total_rows: usize = epoch_stats.iter().map(|s| s.nrows()).sum();
            let cols = epoch_stats[0].ncols();
            let mut all = Array2::<f32>::zeros((total_rows, cols));
            let mut row = 0;
            for s in &epoch_stats {
                all.slice_mut(ndarray::s![row..row + s.nrows(), ..]).assign(s);
                row += s.nrows();
            }
            if let Some(bank) = model.style_bank.as_mut() {
                bank.momentum_update(&all, &epoch_labels, 0.99);
            }
        }

        let n = batches.len() as f32;
        logs.push(Phase1EpochLog {
            epoch,
            parts: Phase1Parts {
                aiaw_org: sums.aiaw_org / n,
                tf_org: sums.tf_org / n,
                ce_org: sums.ce_org / n,
                aiaw_aug: sums.aiaw_aug / n,
                tf_aug: sums.tf_aug / n,
                ce_aug: sums.ce_aug / n,
            },
            total: (total_sum / n as f64) as f32,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }

    Ok(Phase1Output { model, norm, logs })
}

/// Write the per-epoch log as CSV.
pub fn save_phase1_log(logs: &[Phase1EpochLog], path: &std::path::Path) -> Result<()> {
    let mut text =
        String::from("epoch,aiaw_org,tf_org,ce_org,aiaw_aug,tf_aug,ce_aug,total,wall_time_s\n");
    for l in logs {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.epoch,
            l.parts.aiaw_org,
            l.parts.tf_org,
            l.parts.ce_org,
            l.parts.aiaw_aug,
            l.parts.tf_aug,
            l.parts.ce_aug,
            l.total,
            l.wall_time_s
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
