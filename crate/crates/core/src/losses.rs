//! Training objectives: triplet focal loss with online random hard-negative
//! mining, the instance-aware whitening (AIAW) loss, cross-entropy, and the
//! phase-1 / phase-2 composites.

use ndarray::{Array2, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::nn::{instance_norm, Graph, Triplet, VarId};

/// Exponent clamp applied before `exp` in the focal terms.
const EXP_CLAMP: f32 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub sigma: f32,
    pub margin: f32,
}

impl TripletConfig {
    /// Full-face network settings: sigma 2, margin 0.6.
    pub fn fullface() -> Self {
        TripletConfig { sigma: 2.0, margin: 0.6 }
    }

    /// Patch network settings: sigma 1.5, margin 1.
    pub fn patch() -> Self {
        TripletConfig { sigma: 1.5, margin: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 || self.sigma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "triplet config needs margin >= 0 and sigma > 0, got m={} sigma={}",
                self.margin, self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiawConfig {
    /// Fraction of covariance entries selected for bona fide samples.
    pub k_live: f64,
    /// Fraction selected for attack samples.
    pub k_attack: f64,
    pub epsilon: f32,
}

impl Default for AiawConfig {
    fn default() -> Self {
        // literal reading of "k_l = 0.09% and k_m = 0.06%"
        AiawConfig {
            k_live: 0.0009,
            k_attack: 0.0006,
            epsilon: 1e-5,
        }
    }
}

impl AiawConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_live", self.k_live), ("k_attack", self.k_attack)] {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in (0, 1], got {k}"
                )));
            }
        }
        Ok(())
    }

    fn k_for(&self, label: Label) -> f64 {
        match label {
            Label::BonaFide => self.k_live,
            Label::Attack => self.k_attack,
        }
    }
}

/// Weights of every loss term: `alpha1..gamma2` combine the six phase-1
/// components, `alpha`/`beta` combine cross-entropy and triplet focal in the
/// per-patch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f32,
    pub beta1: f32,
    pub gamma1: f32,
    pub alpha2: f32,
    pub beta2: f32,
    pub gamma2: f32,
    pub alpha: f32,
    pub beta: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            beta1: 0.1,
            gamma1: 1.0,
            alpha2: 1.0,
            beta2: 0.1,
            gamma2: 1.0,
            alpha: 1.0,
            beta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1, self.beta1, self.gamma1, self.alpha2, self.beta2, self.gamma2,
            self.alpha, self.beta,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Dense squared-Euclidean distance matrix.
pub fn pairwise_sq_dist(embeddings: &ArrayView2<f32>) -> Array2<f32> {
    let n = embeddings.nrows();
    let mut d = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff: f32 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[(i, j)] = diff;
            d[(j, i)] = diff;
        }
    }
    d
}

fn focal(d: f32, sigma: f32) -> f32 {
    (d / sigma).min(EXP_CLAMP).exp()
}

/// Online random hard-negative mining. For every ordered same-label
/// `(anchor, positive)` pair, the margin-violating negatives are
/// `{n : exp(D(a,p)/sigma) - exp(D(a,n)/sigma) + m > 0}`; one is drawn
/// uniformly when the set is non-empty, otherwise the pair is skipped.
pub fn mine_triplets(
    embeddings: &ArrayView2<f32>,
    labels: &[Label],
    cfg: &TripletConfig,
    rng: &mut ChaCha8Rng,
) -> TripletBatch {
    let n = embeddings.nrows();
    assert_eq!(n, labels.len(), "label count mismatch");
    let d = pairwise_sq_dist(embeddings);
    let mut triplets = Vec::new();
    for anchor in 0..n {
        for positive in 0..n {
            if anchor == positive || labels[anchor] != labels[positive] {
                continue;
            }
            let fap = focal(d[(anchor, positive)], cfg.sigma);
            let violators: Vec<usize> = (0..n)
                .filter(|&neg| {
                    labels[neg] != labels[anchor]
                        && fap - focal(d[(anchor, neg)], cfg.sigma) + cfg.margin > 0.0
                })
                .collect();
            if violators.is_empty() {
                continue;
            }
            let pick = violators[rng.gen_range(0..violators.len())];
            triplets.push(Triplet {
                anchor,
                positive,
                negative: pick,
            });
        }
    }
    TripletBatch { triplets }
}

/// Triplet focal loss from a precomputed distance matrix:
/// `sum_i max(0, exp(D(a,p)/sigma) - exp(D(a,n)/sigma) + m)`.
/// Terms are evaluated and accumulated in f64 so large focal values do not
/// lose the margin to cancellation.
pub fn triplet_focal_loss(batch: &TripletBatch, d: &ArrayView2<f32>, cfg: &TripletConfig) -> f32 {
    let focal64 =
        |dist: f32| ((dist as f64) / (cfg.sigma as f64)).min(EXP_CLAMP as f64).exp();
    batch
        .triplets
        .iter()
        .map(|t| {
            (focal64(d[(t.anchor, t.positive)]) - focal64(d[(t.anchor, t.negative)])
                + cfg.margin as f64)
                .max(0.0)
        })
        .sum::<f64>() as f32
}

/// Differentiable triplet focal term on an embeddings node.
pub fn triplet_focal_node(
    g: &mut Graph,
    embeddings: VarId,
    batch: &TripletBatch,
    cfg: &TripletConfig,
) -> VarId {
    if batch.is_empty() {
        return g.scalar_input(0.0);
    }
    g.triplet_focal(embeddings, &batch.triplets, cfg.sigma, cfg.margin)
}

// ---- AIAW ----

fn upper_tri_count(c: usize) -> usize {
    c * (c - 1) / 2
}

/// Per-sample covariance `Z Z^T / (h*w)` of an instance-normalized map.
fn covariance(z: &ArrayView4<f32>, sample: usize) -> Array2<f32> {
    let (_, c, h, w) = z.dim();
    let zs = z.index_axis(Axis(0), sample);
    let zf = zs.into_shape_with_order((c, h * w)).unwrap();
    let mut cov = zf.dot(&zf.t());
    cov.mapv_inplace(|v| v / (h * w) as f32);
    cov
}

/// Selection masks: for each sample, the top `ceil(k_c * E)` strictly-upper-
/// triangular entries ranked by `|cov_org - cov_aug|` (descending), ties
/// broken by ascending flat index. `k_c` depends on the sample's label.
pub fn aiaw_masks(
    z_org: &ArrayView4<f32>,
    z_aug: &ArrayView4<f32>,
    labels: &[Label],
    cfg: &AiawConfig,
) -> Vec<Vec<(u32, u32)>> {
    let (n, c, _, _) = z_org.dim();
    assert_eq!(z_org.dim(), z_aug.dim(), "branch shape mismatch");
    assert_eq!(n, labels.len());
    let e = upper_tri_count(c);
    (0..n)
        .into_par_iter()
        .map(|s| {
            let cov_o = covariance(z_org, s);
            let cov_a = covariance(z_aug, s);
            let mut entries: Vec<(f32, u32, u32)> = Vec::with_capacity(e);
            for i in 0..c {
                for j in (i + 1)..c {
                    entries.push(((cov_o[(i, j)] - cov_a[(i, j)]).abs(), i as u32, j as u32));
                }
            }
            let k = ((cfg.k_for(labels[s]) * e as f64).ceil() as usize).clamp(1, e);
            let cmp = |a: &(f32, u32, u32), b: &(f32, u32, u32)| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then((a.1, a.2).cmp(&(b.1, b.2)))
            };
            if k < entries.len() {
                entries.select_nth_unstable_by(k - 1, cmp);
                entries.truncate(k);
            }
            let mut mask: Vec<(u32, u32)> = entries.iter().map(|e| (e.1, e.2)).collect();
            mask.sort_unstable();
            mask
        })
        .collect()
}

/// Differentiable AIAW terms for the org and aug branches. Features are
/// instance-normalized inside; both terms share the same selection mask.
pub fn aiaw_terms(
    g: &mut Graph,
    f_org: VarId,
    f_aug: VarId,
    labels: &[Label],
    cfg: &AiawConfig,
) -> Result<(VarId, VarId)> {
    cfg.validate()?;
    let (_, _, h, w) = g.value4(f_org).dim();
    if h * w < 2 {
        return Err(Error::InvalidInput(
            "AIAW needs at least 2 spatial positions per feature map".into(),
        ));
    }
    let z_org = instance_norm(g, f_org, cfg.epsilon);
    let z_aug = if f_aug == f_org {
        z_org
    } else {
        instance_norm(g, f_aug, cfg.epsilon)
    };
    let masks = aiaw_masks(&g.value4(z_org), &g.value4(z_aug), labels, cfg);
    let term_org = g.masked_cov_abs_mean(z_org, &masks);
    let term_aug = g.masked_cov_abs_mean(z_aug, &masks);
    Ok((term_org, term_aug))
}

/// AIAW loss value: mean over samples and both branches of the mean
/// absolute selected covariance entry.
pub fn aiaw_loss(
    f_org: &ArrayView4<f32>,
    f_aug: &ArrayView4<f32>,
    labels: &[Label],
    cfg: &AiawConfig,
) -> Result<f32> {
    let mut g = Graph::new();
    let o = g.input(f_org.to_owned().into_dyn());
    let a = g.input(f_aug.to_owned().into_dyn());
    let (t_org, t_aug) = aiaw_terms(&mut g, o, a, labels, cfg)?;
    Ok((g.scalar(t_org) + g.scalar(t_aug)) / 2.0)
}

/// The six phase-1 loss components, in org / aug branch order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Phase1Parts {
    pub aiaw_org: f32,
    pub tf_org: f32,
    pub ce_org: f32,
    pub aiaw_aug: f32,
    pub tf_aug: f32,
    pub ce_aug: f32,
}

/// Weighted phase-1 total:
/// `a1*AIAW_org + b1*TF_org + g1*CE_org + a2*AIAW_aug + b2*TF_aug + g2*CE_aug`.
pub fn phase1_total_loss(parts: &Phase1Parts, w: &LossWeights) -> f32 {
    w.alpha1 * parts.aiaw_org
        + w.beta1 * parts.tf_org
        + w.gamma1 * parts.ce_org
        + w.alpha2 * parts.aiaw_aug
        + w.beta2 * parts.tf_aug
        + w.gamma2 * parts.ce_aug
}

/// Per-patch loss: `alpha * CE + beta * TF`.
pub fn patch_loss(ce: f32, tf: f32, w: &LossWeights) -> f32 {
    w.alpha * ce + w.beta * tf
}

/// Plain (non-graph) softmax cross-entropy, mean over rows.
pub fn cross_entropy(logits: &ArrayView2<f32>, labels: &[Label]) -> f32 {
    let mut loss = 0.0f32;
    for (row, lab) in logits.rows().into_iter().zip(labels.iter()) {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let denom: f32 = row.iter().map(|v| (v - max).exp()).sum();
        let y = lab.class_index();
        loss -= (row[y] - max) - denom.ln();
    }
    loss / labels.len() as f32
}
