//! Full-face network and the categorical style assembly (CSA) module.
//!
//! Backbone: stride-2 conv/BN/ReLU stages, then a 1x1 convolution reducing
//! to 640 channels (the feature map Grad-CAM sees and the whitening loss
//! operates on), global average pooling, a 64-d embedding head, and a 2-way
//! classifier head.

use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::nn::{instance_stats, BatchStats, Graph, VarId};

use super::{default_stages, ConvBlock, ConvBlockVars, Linear, Mode, ParamBindings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFaceConfig {
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub reduce_channels: usize,
    pub embed_dim: usize,
    pub num_styles: usize,
}

impl FullFaceConfig {
    pub fn for_input(input_size: usize) -> Self {
        FullFaceConfig {
            input_size,
            stage_channels: default_stages(input_size),
            reduce_channels: 640,
            embed_dim: 64,
            num_styles: 64,
        }
    }
}

impl Default for FullFaceConfig {
    fn default() -> Self {
        FullFaceConfig::for_input(256)
    }
}

/// One base style: per-channel feature statistics tagged with the class
/// they were harvested from.
#[derive(Debug, Clone)]
pub struct StyleEntry {
    pub label: Label,
    pub mean: Array1<f32>,
    pub std: Array1<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct StyleBank {
    pub styles: Vec<StyleEntry>,
}

impl StyleBank {
    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }

    fn indices_for(&self, label: Label) -> Vec<usize> {
        let same: Vec<usize> = self
            .styles
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        if same.is_empty() {
            // empty category: fall back to the whole bank
            (0..self.styles.len()).collect()
        } else {
            same
        }
    }

    /// k-means (k-means++ seeding, fixed Lloyd iterations) over per-sample
    /// `(mu, sigma)` pairs, run per class, cycling centroids to fill
    /// `num_styles` slots. `stats` rows are `mu ++ sigma`.
    pub fn init_from_stats(
        stats: &Array2<f32>,
        labels: &[Label],
        num_styles: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c = stats.ncols() / 2;
        let mut styles = Vec::with_capacity(num_styles);
        let classes = [Label::BonaFide, Label::Attack];
        let present: Vec<Label> = classes
            .into_iter()
            .filter(|lab| labels.contains(lab))
            .collect();
        assert!(!present.is_empty(), "style bank needs at least one sample");
        let per_class = num_styles / present.len();
        for (ci, lab) in present.iter().enumerate() {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| *l == lab)
                .map(|(i, _)| i)
                .collect();
            let slots = if ci + 1 == present.len() {
                num_styles - per_class * (present.len() - 1)
            } else {
                per_class
            };
            let k = slots.min(rows.len()).max(1);
            let centroids = kmeans(stats, &rows, k, rng);
            for s in 0..slots {
                let cen = &centroids[s % centroids.len()];
                styles.push(StyleEntry {
                    label: *lab,
                    mean: Array1::from_iter(cen[..c].iter().copied()),
                    std: Array1::from_iter(cen[c..].iter().map(|v| v.max(1e-4))),
                });
            }
        }
        StyleBank { styles }
    }

    /// Momentum update: each observed `(mu, sigma)` pair is assigned to the
    /// nearest same-class style, then every style moves toward the mean of
    /// its assigned pairs with factor `1 - momentum`.
    pub fn momentum_update(&mut self, stats: &Array2<f32>, labels: &[Label], momentum: f32) {
        if self.styles.is_empty() {
            return;
        }
        let c = stats.ncols() / 2;
        let mut sums: Vec<Array1<f32>> = self
            .styles
            .iter()
            .map(|_| Array1::zeros(stats.ncols()))
            .collect();
        let mut counts = vec![0usize; self.styles.len()];
        for (row, lab) in stats.rows().into_iter().zip(labels.iter()) {
            let candidates = self.indices_for(*lab);
            let mut best = candidates[0];
            let mut best_d = f32::INFINITY;
            for &i in &candidates {
                let s = &self.styles[i];
                let mut d = 0.0f32;
                for j in 0..c {
                    let dm = row[j] - s.mean[j];
                    let ds = row[c + j] - s.std[j];
                    d += dm * dm + ds * ds;
                }
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            sums[best] += &row;
            counts[best] += 1;
        }
        for (i, style) in self.styles.iter_mut().enumerate() {
            if counts[i] == 0 {
                continue;
            }
            let target = &sums[i] / counts[i] as f32;
            for j in 0..c {
                style.mean[j] = momentum * style.mean[j] + (1.0 - momentum) * target[j];
                style.std[j] = (momentum * style.std[j] + (1.0 - momentum) * target[c + j]).max(1e-4);
            }
        }
    }
}

fn kmeans(stats: &Array2<f32>, rows: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let dim = stats.ncols();
    let dist = |a: &[f32], b: ndarray::ArrayView1<f32>| -> f32 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    // k-means++ seeding
    let first = rows[rng.gen_range(0..rows.len())];
    let mut centroids: Vec<Vec<f32>> = vec![stats.row(first).to_vec()];
    while centroids.len() < k {
        let d2: Vec<f32> = rows
            .iter()
            .map(|&r| {
                centroids
                    .iter()
                    .map(|c| dist(c, stats.row(r)))
                    .fold(f32::INFINITY, f32::min)
            })
            .collect();
        let total: f32 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..rows.len())
        } else {
            let mut t = rng.gen_range(0.0..total);
            let mut chosen = rows.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        };
        centroids.push(stats.row(rows[idx]).to_vec());
    }
    // Lloyd iterations
    for _ in 0..10 {
        let mut sums = vec![vec![0f32; dim]; k];
        let mut counts = vec![0usize; k];
        for &r in rows {
            let row = stats.row(r);
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for (i, c) in centroids.iter().enumerate() {
                let d = dist(c, row);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            for j in 0..dim {
                sums[best][j] += row[j];
            }
            counts[best] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                for j in 0..dim {
                    centroids[i][j] = sums[i][j] / counts[i] as f32;
                }
            }
        }
    }
    centroids
}

#[derive(Clone)]
pub struct FullFaceModel {
    pub cfg: FullFaceConfig,
    pub stages: Vec<ConvBlock>,
    pub reduce: ConvBlock,
    pub embed: Linear,
    pub cls: Linear,
    pub style_bank: Option<StyleBank>,
}

pub struct FullFaceVars {
    pub stages: Vec<ConvBlockVars>,
    pub reduce: ConvBlockVars,
    pub embed: (VarId, VarId),
    pub cls: (VarId, VarId),
}

pub struct FullFaceForward {
    /// Reduced 640-channel feature map (the Grad-CAM target layer).
    pub f_org: VarId,
    pub embeddings: VarId,
    pub logits: VarId,
    pub vars: FullFaceVars,
    pub batch_stats: Vec<Option<BatchStats>>,
}

impl FullFaceModel {
    pub fn new(cfg: FullFaceConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut c_in = 3;
        for &c_out in &cfg.stage_channels {
            stages.push(ConvBlock::new(c_in, c_out, 3, 2, 1, rng));
            c_in = c_out;
        }
        let reduce = ConvBlock::new(c_in, cfg.reduce_channels, 1, 1, 0, rng);
        let embed = Linear::new(cfg.reduce_channels, cfg.embed_dim, rng);
        let cls = Linear::new(cfg.embed_dim, 2, rng);
        FullFaceModel {
            cfg,
            stages,
            reduce,
            embed,
            cls,
            style_bank: None,
        }
    }

    /// Spatial size of the reduced feature map.
    pub fn feature_size(&self) -> usize {
        self.cfg.input_size >> self.stages.len()
    }

    pub fn register(&self, g: &mut Graph) -> FullFaceVars {
        FullFaceVars {
            stages: self.stages.iter().map(|s| s.register(g)).collect(),
            reduce: self.reduce.register(g),
            embed: self.embed.register(g),
            cls: self.cls.register(g),
        }
    }

    /// Trunk + heads. Input must be `(N, 3, S, S)` with `S = input_size`.
    pub fn forward(&self, g: &mut Graph, batch: VarId, mode: Mode) -> Result<FullFaceForward> {
        let (_, c, h, w) = g.value4(batch).dim();
        let s = self.cfg.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "full-face input must be (N, 3, {s}, {s}), got (N, {c}, {h}, {w})"
            )));
        }
        let vars = self.register(g);
        let mut x = batch;
        let mut batch_stats = Vec::new();
        for (block, bv) in self.stages.iter().zip(vars.stages.iter()) {
            let (y, stats) = block.forward(g, x, bv, mode);
            x = y;
            batch_stats.push(stats);
        }
        let (f_org, reduce_stats) = self.reduce.forward(g, x, &vars.reduce, mode);
        batch_stats.push(reduce_stats);
        let (embeddings, logits) = self.heads(g, f_org, &vars);
        Ok(FullFaceForward {
            f_org,
            embeddings,
            logits,
            vars,
            batch_stats,
        })
    }

    /// Embedding and classifier heads on a (possibly augmented) feature map.
    pub fn heads(&self, g: &mut Graph, features: VarId, vars: &FullFaceVars) -> (VarId, VarId) {
        let pooled = g.global_avg_pool(features);
        let embeddings = g.linear(pooled, vars.embed.0, vars.embed.1);
        let logits = g.linear(embeddings, vars.cls.0, vars.cls.1);
        (embeddings, logits)
    }

    /// Eval-mode forward returning plain arrays.
    pub fn forward_eval(&self, batch: &Array4<f32>) -> Result<(Array4<f32>, Array2<f32>, Array2<f32>)> {
        let mut g = Graph::new();
        let input = g.input(batch.clone().into_dyn());
        let out = self.forward(&mut g, input, Mode::Eval)?;
        Ok((
            g.value4(out.f_org).to_owned(),
            g.value2(out.embeddings).to_owned(),
            g.value2(out.logits).to_owned(),
        ))
    }

    /// Apply batch-stat updates gathered from a training forward pass.
    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats>]) {
        let blocks = self.stages.len();
        for (i, s) in stats.iter().enumerate() {
            if let Some(s) = s {
                if i < blocks {
                    self.stages[i].update_running(s);
                } else {
                    self.reduce.update_running(s);
                }
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.push_params(&format!("stage{i}"), &mut names);
        }
        self.reduce.push_params("reduce", &mut names);
        names.push("embed.weight".into());
        names.push("embed.bias".into());
        names.push("cls.weight".into());
        names.push("cls.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&ArrayD<f32>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.params());
        }
        out.extend(self.reduce.params());
        out.push(&self.embed.weight);
        out.push(&self.embed.bias);
        out.push(&self.cls.weight);
        out.push(&self.cls.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f32>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.params_mut());
        }
        out.extend(self.reduce.params_mut());
        out.push(&mut self.embed.weight);
        out.push(&mut self.embed.bias);
        out.push(&mut self.cls.weight);
        out.push(&mut self.cls.bias);
        out
    }

    /// Ids aligned with `param_names()` / `params_mut()` order.
    pub fn bindings(&self, vars: &FullFaceVars) -> ParamBindings {
        let mut ids = Vec::new();
        for bv in &vars.stages {
            ids.extend([bv.weight, bv.bias, bv.gamma, bv.beta]);
        }
        ids.extend([
            vars.reduce.weight,
            vars.reduce.bias,
            vars.reduce.gamma,
            vars.reduce.beta,
        ]);
        ids.extend([vars.embed.0, vars.embed.1, vars.cls.0, vars.cls.1]);
        ParamBindings {
            names: self.param_names(),
            ids,
        }
    }
}

/// Per-sample draws made by the CSA module; exposed so tests can pin them.
#[derive(Debug, Clone)]
pub struct CsaDraw {
    pub lambdas: Vec<f32>,
    pub picks: Vec<usize>,
}

/// Categorical style assembly as used in training: for each sample, draw a
/// base style uniformly from the bank restricted to the sample's class and
/// a mixing weight `lambda ~ U(0, 1)`.
pub fn csa_augment(
    g: &mut Graph,
    f_org: VarId,
    bank: &StyleBank,
    labels: &[Label],
    eps: f32,
    rng: &mut ChaCha8Rng,
) -> (VarId, CsaDraw) {
    let draw = {
        let mut lambdas = Vec::with_capacity(labels.len());
        let mut picks = Vec::with_capacity(labels.len());
        for lab in labels {
            let candidates = bank.indices_for(*lab);
            picks.push(candidates[rng.gen_range(0..candidates.len())]);
            lambdas.push(rng.gen_range(0.0..1.0f32));
        }
        CsaDraw { lambdas, picks }
    };
    let aug = csa_augment_with(g, f_org, bank, &draw, eps);
    (aug, draw)
}

/// CSA with explicit draws: mixed statistics
/// `mu_mix = lambda * mu_base + (1 - lambda) * mu(F)` (same for sigma), and
/// `F_aug = sigma_mix * (F - mu(F)) / (sigma(F) + eps) + mu_mix`.
///
/// The instance side of the sigma mix uses `sigma(F) + eps` (the same
/// quantity that normalizes the content), so `lambda = 0` reproduces the
/// input exactly.
pub fn csa_augment_with(
    g: &mut Graph,
    f_org: VarId,
    bank: &StyleBank,
    draw: &CsaDraw,
    eps: f32,
) -> VarId {
    let (n, c, _, _) = g.value4(f_org).dim();
    assert_eq!(n, draw.lambdas.len());
    let (mu, sigma, centered) = instance_stats(g, f_org);

    // constants: (1 - lambda) per row, lambda * base stats per row
    let mut lam_inv = Array2::<f32>::zeros((n, c));
    let mut base_mean = Array2::<f32>::zeros((n, c));
    let mut base_std = Array2::<f32>::zeros((n, c));
    for i in 0..n {
        let lam = draw.lambdas[i];
        let style = &bank.styles[draw.picks[i]];
        for j in 0..c {
            lam_inv[(i, j)] = 1.0 - lam;
            base_mean[(i, j)] = lam * style.mean[j];
            base_std[(i, j)] = lam * style.std[j];
        }
    }

    let denom = g.add_scalar(sigma, eps);
    let mu_scaled = g.mul_const(mu, lam_inv.clone().into_dyn());
    let mu_mix = g.add_const(mu_scaled, base_mean.into_dyn());
    let sigma_scaled = g.mul_const(denom, lam_inv.into_dyn());
    let sigma_mix = g.add_const(sigma_scaled, base_std.into_dyn());

    let content = g.div_nc(centered, denom);
    let styled = g.mul_nc(content, sigma_mix);
    g.add_nc(styled, mu_mix)
}

/// Instance `(mu, sigma)` statistics of a feature map as plain arrays,
/// rows `mu ++ sigma`; used to build and update the style bank.
pub fn feature_stats_rows(f: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = f.dim();
    let mut out = Array2::<f32>::zeros((n, 2 * c));
    let area = (h * w) as f32;
    for i in 0..n {
        for j in 0..c {
            let ch = f.slice(ndarray::s![i, j, .., ..]);
            let mu = ch.sum() / area;
            let var = ch.fold(0.0, |a, v| a + (v - mu) * (v - mu)) / area;
            out[(i, j)] = mu;
            out[(i, c + j)] = var.sqrt();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use ndarray::Axis;
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use ndarray::Ix4;

    fn tiny_model(input: usize) -> FullFaceModel {
        let cfg = FullFaceConfig {
            input_size: input,
            stage_channels: vec![4, 8],
            reduce_channels: 16,
            embed_dim: 8,
            num_styles: 8,
        };
        FullFaceModel::new(cfg, &mut stream_rng(1, Stream::ModelInit))
    }

    fn rand_batch(n: usize, s: usize, seed: u64) -> Array4<f32> {
        let mut rng = stream_rng(seed, Stream::ModelInit);
        Array4::from_shape_fn((n, 3, s, s), |_| rng.gen_range(-1.0..1.0f32))
    }

    #[test]
    fn forward_shapes() {
        let m = tiny_model(32);
        let batch = rand_batch(3, 32, 2);
        let (f, e, l) = m.forward_eval(&batch).unwrap();
        assert_eq!(f.dim(), (3, 16, 8, 8));
        assert_eq!(e.dim(), (3, 8));
        assert_eq!(l.dim(), (3, 2));
    }

    #[test]
    fn wrong_resolution_rejected() {
        let m = tiny_model(32);
        let batch = rand_batch(1, 16, 3);
        assert!(m.forward_eval(&batch).is_err());
    }

    #[test]
    fn eval_deterministic_on_duplicated_rows() {
        let m = tiny_model(32);
        let one = rand_batch(1, 32, 4);
        let mut two = Array4::<f32>::zeros((2, 3, 32, 32));
        two.index_axis_mut(Axis(0), 0).assign(&one.index_axis(Axis(0), 0));
        two.index_axis_mut(Axis(0), 1).assign(&one.index_axis(Axis(0), 0));
        let (_, e, l) = m.forward_eval(&two).unwrap();
        for j in 0..8 {
            assert_eq!(e[(0, j)], e[(1, j)]);
        }
        for j in 0..2 {
            assert_eq!(l[(0, j)], l[(1, j)]);
        }
    }

    #[test]
    fn gradients_finite_through_whole_model() {
        let m = tiny_model(32);
        let batch = rand_batch(4, 32, 5);
        let mut g = Graph::new();
        let input = g.input(batch.into_dyn());
        let out = m.forward(&mut g, input, Mode::Train).unwrap();
        let loss = g.softmax_cross_entropy(out.logits, &[0, 1, 0, 1]);
        assert!(g.scalar(loss).is_finite());
        let grads = g.backward(loss);
        let bindings = m.bindings(&out.vars);
        for id in &bindings.ids {
            let grad = grads.get(*id).expect("param should receive gradient");
            assert!(grad.iter().all(|v| v.is_finite()));
        }
    }

    fn toy_bank(c: usize) -> StyleBank {
        StyleBank {
            styles: vec![
                StyleEntry {
                    label: Label::BonaFide,
                    mean: Array1::from_elem(c, 0.3),
                    std: Array1::from_elem(c, 1.2),
                },
                StyleEntry {
                    label: Label::Attack,
                    mean: Array1::from_elem(c, -0.2),
                    std: Array1::from_elem(c, 0.8),
                },
            ],
        }
    }

    #[test]
    fn csa_lambda_zero_is_identity() {
        let mut g = Graph::new();
        let f = rand_batch(2, 8, 6).mapv(|v| v + 2.0); // keep sigma away from 0
        let fi = g.input(f.clone().into_dyn());
        let bank = toy_bank(3);
        let draw = CsaDraw {
            lambdas: vec![0.0, 0.0],
            picks: vec![0, 1],
        };
        let aug = csa_augment_with(&mut g, fi, &bank, &draw, 1e-5);
        let av = g.value4(aug);
        for (a, b) in av.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn csa_output_matches_mixed_stats() {
        let mut g = Graph::new();
        let f = rand_batch(2, 8, 7);
        let fi = g.input(f.clone().into_dyn());
        let bank = toy_bank(3);
        let draw = CsaDraw {
            lambdas: vec![0.35, 0.8],
            picks: vec![0, 1],
        };
        let aug = csa_augment_with(&mut g, fi, &bank, &draw, 1e-5);
        let av = g.value4(aug).to_owned();
        let stats = feature_stats_rows(&f);
        for i in 0..2 {
            let lam = draw.lambdas[i];
            let style = &bank.styles[draw.picks[i]];
            for j in 0..3 {
                let mu_mix = lam * style.mean[j] + (1.0 - lam) * stats[(i, j)];
                let sd_mix = lam * style.std[j] + (1.0 - lam) * stats[(i, 3 + j)];
                let ch = av.slice(ndarray::s![i, j, .., ..]);
                let mu = ch.sum() / ch.len() as f32;
                let var = ch.fold(0.0, |a, v| a + (v - mu) * (v - mu)) / ch.len() as f32;
                assert!((mu - mu_mix).abs() < 1e-4, "mean {mu} vs {mu_mix}");
                assert!((var.sqrt() - sd_mix).abs() < 1e-4, "std {} vs {sd_mix}", var.sqrt());
            }
        }
    }

    #[test]
    fn csa_reproducible_for_fixed_rng() {
        let f = rand_batch(3, 8, 8);
        let bank = toy_bank(3);
        let labels = [Label::BonaFide, Label::Attack, Label::BonaFide];
        let run = || {
            let mut g = Graph::new();
            let fi = g.input(f.clone().into_dyn());
            let mut rng = stream_rng(11, Stream::CsaSampling);
            let (aug, _) = csa_augment(&mut g, fi, &bank, &labels, 1e-5, &mut rng);
            g.value4(aug).to_owned()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csa_content_preserved() {
        // (F_aug - mu_mix) / sigma_mix == (F - mu) / (sigma + eps)
        let mut g = Graph::new();
        let f = rand_batch(1, 8, 9);
        let fi = g.input(f.clone().into_dyn());
        let bank = toy_bank(3);
        let draw = CsaDraw { lambdas: vec![0.6], picks: vec![0] };
        let aug = csa_augment_with(&mut g, fi, &bank, &draw, 1e-5);
        let av = g.value4(aug).to_owned();
        let stats = feature_stats_rows(&f);
        for j in 0..3 {
            let mu_mix = 0.6 * bank.styles[0].mean[j] + 0.4 * stats[(0, j)];
            let sd_mix = 0.6 * bank.styles[0].std[j] + 0.4 * stats[(0, 3 + j)];
            for y in 0..8 {
                for x in 0..8 {
                    let lhs = (av[(0, j, y, x)] - mu_mix) / sd_mix;
                    let rhs = (f[(0, j, y, x)] - stats[(0, j)]) / (stats[(0, 3 + j)] + 1e-5);
                    assert!((lhs - rhs).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn style_bank_init_and_update() {
        let mut rng = stream_rng(3, Stream::StyleBankInit);
        let stats = Array2::from_shape_fn((10, 6), |(i, j)| (i * 7 + j) as f32 * 0.1);
        let labels: Vec<Label> = (0..10)
            .map(|i| if i % 2 == 0 { Label::BonaFide } else { Label::Attack })
            .collect();
        let mut bank = StyleBank::init_from_stats(&stats, &labels, 8, &mut rng);
        assert_eq!(bank.len(), 8);
        assert!(bank.styles.iter().all(|s| s.std.iter().all(|v| *v > 0.0)));
        // converged k-means is a fixed point of the update on the same stats
        let before: Vec<f32> = bank.styles.iter().map(|s| s.mean[0]).collect();
        bank.momentum_update(&stats, &labels, 0.5);
        let unchanged: Vec<f32> = bank.styles.iter().map(|s| s.mean[0]).collect();
        for (a, b) in before.iter().zip(unchanged.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        // shifted stats pull the styles toward the new distribution
        let shifted = stats.mapv(|v| v + 1.0);
        bank.momentum_update(&shifted, &labels, 0.5);
        let after: Vec<f32> = bank.styles.iter().map(|s| s.mean[0]).collect();
        assert_ne!(before, after);
        assert!(bank.styles.iter().all(|s| s.std.iter().all(|v| *v > 0.0)));
    }

    #[test]
    fn batch_order_equivariant_in_eval() {
        let m = tiny_model(32);
        let batch = rand_batch(3, 32, 12);
        let mut perm = Array4::<f32>::zeros((3, 3, 32, 32));
        let order = [2usize, 0, 1];
        for (dst, &src) in order.iter().enumerate() {
            perm.index_axis_mut(Axis(0), dst)
                .assign(&batch.index_axis(Axis(0), src));
        }
        let (_, e1, _) = m.forward_eval(&batch).unwrap();
        let (_, e2, _) = m.forward_eval(&perm).unwrap();
        for (dst, &src) in order.iter().enumerate() {
            for j in 0..8 {
                assert_eq!(e2[(dst, j)], e1[(src, j)]);
            }
        }
    }

    #[test]
    fn feature_map_is_dyn4() {
        let m = tiny_model(32);
        let batch = rand_batch(1, 32, 13);
        let mut g = Graph::new();
        let input = g.input(batch.into_dyn());
        let out = m.forward(&mut g, input, Mode::Eval).unwrap();
        let v = g.value(out.f_org).view().into_dimensionality::<Ix4>();
        assert!(v.is_ok());
    }
}
