//! Network architectures: the full-face model with categorical style
//! augmentation, the seven patch subnetworks, the fusion MLP, and the
//! majority-vote ablation.

mod fullface;
mod fusion;
mod patchnet;

pub use fullface::{
    csa_augment, csa_augment_with, feature_stats_rows, CsaDraw, FullFaceConfig, FullFaceForward, FullFaceModel,
    StyleBank, StyleEntry,
};
pub use fusion::{fuse, majority_vote, vote_score, weighted_concat, FusionModel, NUM_REGIONS};
pub use patchnet::{PatchConfig, PatchForward, PatchModel};

use ndarray::{Array1, ArrayD};
use rand_chacha::ChaCha8Rng;

use crate::nn::{he_normal, zeros, BatchStats, Graph, VarId};

/// Forward-pass mode: training uses batch statistics in the norm layers,
/// eval uses the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update factor: `running = (1 - m) * running + m * batch`.
pub const BN_MOMENTUM: f32 = 0.1;

/// Conv + batch norm + ReLU.
#[derive(Clone)]
pub struct ConvBlock {
    pub weight: ArrayD<f32>,
    pub bias: ArrayD<f32>,
    pub gamma: ArrayD<f32>,
    pub beta: ArrayD<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvBlockVars {
    pub weight: VarId,
    pub bias: VarId,
    pub gamma: VarId,
    pub beta: VarId,
}

impl ConvBlock {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBlock {
            weight: he_normal(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
            bias: zeros(&[c_out]),
            gamma: ArrayD::from_elem(ndarray::IxDyn(&[c_out]), 1.0),
            beta: zeros(&[c_out]),
            running_mean: Array1::zeros(c_out),
            running_var: Array1::ones(c_out),
            stride,
            pad,
        }
    }

    pub fn register(&self, g: &mut Graph) -> ConvBlockVars {
        ConvBlockVars {
            weight: g.param(&self.weight),
            bias: g.param(&self.bias),
            gamma: g.param(&self.gamma),
            beta: g.param(&self.beta),
        }
    }

    /// conv -> batch norm -> ReLU. In train mode also returns the batch
    /// statistics so the caller can update the running estimates.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: VarId,
        vars: &ConvBlockVars,
        mode: Mode,
    ) -> (VarId, Option<BatchStats>) {
        let conv = g.conv2d(x, vars.weight, vars.bias, self.stride, self.pad);
        let (normed, stats) = match mode {
            Mode::Train => {
                let (y, stats) = g.batchnorm_train(conv, vars.gamma, vars.beta);
                (y, Some(stats))
            }
            Mode::Eval => (
                g.batchnorm_eval(conv, vars.gamma, vars.beta, &self.running_mean, &self.running_var),
                None,
            ),
        };
        (g.relu(normed), stats)
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        self.running_mean
            .zip_mut_with(&stats.mean, |r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
        self.running_var
            .zip_mut_with(&stats.var, |r, b| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
    }

    fn push_params(&self, prefix: &str, names: &mut Vec<String>) {
        for suffix in ["weight", "bias", "gamma", "beta"] {
            names.push(format!("{prefix}.{suffix}"));
        }
    }

    fn params(&self) -> Vec<&ArrayD<f32>> {
        vec![&self.weight, &self.bias, &self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut ArrayD<f32>> {
        vec![
            &mut self.weight,
            &mut self.bias,
            &mut self.gamma,
            &mut self.beta,
        ]
    }
}

/// Fully connected layer parameters.
#[derive(Clone)]
pub struct Linear {
    pub weight: ArrayD<f32>, // (in, out)
    pub bias: ArrayD<f32>,   // (out)
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: he_normal(&[d_in, d_out], d_in, rng),
            bias: zeros(&[d_out]),
        }
    }

    pub fn register(&self, g: &mut Graph) -> (VarId, VarId) {
        (g.param(&self.weight), g.param(&self.bias))
    }
}

/// Ordered name/id pairs for one registered model, aligned with the model's
/// `params_mut()` order so optimizer updates can be zipped positionally.
pub struct ParamBindings {
    pub names: Vec<String>,
    pub ids: Vec<VarId>,
}

/// Default stage widths for a given input resolution: four stride-2 stages
/// for 128px and larger, three below.
pub fn default_stages(input_size: usize) -> Vec<usize> {
    if input_size >= 128 {
        vec![16, 32, 64, 128]
    } else {
        vec![16, 32, 64]
    }
}
