//! Patch subnetwork: a small conv net over 64x64 crops with a 16-d
//! embedding head and a 2-way classifier.

use ndarray::{Array2, Array4, ArrayD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchStats, Graph, VarId};

use super::{ConvBlock, ConvBlockVars, Linear, Mode, ParamBindings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            input_size: 64,
            stage_channels: vec![16, 32, 64],
            embed_dim: 16,
        }
    }
}

#[derive(Clone)]
pub struct PatchModel {
    pub cfg: PatchConfig,
    pub stages: Vec<ConvBlock>,
    pub embed: Linear,
    pub cls: Linear,
}

pub struct PatchVars {
    pub stages: Vec<ConvBlockVars>,
    pub embed: (VarId, VarId),
    pub cls: (VarId, VarId),
}

pub struct PatchForward {
    pub embeddings: VarId,
    pub logits: VarId,
    pub vars: PatchVars,
    pub batch_stats: Vec<Option<BatchStats>>,
}

impl PatchModel {
    pub fn new(cfg: PatchConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut c_in = 3;
        for &c_out in &cfg.stage_channels {
            stages.push(ConvBlock::new(c_in, c_out, 3, 2, 1, rng));
            c_in = c_out;
        }
        let embed = Linear::new(c_in, cfg.embed_dim, rng);
        let cls = Linear::new(cfg.embed_dim, 2, rng);
        PatchModel {
            cfg,
            stages,
            embed,
            cls,
        }
    }

    pub fn forward(&self, g: &mut Graph, batch: VarId, mode: Mode) -> Result<PatchForward> {
        let (_, c, h, w) = g.value4(batch).dim();
        let s = self.cfg.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "patch input must be (N, 3, {s}, {s}), got (N, {c}, {h}, {w})"
            )));
        }
        let vars = PatchVars {
            stages: self.stages.iter().map(|b| b.register(g)).collect(),
            embed: self.embed.register(g),
            cls: self.cls.register(g),
        };
        let mut x = batch;
        let mut batch_stats = Vec::new();
        for (block, bv) in self.stages.iter().zip(vars.stages.iter()) {
            let (y, stats) = block.forward(g, x, bv, mode);
            x = y;
            batch_stats.push(stats);
        }
        let pooled = g.global_avg_pool(x);
        let embeddings = g.linear(pooled, vars.embed.0, vars.embed.1);
        let logits = g.linear(embeddings, vars.cls.0, vars.cls.1);
        Ok(PatchForward {
            embeddings,
            logits,
            vars,
            batch_stats,
        })
    }

    pub fn forward_eval(&self, batch: &Array4<f32>) -> Result<(Array2<f32>, Array2<f32>)> {
        let mut g = Graph::new();
        let input = g.input(batch.clone().into_dyn());
        let out = self.forward(&mut g, input, Mode::Eval)?;
        Ok((
            g.value2(out.embeddings).to_owned(),
            g.value2(out.logits).to_owned(),
        ))
    }

    pub fn update_running_stats(&mut self, stats: &[Option<BatchStats>]) {
        for (block, s) in self.stages.iter_mut().zip(stats.iter()) {
            if let Some(s) = s {
                block.update_running(s);
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.push_params(&format!("stage{i}"), &mut names);
        }
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
        out.push(&mut self.embed.weight);
        out.push(&mut self.embed.bias);
        out.push(&mut self.cls.weight);
        out.push(&mut self.cls.bias);
        out
    }

    pub fn bindings(&self, vars: &PatchVars) -> ParamBindings {
        let mut ids = Vec::new();
        for bv in &vars.stages {
            ids.extend([bv.weight, bv.bias, bv.gamma, bv.beta]);
        }
        ids.extend([vars.embed.0, vars.embed.1, vars.cls.0, vars.cls.1]);
        ParamBindings {
            names: self.param_names(),
            ids,
        }
    }
}
