//! Fusion of the seven patch embeddings: attention-weighted concatenation
//! through a small MLP, plus the majority-vote ablation.

use ndarray::{Array1, Array2, ArrayD};
use rand_chacha::ChaCha8Rng;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::nn::{Graph, VarId};

use super::{Linear, ParamBindings};

/// Number of canonical regions feeding fusion.
pub const NUM_REGIONS: usize = 7;

/// MLP over the concatenated weighted embeddings: `7*16 = 112 -> 64 -> 2`.
#[derive(Clone)]
pub struct FusionModel {
    pub embed_dim: usize,
    pub hidden: Linear,
    pub out: Linear,
}

pub struct FusionVars {
    pub hidden: (VarId, VarId),
    pub out: (VarId, VarId),
}

impl FusionModel {
    pub fn new(embed_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        FusionModel {
            embed_dim,
            hidden: Linear::new(NUM_REGIONS * embed_dim, hidden_dim, rng),
            out: Linear::new(hidden_dim, 2, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        NUM_REGIONS * self.embed_dim
    }

    /// Differentiable forward over precomputed fused inputs `(N, 112)`.
    pub fn forward(&self, g: &mut Graph, inputs: VarId) -> Result<(VarId, FusionVars)> {
        let (_, d) = g.value2(inputs).dim();
        if d != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "fusion input must have {} columns, got {d}",
                self.input_dim()
            )));
        }
        let vars = FusionVars {
            hidden: self.hidden.register(g),
            out: self.out.register(g),
        };
        let h = g.linear(inputs, vars.hidden.0, vars.hidden.1);
        let r = g.relu(h);
        let logits = g.linear(r, vars.out.0, vars.out.1);
        Ok((logits, vars))
    }

    pub fn forward_eval(&self, inputs: &Array2<f32>) -> Result<Array2<f32>> {
        let mut g = Graph::new();
        let x = g.input(inputs.clone().into_dyn());
        let (logits, _) = self.forward(&mut g, x)?;
        Ok(g.value2(logits).to_owned())
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![
            "hidden.weight".into(),
            "hidden.bias".into(),
            "out.weight".into(),
            "out.bias".into(),
        ]
    }

    pub fn params(&self) -> Vec<&ArrayD<f32>> {
        vec![
            &self.hidden.weight,
            &self.hidden.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f32>> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    pub fn bindings(&self, vars: &FusionVars) -> ParamBindings {
        ParamBindings {
            names: self.param_names(),
            ids: vec![vars.hidden.0, vars.hidden.1, vars.out.0, vars.out.1],
        }
    }
}

/// Weight each region embedding by its attention score, concatenate in
/// canonical order.
pub fn weighted_concat(embeddings: &[Array1<f32>; NUM_REGIONS], scores: &[f32; NUM_REGIONS]) -> Array1<f32> {
    let d = embeddings[0].len();
    let mut out = Array1::<f32>::zeros(NUM_REGIONS * d);
    for (r, (e, s)) in embeddings.iter().zip(scores.iter()).enumerate() {
        assert_eq!(e.len(), d, "embedding dim mismatch");
        for j in 0..d {
            out[r * d + j] = s * e[j];
        }
    }
    out
}

/// Fusion forward for one sample: weighted concat through the MLP.
pub fn fuse(
    embeddings: &[Array1<f32>; NUM_REGIONS],
    scores: &[f32; NUM_REGIONS],
    model: &FusionModel,
) -> Result<Array1<f32>> {
    let x = weighted_concat(embeddings, scores);
    if x.len() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "fused vector has {} entries, fusion MLP expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let logits = model.forward_eval(&x.insert_axis(ndarray::Axis(0)))?;
    Ok(logits.row(0).to_owned())
}

/// Majority vote over the seven per-patch logit pairs; with seven voters a
/// tie is impossible.
pub fn majority_vote(patch_logits: &[[f32; 2]; NUM_REGIONS]) -> Label {
    let attack_votes = patch_logits
        .iter()
        .filter(|l| l[1] > l[0])
        .count();
    if attack_votes >= 4 {
        Label::Attack
    } else {
        Label::BonaFide
    }
}

/// Vote share used as the score in majority-vote mode.
pub fn vote_score(patch_logits: &[[f32; 2]; NUM_REGIONS]) -> f32 {
    patch_logits.iter().filter(|l| l[1] > l[0]).count() as f32 / NUM_REGIONS as f32
}
