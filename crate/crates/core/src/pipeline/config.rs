//! Training configuration: TOML `[section] key = value` files mirroring the
//! published training settings, with every default overridable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{AiawConfig, LossWeights, TripletConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    WeightedMlp,
    UnweightedMlp,
    MajorityVote,
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weighted_mlp" => Ok(FusionMode::WeightedMlp),
            "unweighted_mlp" => Ok(FusionMode::UnweightedMlp),
            "majority_vote" => Ok(FusionMode::MajorityVote),
            _ => Err(Error::InvalidConfig(format!(
                "unknown fusion mode `{s}` (expected weighted_mlp, unweighted_mlp or majority_vote)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::WeightedMlp => "weighted_mlp",
            FusionMode::UnweightedMlp => "unweighted_mlp",
            FusionMode::MajorityVote => "majority_vote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase1Config {
    pub epochs: usize,
    pub input: usize,
    pub lr: f32,
    pub use_csa: bool,
    pub use_aiaw: bool,
    pub use_tf: bool,
    pub sigma: f32,
    pub margin: f32,
    pub k_live: f64,
    pub k_attack: f64,
    pub alpha1: f32,
    pub beta1: f32,
    pub gamma1: f32,
    pub alpha2: f32,
    pub beta2: f32,
    pub gamma2: f32,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config {
            epochs: 30,
            input: 256,
            lr: 0.001,
            use_csa: true,
            use_aiaw: true,
            use_tf: true,
            sigma: 2.0,
            margin: 0.6,
            k_live: 0.0009,
            k_attack: 0.0006,
            alpha1: 1.0,
            beta1: 0.1,
            gamma1: 1.0,
            alpha2: 1.0,
            beta2: 0.1,
            gamma2: 1.0,
        }
    }
}

impl Phase1Config {
    pub fn triplet(&self) -> TripletConfig {
        TripletConfig {
            sigma: self.sigma,
            margin: self.margin,
        }
    }

    pub fn aiaw(&self) -> AiawConfig {
        AiawConfig {
            k_live: self.k_live,
            k_attack: self.k_attack,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase2Config {
    pub epochs: usize,
    pub input: usize,
    pub lr: f32,
    pub use_tf: bool,
    pub sigma: f32,
    pub margin: f32,
    pub alpha: f32,
    pub beta: f32,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config {
            epochs: 20,
            input: 64,
            lr: 0.001,
            use_tf: true,
            sigma: 1.5,
            margin: 1.0,
            alpha: 1.0,
            beta: 0.1,
        }
    }
}

impl Phase2Config {
    pub fn triplet(&self) -> TripletConfig {
        TripletConfig {
            sigma: self.sigma,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub k_percent: f32,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig { k_percent: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub epochs: usize,
    pub lr: f32,
    pub mode: FusionMode,
    pub hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            epochs: 20,
            lr: 0.001,
            mode: FusionMode::WeightedMlp,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub attention: AttentionConfig,
    pub fusion: FusionConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            batch_size: 32,
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
            attention: AttentionConfig::default(),
            fusion: FusionConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        for (name, v) in [
            ("phase1.epochs", self.phase1.epochs),
            ("phase2.epochs", self.phase2.epochs),
            ("fusion.epochs", self.fusion.epochs),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("phase1.lr", self.phase1.lr),
            ("phase2.lr", self.phase2.lr),
            ("fusion.lr", self.fusion.lr),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.phase1.input < 8 || self.phase2.input < 8 {
            return Err(Error::InvalidConfig("input sizes must be >= 8".into()));
        }
        if !(0.0..=100.0).contains(&self.attention.k_percent) || self.attention.k_percent <= 0.0 {
            return Err(Error::InvalidConfig("attention.k_percent must be in (0, 100]".into()));
        }
        self.phase1.triplet().validate()?;
        self.phase2.triplet().validate()?;
        self.phase1.aiaw().validate()?;
        self.loss_weights().validate()?;
        Ok(())
    }

    /// Phase-1 weights with disabled components zeroed, plus the phase-2
    /// alpha/beta pair.
    pub fn loss_weights(&self) -> LossWeights {
        let p1 = &self.phase1;
        LossWeights {
            alpha1: if p1.use_aiaw { p1.alpha1 } else { 0.0 },
            beta1: if p1.use_tf { p1.beta1 } else { 0.0 },
            gamma1: p1.gamma1,
            alpha2: if p1.use_aiaw { p1.alpha2 } else { 0.0 },
            beta2: if p1.use_tf { p1.beta2 } else { 0.0 },
            gamma2: p1.gamma2,
            alpha: self.phase2.alpha,
            beta: if self.phase2.use_tf { self.phase2.beta } else { 0.0 },
        }
    }

    /// Load from an optional TOML file, then apply `section.key=value`
    /// overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse()
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for (key, raw) in overrides {
            set_path(&mut value, key, raw)?;
        }
        let cfg: TrainConfig = value
            .try_into()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

fn set_path(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    // parse the raw value through toml so numbers/bools keep their type
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{key}` does not address a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` does not address a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.phase1.epochs, 30);
        assert_eq!(cfg.phase1.input, 256);
        assert_eq!(cfg.phase1.sigma, 2.0);
        assert_eq!(cfg.phase1.margin, 0.6);
        assert_eq!(cfg.phase2.epochs, 20);
        assert_eq!(cfg.phase2.input, 64);
        assert_eq!(cfg.phase2.sigma, 1.5);
        assert_eq!(cfg.phase2.margin, 1.0);
        assert_eq!(cfg.phase1.lr, 0.001);
        assert_eq!(cfg.attention.k_percent, 50.0);
        let w = cfg.loss_weights();
        assert_eq!(
            (w.alpha1, w.beta1, w.gamma1, w.alpha2, w.beta2, w.gamma2),
            (1.0, 0.1, 1.0, 1.0, 0.1, 1.0)
        );
        assert_eq!((w.alpha, w.beta), (1.0, 0.1));
        assert!((cfg.phase1.k_live - 0.0009).abs() < 1e-12);
        assert!((cfg.phase1.k_attack - 0.0006).abs() < 1e-12);
    }

    #[test]
    fn overrides_apply() {
        let cfg = TrainConfig::load(
            None,
            &[
                ("phase1.epochs".into(), "3".into()),
                ("phase1.use_csa".into(), "false".into()),
                ("fusion.mode".into(), "\"majority_vote\"".into()),
                ("seed".into(), "99".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.phase1.epochs, 3);
        assert!(!cfg.phase1.use_csa);
        assert_eq!(cfg.fusion.mode, FusionMode::MajorityVote);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn unquoted_string_override_works() {
        let cfg = TrainConfig::load(None, &[("fusion.mode".into(), "majority_vote".into())]).unwrap();
        assert_eq!(cfg.fusion.mode, FusionMode::MajorityVote);
    }

    #[test]
    fn disabled_components_zero_their_weights() {
        let cfg = TrainConfig::load(
            None,
            &[
                ("phase1.use_aiaw".into(), "false".into()),
                ("phase1.use_tf".into(), "false".into()),
            ],
        )
        .unwrap();
        let w = cfg.loss_weights();
        assert_eq!((w.alpha1, w.alpha2, w.beta1, w.beta2), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((w.gamma1, w.gamma2), (1.0, 1.0));
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml();
        let back: TrainConfig = text.parse::<toml::Value>().unwrap().try_into().unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_config_rejected() {
        assert!(TrainConfig::load(None, &[("batch_size".into(), "1".into())]).is_err());
        assert!(TrainConfig::load(None, &[("phase1.epochs".into(), "0".into())]).is_err());
        assert!(TrainConfig::load(None, &[("attention.k_percent".into(), "0".into())]).is_err());
    }
}
