//! Declarative run configuration (TOML). Every field has a default; the
//! resolved form is what gets hashed and embedded in manifests and reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SplitRatios, SynthConfig};
use crate::error::{LotError, Result};
use crate::eval::EvalConfig;
use crate::lm::Arch;
use crate::lotloss::LotConfig;
use crate::trainer::{Stage, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub toxic_fraction: f64,
    pub max_len: usize,
    pub seed: u64,
    pub split: SplitRatios,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        DataConfig {
            n_pairs: s.n_pairs,
            vocab_size: s.vocab_size,
            toxic_fraction: s.toxic_fraction,
            max_len: s.max_len,
            seed: 1,
            split: SplitRatios::default(),
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_pairs: self.n_pairs,
            vocab_size: self.vocab_size,
            toxic_fraction: self.toxic_fraction,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Arch::default();
        ModelConfig {
            embed: a.embed,
            hidden: a.hidden,
            window: a.window,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub base: TrainConfig,
    pub aux: TrainConfig,
    pub lot: TrainConfig,
    pub baseline: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            base: TrainConfig::default(),
            aux: TrainConfig::default(),
            lot: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            baseline: TrainConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn for_stage(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Base => &self.base,
            Stage::AuxToxic | Stage::AuxSafe => &self.aux,
            Stage::Lot => &self.lot,
            Stage::BaselineAll | Stage::BaselineClean => &self.baseline,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        for c in [&mut self.base, &mut self.aux, &mut self.lot, &mut self.baseline] {
            c.seed = seed;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LotConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LotError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LotError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn arch(&self) -> Arch {
        Arch {
            vocab: self.data.vocab_size,
            embed: self.model.embed,
            hidden: self.model.hidden,
            window: self.model.window,
        }
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.data.synth().validate()?;
        self.data.split.validate()?;
        self.arch().validate()?;
        self.loss.validate()?;
        for c in [&self.train.base, &self.train.aux, &self.train.lot, &self.train.baseline] {
            c.validate()?;
        }
        self.eval.validate()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&self.to_json()).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lotloss::LossMode;

    #[test]
    fn empty_file_resolves_to_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.train.lot.epochs, 3);
        assert_eq!(c.train.aux.epochs, 5);
        assert_eq!(c.loss.gamma, 0.5);
    }

    #[test]
    fn partial_sections_and_hash() {
        let c =
            RunConfig::from_toml("[loss]\nmode = \"mle_only\"\ndiv_kind = \"KL\"\n[train.lot]\nepochs = 5\n").unwrap();
        assert_eq!(c.loss.mode, LossMode::MleOnly);
        assert_eq!(c.train.lot.epochs, 5);
        assert_eq!(c.train.lot.batch_size, 32);
        assert_ne!(c.hash(), RunConfig::default().hash());
        assert_eq!(c.hash(), c.clone().hash());
        assert_eq!(c.hash().len(), 16);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml("[loss]\nbeta = 1.0\n").is_err());
    }

    #[test]
    fn validation_catches_bad_sections() {
        let mut c = RunConfig::default();
        c.train.aux.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.vocab_size = 10;
        assert!(c.validate().is_err());
    }
}
