//! Run configuration: every tunable with its default, loaded from TOML or
//! JSON. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MiningStrategy {
    /// Hard negatives from the Delaunay neighbourhood of the positive.
    #[default]
    Adjacent,
    /// Uniformly drawn negatives.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub context_margin: f64,
    pub upsample: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            context_margin: 0.5,
            upsample: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    pub batch_size: usize,
    pub strategy: MiningStrategy,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            strategy: MiningStrategy::Adjacent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttnConfig {
    /// Projection width. Unset means the feature dimension of the data.
    pub d_k: Option<usize>,
    pub max_tokens: usize,
    pub ln_eps: f64,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            d_k: None,
            max_tokens: 4096,
            ln_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub d_f: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            d_f: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub temperature: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { temperature: 0.07 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub manifest: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 200,
            seed: 0,
            checkpoint_interval: 0,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub vis_threshold: f64,
    /// Contour match radius as a fraction of the image diagonal.
    pub contour_tolerance: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            vis_threshold: 0.5,
            contour_tolerance: 0.0075,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub mining: MiningConfig,
    pub attn: AttnConfig,
    pub head: HeadConfig,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.encoder.context_margin >= 0.0 && self.encoder.context_margin.is_finite()) {
            return bad(format!(
                "encoder.context_margin {} must be finite and >= 0",
                self.encoder.context_margin
            ));
        }
        if self.encoder.upsample < 1 {
            return bad("encoder.upsample must be >= 1".into());
        }
        if self.mining.batch_size < 2 {
            return bad(format!(
                "mining.batch_size {} must be >= 2",
                self.mining.batch_size
            ));
        }
        if self.attn.d_k == Some(0) {
            return bad("attn.d_k must be > 0".into());
        }
        if self.attn.max_tokens == 0 {
            return bad("attn.max_tokens must be > 0".into());
        }
        if !(self.attn.ln_eps > 0.0) {
            return bad("attn.ln_eps must be > 0".into());
        }
        if self.head.hidden == 0 || self.head.d_f == 0 {
            return bad("head.hidden and head.d_f must be > 0".into());
        }
        if !(self.loss.temperature > 0.0 && self.loss.temperature.is_finite()) {
            return bad(format!(
                "loss.temperature {} must be > 0",
                self.loss.temperature
            ));
        }
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr {} must be finite and >= 0", t.lr));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)".into());
        }
        if !(t.eps > 0.0) {
            return bad("train.eps must be > 0".into());
        }
        if t.steps < 1 {
            return bad("train.steps must be >= 1".into());
        }
        if !(-1.0..=1.0).contains(&self.eval.vis_threshold) {
            return bad("eval.vis_threshold must lie in [-1, 1]".into());
        }
        if !(self.eval.contour_tolerance >= 0.0) {
            return bad("eval.contour_tolerance must be >= 0".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).into()
    }

    /// Settings that shape the training trajectory. Two configs with equal
    /// trajectory views produce identical steps; `steps`, the checkpoint
    /// interval, the manifest path and eval settings are excluded.
    pub fn trajectory_view(&self) -> RunConfig {
        let mut view = self.clone();
        view.train.steps = 1;
        view.train.checkpoint_interval = 0;
        view.train.manifest = None;
        view.eval = EvalSection::default();
        view
    }

    /// Writes `config.resolved.json` into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join("config.resolved.json");
        std::fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }
}
