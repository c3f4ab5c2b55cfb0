//! Run configuration, training orchestration, evaluation, and ablations.

pub mod ablate;
pub mod baselines;
pub mod evaluate;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gan::{LossWeights, ModelCfg};
use crate::maskgen::MixMaskSpec;
use crate::metrics::EvalReport;
use crate::mixer::MixKind;

/// The single supported adaptation direction: translate source to target
/// appearance and train a target-domain segmentor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunDirection {
    S2tTrainTSegmentor,
}

impl Default for RunDirection {
    fn default() -> Self {
        RunDirection::S2tTrainTSegmentor
    }
}

/// Alternative mix-up protocols used as comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixupBaseline {
    #[default]
    None,
    /// Global convex blend with a Beta-sampled coefficient.
    GlobalMixup,
    /// Single rectangular patch swap.
    Cutmix,
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop both image discriminators (paper's "Model 0").
    pub disable_d_s_d_t: bool,
    /// Override the mask/inspector grid side.
    pub k_override: Option<usize>,
    /// Disable the mix-up path entirely (plain dual-GAN baseline).
    pub disable_synthmix: bool,
    pub mixup_baseline: MixupBaseline,
    /// Train the segmentor on labelled source images only, no adaptation.
    pub source_only: bool,
}

/// Optimizer step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimCfg {
    pub lr_gan: f64,
    pub lr_seg: f64,
}

impl Default for OptimCfg {
    fn default() -> Self {
        OptimCfg {
            lr_gan: 2e-4,
            lr_seg: 1e-3,
        }
    }
}

/// One training run, fully specified. Unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: PathBuf,
    #[serde(default)]
    pub direction: RunDirection,
    #[serde(default)]
    pub seed: u64,
    pub iterations: u64,
    pub eval_interval: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default = "default_mask")]
    pub mask: MixMaskSpec,
    /// Per-iteration lambda sampling range; `None` keeps `mask.lambda_ratio`
    /// fixed.
    #[serde(default = "default_lambda_range")]
    pub lambda_range: Option<(f64, f64)>,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub optim: OptimCfg,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default = "default_keep")]
    pub checkpoint_keep: usize,
    /// Record per-iteration protocol facts (which kinds fed which loss).
    #[serde(default)]
    pub record_protocol: bool,
}

fn default_mask() -> MixMaskSpec {
    MixMaskSpec {
        k: 8,
        lambda_ratio: 0.5,
        image_side: 128,
        seed: 0,
    }
}

fn default_lambda_range() -> Option<(f64, f64)> {
    Some((0.3, 0.7))
}

fn default_keep() -> usize {
    3
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("run config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The effective grid side after any override.
    pub fn effective_k(&self) -> usize {
        self.ablation.k_override.unwrap_or(self.mask.k)
    }

    /// The mask spec actually used during training.
    pub fn effective_mask(&self) -> MixMaskSpec {
        MixMaskSpec {
            k: self.effective_k(),
            ..self.mask
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::config(format!(
                "unsupported config version {}",
                self.version
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be positive"));
        }
        self.loss_weights.validate()?;
        self.model.validate()?;
        self.effective_mask().validate()?;
        if self.mask.image_side != self.model.image_side {
            return Err(Error::config(format!(
                "mask image_side {} differs from model image_side {}",
                self.mask.image_side, self.model.image_side
            )));
        }
        if let Some((lo, hi)) = self.lambda_range {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::config(format!(
                    "lambda_range ({lo}, {hi}) must be ordered within [0, 1]"
                )));
            }
        }
        if self.ablation.mixup_baseline != MixupBaseline::None && !self.ablation.disable_synthmix {
            return Err(Error::config(
                "a mixup baseline replaces the mix-up path: set disable_synthmix",
            ));
        }
        if self.ablation.source_only
            && (self.ablation.mixup_baseline != MixupBaseline::None
                || self.ablation.disable_d_s_d_t)
        {
            return Err(Error::config(
                "source_only ignores adversarial parts; leave the other flags unset",
            ));
        }
        if self.checkpoint_keep == 0 {
            return Err(Error::config("checkpoint_keep must be at least 1"));
        }
        Ok(())
    }

    /// Hash of the exact serialized config; stamped into checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }
}

/// Loss terms of one iteration, for the run log.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: u64,
    pub l_gen_adv: f64,
    pub l_cyc: f64,
    pub l_mix_adv: f64,
    pub l_cls: f64,
    pub l_d_s: f64,
    pub l_d_t: f64,
    pub l_d_f: f64,
    pub l_seg: f64,
    pub l_feat_gen: f64,
    /// The composite objective with the configured weights.
    pub total: f64,
}

/// Which kinds fed which loss at one iteration (instrumentation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub iteration: u64,
    pub inspector_kinds: Vec<MixKind>,
    pub generator_adv_kinds: Vec<MixKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: u64,
    pub report: EvalReport,
}

/// Everything a run leaves behind besides checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    pub iters: Vec<IterLog>,
    pub evals: Vec<EvalPoint>,
    pub wall_seconds: f64,
    pub protocol: Option<Vec<ProtocolRecord>>,
}

impl RunLog {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("runlog serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RunLog> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("runlog parse: {e}")))
    }
}
