use serde::{Deserialize, Serialize};

use crate::models::{RgnConfig, SdmConfig, TdmConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Modular,
    Maml,
    Scratch,
    WeightInit,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Modular => "modular",
            Variant::Maml => "maml",
            Variant::Scratch => "scratch",
            Variant::WeightInit => "weight-init",
        }
    }

    pub fn is_meta(self) -> bool {
        matches!(self, Variant::Modular | Variant::Maml)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Modular, Variant::Maml, Variant::Scratch, Variant::WeightInit]
            .into_iter()
            .find(|v| v.name() == s || (s == "weight_init" && *v == Variant::WeightInit))
            .ok_or_else(|| Error::Invalid(format!("unknown variant `{s}`")))
    }
}

/// Optimizer applied to accumulated outer gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterOptimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Padgn,
    Rgn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Padgn => "padgn",
            ModelKind::Rgn => "rgn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "padgn" => Ok(ModelKind::Padgn),
            "rgn" => Ok(ModelKind::Rgn),
            _ => Err(Error::Invalid(format!("unknown model `{s}`"))),
        }
    }
}

/// Architecture hyperparameters for all model families.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sdm: SdmConfig,
    pub tdm: TdmConfig,
    pub rgn: RgnConfig,
}

impl ModelConfig {
    /// All hidden sizes set to `h`.
    pub fn with_hidden(h: usize) -> Self {
        let mut m = Self::default();
        m.sdm.hidden = h;
        m.tdm.hidden = h;
        m.rgn.hidden = h;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Outer learning rate.
    pub alpha: f64,
    /// Inner learning rate; 0 disables adaptation.
    pub beta: f64,
    pub batch_tasks: usize,
    pub inner_steps: usize,
    pub epochs: usize,
    pub aux_weight: f64,
    pub variant: Variant,
    pub outer_optimizer: OuterOptimizer,
    /// Per-task training budget at meta-test and for the baselines.
    pub adapt_epochs: usize,
    pub adapt_lr: f64,
    /// Train Φ together with θ at meta-test.
    pub finetune_phi: bool,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            batch_tasks: 1,
            inner_steps: 1,
            epochs: 200,
            aux_weight: 1.0,
            variant: Variant::Modular,
            outer_optimizer: OuterOptimizer::Adam,
            adapt_epochs: 300,
            adapt_lr: 1e-3,
            finetune_phi: false,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.batch_tasks == 0 {
            return bad("batch_tasks must be at least 1".into());
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1".into());
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return bad(format!("aux_weight must be >= 0, got {}", self.aux_weight));
        }
        if !(self.adapt_lr > 0.0 && self.adapt_lr.is_finite()) {
            return bad(format!("adapt_lr must be > 0, got {}", self.adapt_lr));
        }
        Ok(())
    }
}
