use serde::{Deserialize, Serialize};

use crate::augment::cta::{DEFAULT_BINS, DEFAULT_DECAY, DEFAULT_OPS, DEFAULT_THRESHOLD};
use crate::augment::{CtaPolicy, TransformKind, WeakAugmentConfig};
use crate::error::{Error, Result};
use crate::influence::{HessianMode, DEFAULT_DAMPING};
use crate::nn::GradientLayer;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Sl,
    SslFixed,
    SslInfluence,
}

impl TrainMode {
    pub fn is_ssl(self) -> bool {
        !matches!(self, TrainMode::Sl)
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Sl => "sl",
            TrainMode::SslFixed => "ssl-fixed",
            TrainMode::SslInfluence => "ssl-influence",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sl" => Ok(TrainMode::Sl),
            "ssl-fixed" => Ok(TrainMode::SslFixed),
            "ssl-influence" => Ok(TrainMode::SslInfluence),
            other => Err(Error::Config(format!("unknown mode {other:?} (sl, ssl-fixed, ssl-influence)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FeatureRecognition,
    SpeciesClassification,
}

/// CTA settings; the transform list is fixed to the default set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtaConfig {
    pub bins: usize,
    pub decay: f64,
    pub threshold: f64,
    pub ops_per_sample: usize,
}

impl Default for CtaConfig {
    fn default() -> Self {
        CtaConfig {
            bins: DEFAULT_BINS,
            decay: DEFAULT_DECAY,
            threshold: DEFAULT_THRESHOLD,
            ops_per_sample: DEFAULT_OPS,
        }
    }
}

impl CtaConfig {
    pub fn policy(&self) -> CtaPolicy {
        let mut p = CtaPolicy::new(&TransformKind::LITE, self.bins);
        p.decay = self.decay;
        p.threshold = self.threshold;
        p.ops_per_sample = self.ops_per_sample;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Labelled batch size `B`.
    pub batch_size: usize,
    /// Unlabelled ratio `mu`.
    pub mu: usize,
    /// Confidence threshold `tau`.
    pub tau: f64,
    /// `lambda` of the fixed-weight objective.
    pub lambda_fixed: f64,
    pub lambda_init: f64,
    pub lambda_range: (f64, f64),
    pub weight_decay: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Only the top `k` layers train; `None` trains everything.
    pub unfreeze_top_k: Option<usize>,
    pub seed: u64,
    pub hessian: HessianMode,
    pub damping: f64,
    pub gradient_layer: GradientLayer,
    /// Forces the influence step size instead of the cosine schedule.
    pub eta_override: Option<f64>,
    /// In SL mode, apply the learned policy on top of the weak augmentation.
    pub sl_strong_augment: bool,
    pub weak: WeakAugmentConfig,
    pub cta: CtaConfig,
    /// Run validation at the end of every epoch.
    pub eval_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::FeatureRecognition, TrainMode::SslInfluence)
    }
}

impl TrainConfig {
    /// Defaults for a preset and mode. SL modes use the SL batch size and
    /// learning rate.
    pub fn preset(preset: Preset, mode: TrainMode) -> Self {
        let (tau, mu, b_ssl, b_sl, lambda_init, lr_ssl) = match preset {
            Preset::FeatureRecognition => (0.98, 7, 6, 6, 0.5, 0.1),
            Preset::SpeciesClassification => (0.85, 2, 24, 16, 0.0, 0.001),
        };
        let sl = mode == TrainMode::Sl;
        TrainConfig {
            mode,
            batch_size: if sl { b_sl } else { b_ssl },
            mu,
            tau,
            lambda_fixed: 1.0,
            lambda_init,
            lambda_range: (0.0, 2.0),
            weight_decay: 1e-4,
            base_lr: if sl { 390.625e-6 } else { lr_ssl },
            momentum: 0.9,
            epochs: 1,
            unfreeze_top_k: None,
            seed: 0,
            hessian: HessianMode::Identity,
            damping: DEFAULT_DAMPING,
            gradient_layer: GradientLayer::Final,
            eta_override: None,
            sl_strong_augment: true,
            weak: WeakAugmentConfig::default(),
            cta: CtaConfig::default(),
            eval_every_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.mode.is_ssl() && self.mu == 0 {
            return fail("mu must be at least 1 in SSL modes".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return fail(format!("base learning rate {} must be positive", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let (lo, hi) = self.lambda_range;
        if !(lo <= self.lambda_init && self.lambda_init <= hi) {
            return fail(format!("lambda init {} outside [{lo}, {hi}]", self.lambda_init));
        }
        if self.damping <= 0.0 {
            return fail(format!("damping {} must be positive", self.damping));
        }
        self.weak.validate()?;
        self.cta.policy().validate()
    }

    /// `epochs * ceil(N_labelled / B)`.
    pub fn total_steps(&self, labelled: usize) -> usize {
        self.epochs * labelled.div_ceil(self.batch_size)
    }

    pub fn unlabelled_per_step(&self) -> usize {
        if self.mode.is_ssl() {
            self.mu * self.batch_size
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_table_values() {
        let f = TrainConfig::preset(Preset::FeatureRecognition, TrainMode::SslInfluence);
        assert_eq!((f.tau, f.mu, f.batch_size, f.lambda_init), (0.98, 7, 6, 0.5));
        assert_eq!(f.base_lr, 0.1);
        assert_eq!(f.unlabelled_per_step(), 42);
        let s = TrainConfig::preset(Preset::SpeciesClassification, TrainMode::SslFixed);
        assert_eq!((s.tau, s.mu, s.batch_size, s.lambda_init), (0.85, 2, 24, 0.0));
        assert_eq!(s.base_lr, 0.001);
        let sl = TrainConfig::preset(Preset::SpeciesClassification, TrainMode::Sl);
        assert_eq!((sl.batch_size, sl.base_lr), (16, 390.625e-6));
        assert_eq!(sl.weight_decay, 1e-4);
    }

    #[test]
    fn step_arithmetic() {
        let mut c = TrainConfig::preset(Preset::FeatureRecognition, TrainMode::Sl);
        c.batch_size = 5;
        assert_eq!(c.total_steps(10), 2);
        assert_eq!(c.total_steps(11), 3);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = TrainConfig::default();
        c.tau = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda_init = 3.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert!("ssl".parse::<TrainMode>().is_err());
    }
}
