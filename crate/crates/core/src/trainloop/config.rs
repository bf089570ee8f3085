use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WithoutDa,
    PlainAdv,
    WithoutNorm,
    NormDAndP,
    NormP,
    Reference,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::WithoutDa,
        Mode::PlainAdv,
        Mode::WithoutNorm,
        Mode::NormDAndP,
        Mode::NormP,
        Mode::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::WithoutDa => "without_da",
            Mode::PlainAdv => "plain_adv",
            Mode::WithoutNorm => "without_norm",
            Mode::NormDAndP => "norm_d_and_p",
            Mode::NormP => "norm_p",
            Mode::Reference => "reference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }

    /// Feature alignment runs in every adversarial mode.
    pub fn feature_alignment(self) -> bool {
        matches!(self, Mode::PlainAdv | Mode::WithoutNorm | Mode::NormDAndP | Mode::NormP)
    }

    pub fn prediction_alignment(self) -> bool {
        matches!(self, Mode::WithoutNorm | Mode::NormDAndP | Mode::NormP)
    }

    /// Class weights on the discriminator side of the prediction game.
    pub fn weights_discriminator(self) -> bool {
        self == Mode::NormDAndP
    }

    /// Class weights on the detector side of the prediction game.
    pub fn weights_detector(self) -> bool {
        matches!(self, Mode::NormDAndP | Mode::NormP)
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Mode::NormDAndP => 0.1,
            _ => 1.0,
        }
    }

    pub fn default_class_scales(self) -> Vec<f64> {
        match self {
            Mode::NormP => vec![3.0, 1.0],
            _ => vec![1.0, 1.0],
        }
    }
}

/// Per-mode replacement for the global `alpha` / `class_scales`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeOverride {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub class_scales: Option<Vec<f64>>,
}

/// Training hyperparameters. The prediction-game coefficient and class scales
/// resolve as: `mode_overrides[mode]`, then the global field, then the mode default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Mode for single adaptation runs.
    pub mode: Mode,
    /// Modes compared by an experiment, in report order.
    pub modes: Vec<Mode>,
    pub repetitions: usize,
    pub pretrain_iterations: usize,
    /// Pretraining iterations at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub da_iterations: usize,
    pub lr_model: f64,
    /// Model learning rate during adaptation.
    pub da_lr_model: f64,
    pub lr_discriminator: f64,
    pub momentum: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub alpha: Option<f64>,
    pub class_scales: Option<Vec<f64>>,
    pub mode_overrides: BTreeMap<Mode, ModeOverride>,
    pub seed: u64,
    /// Sample training scenes from the set extended by 90/180/270° rotations.
    pub rotation_augment: bool,
    /// Feed raw logits instead of softmax confidences to the prediction discriminator.
    pub prediction_raw_logits: bool,
    /// Adapt a copy of the detection head on target data while the source
    /// head keeps the supervised loss; the adapted model carries the target head.
    pub separate_target_head: bool,
    /// Verify after every adaptation step that only the stepped party changed.
    pub check_purity: bool,
    pub detector: DetectorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::NormP,
            modes: Mode::ALL.to_vec(),
            repetitions: 5,
            pretrain_iterations: 1500,
            lr_milestones: vec![1050, 1313],
            lr_decay: 0.1,
            da_iterations: 600,
            lr_model: 1e-2,
            da_lr_model: 1e-3,
            lr_discriminator: 1e-3,
            momentum: 0.9,
            batch_source: 8,
            batch_target: 8,
            alpha: None,
            class_scales: None,
            mode_overrides: BTreeMap::new(),
            seed: 0,
            rotation_augment: true,
            prediction_raw_logits: false,
            separate_target_head: false,
            check_purity: false,
            detector: DetectorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha_for(self.mode)
    }

    pub fn class_scales(&self) -> Vec<f64> {
        self.class_scales_for(self.mode)
    }

    pub fn alpha_for(&self, mode: Mode) -> f64 {
        self.mode_overrides
            .get(&mode)
            .and_then(|o| o.alpha)
            .or(self.alpha)
            .unwrap_or_else(|| mode.default_alpha())
    }

    pub fn class_scales_for(&self, mode: Mode) -> Vec<f64> {
        self.mode_overrides
            .get(&mode)
            .and_then(|o| o.class_scales.clone())
            .or_else(|| self.class_scales.clone())
            .unwrap_or_else(|| mode.default_class_scales())
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// Pretraining learning rate at iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| it >= m).count();
        self.lr_model * self.lr_decay.powi(k as i32)
    }

    /// Checks ranges. Error messages start with the offending field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_source == 0 {
            return bad("batch_source: must be at least 1".into());
        }
        if self.batch_target == 0 {
            return bad("batch_target: must be at least 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions: must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("modes: must list at least one mode".into());
        }
        for (name, lr) in [
            ("lr_model", self.lr_model),
            ("da_lr_model", self.da_lr_model),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name}: must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum: must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay: must be positive, got {}", self.lr_decay));
        }
        let c = self.detector.num_classes;
        let check_alpha = |path: String, a: Option<f64>| match a {
            Some(a) if !(a >= 0.0 && a.is_finite()) => bad(format!("{path}: must be non-negative, got {a}")),
            _ => Ok(()),
        };
        let check_scales = |path: String, a: &Option<Vec<f64>>| match a {
            Some(a) if a.len() != c || a.iter().any(|&v| !(v > 0.0 && v.is_finite())) => {
                bad(format!("{path}: needs {c} positive entries, got {a:?}"))
            }
            _ => Ok(()),
        };
        check_alpha("alpha".into(), self.alpha)?;
        check_scales("class_scales".into(), &self.class_scales)?;
        for (mode, o) in &self.mode_overrides {
            check_alpha(format!("mode_overrides.{}.alpha", mode.name()), o.alpha)?;
            check_scales(format!("mode_overrides.{}.class_scales", mode.name()), &o.class_scales)?;
        }
        if self.mode_overrides.is_empty() && self.class_scales.is_none() && c != 2 {
            return bad(format!("class_scales: mode defaults cover 2 classes; set them for {c}"));
        }
        self.detector
            .validate()
            .map_err(|e| Error::InvalidArgument(format!("detector.{}", e.to_string().trim_start_matches("invalid argument: "))))
    }
}
