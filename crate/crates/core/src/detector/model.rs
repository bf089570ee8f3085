use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::{generate_default_boxes, BoxTemplate, DefaultBoxSet};
use crate::error::{Error, Result};
use crate::numkernel::{ParamSet, Tape, Tensor, Var};

/// Geometry of the single-feature-map detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub image_side: usize,
    pub in_channels: usize,
    /// Output channels of each stride-2 3×3 conv block.
    pub backbone_channels: Vec<usize>,
    pub num_classes: usize,
    pub templates: Vec<BoxTemplate>,
    /// Scale between box offsets and regressor outputs (center x, center y, width, height).
    #[serde(default = "default_variances")]
    pub variances: [f64; 4],
}

/// The detection head's parameters are the last this many entries of the parameter set.
pub const HEAD_PARAM_COUNT: usize = 4;

pub const DEFAULT_VARIANCES: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

fn default_variances() -> [f64; 4] {
    DEFAULT_VARIANCES
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            in_channels: 3,
            backbone_channels: vec![16, 32, 32],
            num_classes: 2,
            templates: vec![
                BoxTemplate { size: 8.0, aspect: 1.0 },
                BoxTemplate { size: 14.0, aspect: 1.0 },
            ],
            variances: DEFAULT_VARIANCES,
        }
    }
}

impl DetectorConfig {
    pub fn feature_side(&self) -> usize {
        self.backbone_channels
            .iter()
            .fold(self.image_side, |s, _| (s + 2 - 3) / 2 + 1)
    }

    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&self.in_channels)
    }

    /// Error messages start with the offending field name.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.image_side < 2 {
            return bad("image_side: must be at least 2");
        }
        if self.in_channels == 0 {
            return bad("in_channels: must be positive");
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone_channels: needs at least one block, all widths positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes: needs background plus at least one object class");
        }
        if self.templates.is_empty() || self.templates.iter().any(|t| !(t.size > 0.0 && t.aspect > 0.0)) {
            return bad("templates: needs at least one template with positive size and aspect");
        }
        if self.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("variances: must be positive");
        }
        Ok(())
    }
}

/// Shared feature extractor plus location/confidence head.
///
/// One parameter set serves both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamSet,
    pub defaults: DefaultBoxSet,
}

/// Raw forward outputs, all on the caller's tape.
#[derive(Debug, Clone, Copy)]
pub struct DetectorOutputs {
    /// `[N, C_feat, Hf, Wf]` post-ReLU shallow feature map.
    pub features: Var,
    /// `[N·B, 4]` box offsets in default-box order.
    pub offsets: Var,
    /// `[N·B, C]` class logits in default-box order.
    pub logits: Var,
}

impl DetectorModel {
    pub fn new<R: Rng + ?Sized>(config: DetectorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        for (name, shape, fan_in, fan_out) in param_layout(&config) {
            let t = if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                Tensor::glorot_uniform(shape, fan_in, fan_out, rng)
            };
            params.push(name, t);
        }
        Self::assemble(config, params)
    }

    /// Rebuilds a model from a parameter set (e.g. loaded from a checkpoint).
    pub fn from_params(config: DetectorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        let matches = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.names().iter().zip(params.tensors()))
                .all(|((name, shape, ..), (n, t))| name == n && shape.as_slice() == t.shape());
        if !matches {
            return Err(Error::InvalidArgument(
                "parameter names or shapes do not match the detector config".into(),
            ));
        }
        Self::assemble(config, params)
    }

    fn assemble(config: DetectorConfig, params: ParamSet) -> Result<Self> {
        let fs = config.feature_side();
        let defaults = generate_default_boxes(config.image_side, fs, fs, &config.templates)?.with_variances(config.variances);
        Ok(Self {
            config,
            params,
            defaults,
        })
    }

    pub fn num_boxes(&self) -> usize {
        self.defaults.len()
    }

    /// Runs the backbone and head on `images` (`[N, C_in, S, S]`) using parameter
    /// bindings from [`ParamSet::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], images: Var) -> Result<DetectorOutputs> {
        let s = self.config.image_side;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels || shape[2] != s || shape[3] != s {
            return Err(Error::Shape {
                op: "forward_detect",
                detail: format!(
                    "expected images [N, {}, {s}, {s}], got {shape:?}",
                    self.config.in_channels
                ),
            });
        }
        let n = shape[0];
        let blocks = self.config.backbone_channels.len();
        let mut x = images;
        for i in 0..blocks {
            let y = tape.conv2d(x, vars[2 * i], vars[2 * i + 1], 2, 1)?;
            x = tape.relu(y)?;
        }
        let features = x;
        let h = 2 * blocks;
        let loc = tape.conv2d(features, vars[h], vars[h + 1], 1, 1)?;
        let conf = tape.conv2d(features, vars[h + 2], vars[h + 3], 1, 1)?;

        let a = self.config.templates.len();
        let c = self.config.num_classes;
        let fs = self.config.feature_side();
        let offsets = tape.gather(loc, head_permutation(n, a, 4, fs, fs), [n * fs * fs * a, 4])?;
        let logits = tape.gather(conf, head_permutation(n, a, c, fs, fs), [n * fs * fs * a, c])?;
        Ok(DetectorOutputs {
            features,
            offsets,
            logits,
        })
    }
}

/// `(name, shape, fan_in, fan_out)` for every parameter, in binding order.
fn param_layout(config: &DetectorConfig) -> Vec<(String, Vec<usize>, usize, usize)> {
    let mut out = Vec::new();
    let mut cin = config.in_channels;
    for (i, &cout) in config.backbone_channels.iter().enumerate() {
        out.push((format!("backbone.{i}.weight"), vec![cout, cin, 3, 3], cin * 9, cout * 9));
        out.push((format!("backbone.{i}.bias"), vec![cout], 0, 0));
        cin = cout;
    }
    let a = config.templates.len();
    for (part, k) in [("loc", 4 * a), ("conf", config.num_classes * a)] {
        out.push((format!("head.{part}.weight"), vec![k, cin, 3, 3], cin * 9, k * 9));
        out.push((format!("head.{part}.bias"), vec![k], 0, 0));
    }
    out
}

/// Index map from a `[N, A·K, H, W]` head map to `[N·H·W·A, K]` rows in default-box order.
fn head_permutation(n: usize, a: usize, k: usize, h: usize, w: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n * h * w * a * k);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for t in 0..a {
                    for q in 0..k {
                        idx.push(((b * a * k + t * k + q) * h + i) * w + j);
                    }
                }
            }
        }
    }
    idx
}

/// Packs `[3, S, S]` images into one `[N, 3, S, S]` constant.
pub fn stack_images(tape: &mut Tape, images: &[&[f64]], channels: usize, side: usize) -> Result<Var> {
    let per = channels * side * side;
    let mut data = Vec::with_capacity(per * images.len());
    for img in images {
        if img.len() != per {
            return Err(Error::Shape {
                op: "stack_images",
                detail: format!("image has {} values, expected {per}", img.len()),
            });
        }
        data.extend_from_slice(img);
    }
    tape.constant([images.len(), channels, side, side], data)
}
