use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numkernel::{ParamSet, Tape, Tensor, Var};

/// Hidden width of both discriminators.
pub const DISC_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// Scores 3×3 feature units: conv3×3 → ReLU → conv1×1 → ReLU → conv1×1 → sigmoid.
    Feature,
    /// Scores prediction vectors: dense → ReLU → dense → ReLU → dense → sigmoid.
    Prediction,
}

/// Domain classifier; outputs the probability that an input came from the source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub kind: DiscriminatorKind,
    pub in_dim: usize,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn feature<R: Rng + ?Sized>(in_channels: usize, rng: &mut R) -> Self {
        let h = DISC_HIDDEN;
        let mut params = ParamSet::default();
        params.push("df.0.weight", Tensor::glorot_uniform([h, in_channels, 3, 3], in_channels * 9, h * 9, rng));
        params.push("df.0.bias", Tensor::zeros([h]));
        params.push("df.1.weight", Tensor::glorot_uniform([h, h, 1, 1], h, h, rng));
        params.push("df.1.bias", Tensor::zeros([h]));
        params.push("df.2.weight", Tensor::glorot_uniform([1, h, 1, 1], h, 1, rng));
        params.push("df.2.bias", Tensor::zeros([1]));
        Self {
            kind: DiscriminatorKind::Feature,
            in_dim: in_channels,
            params,
        }
    }

    pub fn prediction<R: Rng + ?Sized>(vector_len: usize, rng: &mut R) -> Self {
        let h = DISC_HIDDEN;
        let mut params = ParamSet::default();
        params.push("dp.0.weight", Tensor::glorot_uniform([vector_len, h], vector_len, h, rng));
        params.push("dp.0.bias", Tensor::zeros([h]));
        params.push("dp.1.weight", Tensor::glorot_uniform([h, h], h, h, rng));
        params.push("dp.1.bias", Tensor::zeros([h]));
        params.push("dp.2.weight", Tensor::glorot_uniform([h, 1], h, 1, rng));
        params.push("dp.2.bias", Tensor::zeros([1]));
        Self {
            kind: DiscriminatorKind::Prediction,
            in_dim: vector_len,
            params,
        }
    }

    /// Source-domain probabilities, one per feature cell (`[N·H·W]`, raster
    /// order) or one per prediction vector (`[M]`).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        let logits = match self.kind {
            DiscriminatorKind::Feature => {
                if shape.len() != 4 || shape[1] != self.in_dim {
                    return Err(shape_err("feature discriminator", format!("input {shape:?}, expected [N, {}, H, W]", self.in_dim)));
                }
                let x = tape.conv2d(input, vars[0], vars[1], 1, 1)?;
                let x = tape.relu(x)?;
                let x = tape.conv2d(x, vars[2], vars[3], 1, 0)?;
                let x = tape.relu(x)?;
                tape.conv2d(x, vars[4], vars[5], 1, 0)?
            }
            DiscriminatorKind::Prediction => {
                if shape.len() != 2 || shape[1] != self.in_dim {
                    return Err(shape_err("prediction discriminator", format!("input {shape:?}, expected [M, {}]", self.in_dim)));
                }
                let x = tape.dense(input, vars[0], vars[1])?;
                let x = tape.relu(x)?;
                let x = tape.dense(x, vars[2], vars[3])?;
                let x = tape.relu(x)?;
                tape.dense(x, vars[4], vars[5])?
            }
        };
        let n = tape.value(logits).len();
        let flat = tape.reshape(logits, [n])?;
        tape.sigmoid(flat)
    }

    /// Zeroes the output layer so every output is exactly 0.5.
    pub fn blind(&mut self) {
        let n = self.params.len();
        for t in &mut self.params.tensors_mut()[n - 2..] {
            t.data_mut().fill(0.0);
        }
    }
}
