use std::hash::Hasher;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// Ordered, named collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Puts every tensor on `tape`. Only `trainable` bindings receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if t.requires_grad() == trainable {
                    tape.leaf(t)
                } else {
                    let mut c = t.clone();
                    c.set_requires_grad(trainable);
                    tape.leaf(&c)
                }
            })
            .collect()
    }

    /// Gradients for `vars` (as returned by [`bind`](Self::bind)), zero-filled when absent.
    pub fn collect_grads(grads: &Gradients, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// FNV-1a over the bit patterns of every value, in order.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        for t in &self.tensors {
            for v in t.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
