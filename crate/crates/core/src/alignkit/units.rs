use crate::error::{shape_err, Result};
use crate::numkernel::{Tape, Var};

/// Zero-padded 3×3 neighbourhoods of every feature-map cell, `[U, C, 3, 3]`.
///
/// The feature discriminator realizes the same receptive field with a padded
/// 3×3 convolution, so its output at a cell depends on exactly this unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureUnitBatch {
    pub channels: usize,
    pub units: Vec<f64>,
    pub source: bool,
}

impl FeatureUnitBatch {
    pub fn len(&self) -> usize {
        self.units.len() / (self.channels * 9)
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn unit(&self, u: usize) -> &[f64] {
        let n = self.channels * 9;
        &self.units[u * n..(u + 1) * n]
    }
}

/// Cuts a `[C, H, W]` map into one 3×3 unit per cell, raster order.
pub fn extract_units(map: &[f64], channels: usize, h: usize, w: usize, source: bool) -> Result<FeatureUnitBatch> {
    if h == 0 || w == 0 || channels == 0 || map.len() != channels * h * w {
        return Err(shape_err("extract_units", format!("{} values for [{channels}, {h}, {w}]", map.len())));
    }
    let mut units = Vec::with_capacity(h * w * channels * 9);
    for i in 0..h {
        for j in 0..w {
            for c in 0..channels {
                for di in 0..3 {
                    for dj in 0..3 {
                        let y = i as isize + di as isize - 1;
                        let x = j as isize + dj as isize - 1;
                        let v = if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            0.0
                        } else {
                            map[(c * h + y as usize) * w + x as usize]
                        };
                        units.push(v);
                    }
                }
            }
        }
    }
    Ok(FeatureUnitBatch {
        channels,
        units,
        source,
    })
}

/// Concatenates `[M, 4]` offsets with the `[M, C]` confidence block into
/// `[M, 4 + C]` vectors. Confidences are softmaxed unless `raw_logits`.
pub fn build_prediction_vectors(tape: &mut Tape, offsets: Var, logits: Var, raw_logits: bool) -> Result<Var> {
    let m = tape.shape(offsets)[0];
    if tape.shape(offsets) != [m, 4] || tape.shape(logits).len() != 2 || tape.shape(logits)[0] != m {
        return Err(shape_err(
            "build_prediction_vectors",
            format!("offsets {:?}, logits {:?}", tape.shape(offsets), tape.shape(logits)),
        ));
    }
    let conf = if raw_logits { logits } else { tape.softmax(logits)? };
    tape.concat_cols(&[offsets, conf])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_counts_and_padding() {
        let map = vec![1.0; 64];
        let b = extract_units(&map, 1, 8, 8, true).unwrap();
        assert_eq!(b.len(), 64);
        let corner = b.unit(0);
        assert_eq!(corner.iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(corner.iter().filter(|&&v| v == 0.0).count(), 5);

        let single = extract_units(&[2.0, 3.0], 2, 1, 1, false).unwrap();
        assert_eq!(single.len(), 1);
        let mut want = vec![0.0; 18];
        want[4] = 2.0;
        want[13] = 3.0;
        assert_eq!(single.unit(0), want.as_slice());
    }

    #[test]
    fn prediction_vector_layout() {
        let mut t = Tape::new();
        let off = t.constant([3, 4], (0..12).map(|i| i as f64).collect()).unwrap();
        let lg = t.constant([3, 2], vec![0.0; 6]).unwrap();
        let v = build_prediction_vectors(&mut t, off, lg, false).unwrap();
        assert_eq!(t.shape(v), &[3, 6]);
        assert_eq!(&t.value(v)[..6], &[0.0, 1.0, 2.0, 3.0, 0.5, 0.5]);
        let raw = build_prediction_vectors(&mut t, off, lg, true).unwrap();
        assert_eq!(&t.value(raw)[4..6], &[0.0, 0.0]);
    }
}
