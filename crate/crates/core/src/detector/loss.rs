use super::boxes::{encode_box, DefaultBoxSet};
use super::matching::{hard_negative_mining, match_gt_to_defaults, MATCH_IOU, NEG_POS_RATIO};
use super::GroundTruth;
use crate::error::{shape_err, Result};
use crate::numkernel::{Tape, Var, PROB_EPS};

/// Multibox loss over a batch.
///
/// `offsets` is `[N·B, 4]`, `logits` is `[N·B, C]`, both in default-box order
/// per image. The result is `(Σ_pos smooth_l1 + Σ_{pos ∪ mined neg} CE) / N_pos`
/// with `N_pos` counted over the whole batch, and exactly 0 when there are
/// no positives.
pub fn ssd_loss(
    tape: &mut Tape,
    offsets: Var,
    logits: Var,
    gts: &[&[GroundTruth]],
    defaults: &DefaultBoxSet,
) -> Result<Var> {
    let nb = defaults.len();
    let rows = nb * gts.len();
    let classes = *tape.shape(logits).last().unwrap_or(&0);
    if tape.shape(offsets) != [rows, 4] || tape.shape(logits) != [rows, classes] {
        return Err(shape_err(
            "ssd_loss",
            format!(
                "offsets {:?} / logits {:?} for {} images × {nb} boxes",
                tape.shape(offsets),
                tape.shape(logits),
                gts.len()
            ),
        ));
    }
    let probs = tape.softmax(logits)?;

    let mut loc_targets = vec![0.0; rows * 4];
    let mut loc_weights = vec![0.0; rows];
    let mut labels = vec![0usize; rows];
    let mut conf_weights = vec![0.0; rows];
    let mut n_pos = 0usize;
    for (n, image_gts) in gts.iter().enumerate() {
        let assign = match_gt_to_defaults(image_gts, defaults, MATCH_IOU);
        let positive = assign.positive_mask();
        let base = n * nb;
        for (d, m) in assign.matched.iter().enumerate() {
            if let Some(g) = m {
                let gt = &image_gts[*g];
                let enc = encode_box(&gt.bbox.to_cxcywh(), &defaults.boxes[d])?;
                let v = defaults.variances;
                let a = enc.to_array();
                for k in 0..4 {
                    loc_targets[(base + d) * 4 + k] = a[k] / v[k];
                }
                loc_weights[base + d] = 1.0;
                labels[base + d] = gt.label;
                conf_weights[base + d] = 1.0;
                n_pos += 1;
            }
        }
        let pv = tape.value(probs);
        let bg_losses: Vec<f64> = (0..nb)
            .map(|d| -pv[(base + d) * classes].clamp(PROB_EPS, 1.0).ln())
            .collect();
        let negatives = hard_negative_mining(&bg_losses, &positive, NEG_POS_RATIO);
        for (d, &neg) in negatives.iter().enumerate() {
            if neg {
                conf_weights[base + d] = 1.0;
            }
        }
    }
    if n_pos == 0 {
        return tape.constant([1], vec![0.0]);
    }
    let loc = tape.smooth_l1(offsets, &loc_targets, Some(&loc_weights))?;
    let conf = tape.cross_entropy(probs, &labels, Some(&conf_weights))?;
    let total = tape.add(loc, conf)?;
    tape.scale(total, 1.0 / n_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::boxes::{CxCyWh, Xyxy};

    fn single_default() -> DefaultBoxSet {
        DefaultBoxSet::from_boxes(64, vec![CxCyWh::new(20.0, 20.0, 10.0, 10.0)])
    }

    #[test]
    fn perfect_predictions_give_zero() {
        let set = single_default();
        let gt = GroundTruth {
            bbox: Xyxy::new(16.0, 14.0, 26.0, 28.0),
            label: 1,
        };
        let enc = encode_box(&gt.bbox.to_cxcywh(), &set.boxes[0]).unwrap();
        let mut t = Tape::new();
        let off = t.constant([1, 4], enc.to_array().to_vec()).unwrap();
        let logits = t.constant([1, 2], vec![-40.0, 40.0]).unwrap();
        let l = ssd_loss(&mut t, off, logits, &[&[gt]], &set).unwrap();
        assert!(t.scalar(l) <= 1e-6);
    }

    #[test]
    fn variances_scale_regression_targets() {
        let set = single_default().with_variances([0.1, 0.1, 0.2, 0.2]);
        let gt = GroundTruth {
            bbox: Xyxy::new(16.0, 14.0, 26.0, 28.0),
            label: 1,
        };
        let enc = encode_box(&gt.bbox.to_cxcywh(), &set.boxes[0]).unwrap().to_array();
        let raw: Vec<f64> = enc.iter().zip(set.variances).map(|(o, v)| o / v).collect();
        let mut t = Tape::new();
        let off = t.constant([1, 4], raw.clone()).unwrap();
        let logits = t.constant([1, 2], vec![-40.0, 40.0]).unwrap();
        let l = ssd_loss(&mut t, off, logits, &[&[gt]], &set).unwrap();
        assert!(t.scalar(l) <= 1e-6);
        let back = set.unscale(&raw).to_array();
        assert!(back.iter().zip(enc).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn half_confidence_single_positive_is_ln2() {
        let set = single_default();
        let gt = GroundTruth {
            bbox: set.boxes[0].to_xyxy(),
            label: 1,
        };
        let mut t = Tape::new();
        let off = t.constant([1, 4], vec![0.0; 4]).unwrap();
        let logits = t.constant([1, 2], vec![0.0, 0.0]).unwrap();
        let l = ssd_loss(&mut t, off, logits, &[&[gt]], &set).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn no_gts_gives_zero() {
        let set = single_default();
        let mut t = Tape::new();
        let off = t.constant([1, 4], vec![0.3; 4]).unwrap();
        let logits = t.constant([1, 2], vec![1.0, -1.0]).unwrap();
        let l = ssd_loss(&mut t, off, logits, &[&[]], &set).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn rejects_misaligned_outputs() {
        let set = single_default();
        let mut t = Tape::new();
        let off = t.constant([2, 4], vec![0.0; 8]).unwrap();
        let logits = t.constant([2, 2], vec![0.0; 4]).unwrap();
        assert!(ssd_loss(&mut t, off, logits, &[&[]], &set).is_err());
    }
}
