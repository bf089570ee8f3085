use serde::{Deserialize, Serialize};

use super::boxes::{decode_box, iou, DefaultBoxSet, Xyxy};
use super::model::{stack_images, DetectorModel};
use crate::error::{Error, Result};
use crate::numkernel::Tape;

/// Default suppression threshold for NMS.
pub const NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Xyxy,
    /// Softmax confidence of `label`.
    pub score: f64,
    pub label: usize,
}

/// Greedy NMS: visit by descending score (ties by lower index) and drop any
/// box whose IoU with an already kept box exceeds `threshold`.
pub fn nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(&k.bbox, &dets[i].bbox) <= threshold) {
            kept.push(dets[i]);
        }
    }
    kept
}

/// Turns one image's raw offsets (`[B, 4]`) and softmax confidences (`[B, C]`)
/// into clipped, per-class NMS'd detections sorted by descending score.
pub fn decode_detections(
    offsets: &[f64],
    probs: &[f64],
    defaults: &DefaultBoxSet,
    num_classes: usize,
    conf_threshold: f64,
    nms_threshold: f64,
) -> Vec<Detection> {
    let side = defaults.image_side as f64;
    let mut out = Vec::new();
    for class in 1..num_classes {
        let candidates: Vec<Detection> = (0..defaults.len())
            .filter(|&b| probs[b * num_classes + class] >= conf_threshold)
            .map(|b| {
                let off = defaults.unscale(&offsets[b * 4..b * 4 + 4]);
                Detection {
                    bbox: decode_box(&off, &defaults.boxes[b]).to_xyxy().clip(side),
                    score: probs[b * num_classes + class],
                    label: class,
                }
            })
            .collect();
        out.extend(nms(&candidates, nms_threshold));
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

fn check_threshold(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
    }
}

/// Runs the detector on a batch of `[C, S, S]` images without recording gradients.
pub fn infer_batch(
    model: &DetectorModel,
    images: &[&[f64]],
    conf_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<Vec<Detection>>> {
    check_threshold("confidence threshold", conf_threshold)?;
    check_threshold("nms threshold", nms_threshold)?;
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &model.config;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, false);
    let x = stack_images(&mut tape, images, cfg.in_channels, cfg.image_side)?;
    let out = model.forward(&mut tape, &vars, x)?;
    let probs = tape.softmax(out.logits)?;
    let nb = model.num_boxes();
    let c = cfg.num_classes;
    let (ov, pv) = (tape.value(out.offsets), tape.value(probs));
    Ok((0..images.len())
        .map(|n| {
            decode_detections(
                &ov[n * nb * 4..(n + 1) * nb * 4],
                &pv[n * nb * c..(n + 1) * nb * c],
                &model.defaults,
                c,
                conf_threshold,
                nms_threshold,
            )
        })
        .collect())
}

pub fn infer(model: &DetectorModel, image: &[f64], conf_threshold: f64, nms_threshold: f64) -> Result<Vec<Detection>> {
    Ok(infer_batch(model, &[image], conf_threshold, nms_threshold)?.remove(0))
}
