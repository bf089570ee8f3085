//! Single-feature-map SSD: default boxes, box coding, matching, hard negative
//! mining, the multibox loss and NMS inference.

mod boxes;
mod inference;
mod loss;
mod matching;
mod model;

use serde::{Deserialize, Serialize};

pub use boxes::{
    decode_box, encode_box, generate_default_boxes, iou, BoxOffsets, BoxTemplate, CxCyWh, DefaultBoxSet, Xyxy,
    MAX_LOG_RATIO,
};
pub use inference::{decode_detections, infer, infer_batch, nms, Detection, NMS_IOU};
pub use loss::ssd_loss;
pub use matching::{hard_negative_mining, match_gt_to_defaults, Assignment, MATCH_IOU, NEG_POS_RATIO};
pub use model::{stack_images, DetectorConfig, DEFAULT_VARIANCES, HEAD_PARAM_COUNT, DetectorModel, DetectorOutputs};

/// Labeled object; `label` is in `1..C` (0 is background).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: Xyxy,
    pub label: usize,
}
