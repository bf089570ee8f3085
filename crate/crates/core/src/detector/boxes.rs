use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offsets and log-ratios are clamped to this magnitude before `exp` in decoding.
pub const MAX_LOG_RATIO: f64 = 10.0;

/// Corner-form box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Xyxy {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Center-form box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CxCyWh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Xyxy {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn to_cxcywh(&self) -> CxCyWh {
        CxCyWh {
            cx: 0.5 * (self.x1 + self.x2),
            cy: 0.5 * (self.y1 + self.y2),
            w: self.width(),
            h: self.height(),
        }
    }

    pub fn clip(&self, side: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, side),
            y1: self.y1.clamp(0.0, side),
            x2: self.x2.clamp(0.0, side),
            y2: self.y2.clamp(0.0, side),
        }
    }

    pub fn is_valid_in(&self, side: f64) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= side && self.y2 <= side
    }
}

impl CxCyWh {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn to_xyxy(&self) -> Xyxy {
        Xyxy {
            x1: self.cx - 0.5 * self.w,
            y1: self.cy - 0.5 * self.h,
            x2: self.cx + 0.5 * self.w,
            y2: self.cy + 0.5 * self.h,
        }
    }
}

/// Intersection over union; 0 for disjoint or degenerate pairs.
pub fn iou(a: &Xyxy, b: &Xyxy) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Regression target relative to a default box: center shift in units of the
/// default size, then log size ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOffsets {
    pub dcx: f64,
    pub dcy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxOffsets {
    pub fn to_array(self) -> [f64; 4] {
        [self.dcx, self.dcy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            dcx: v[0],
            dcy: v[1],
            dw: v[2],
            dh: v[3],
        }
    }
}

pub fn encode_box(gt: &CxCyWh, default: &CxCyWh) -> Result<BoxOffsets> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ground-truth box needs positive size, got {}x{}",
            gt.w, gt.h
        )));
    }
    if !(default.w > 0.0 && default.h > 0.0) {
        return Err(Error::InvalidArgument("default box needs positive size".into()));
    }
    Ok(BoxOffsets {
        dcx: (gt.cx - default.cx) / default.w,
        dcy: (gt.cy - default.cy) / default.h,
        dw: (gt.w / default.w).ln(),
        dh: (gt.h / default.h).ln(),
    })
}

pub fn decode_box(off: &BoxOffsets, default: &CxCyWh) -> CxCyWh {
    CxCyWh {
        cx: default.cx + off.dcx * default.w,
        cy: default.cy + off.dcy * default.h,
        w: default.w * off.dw.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp(),
        h: default.h * off.dh.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp(),
    }
}

/// Anchor template: side length in pixels and aspect ratio `w/h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTemplate {
    pub size: f64,
    pub aspect: f64,
}

/// Default boxes tiled over one feature map: raster cell order, templates inner-most.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultBoxSet {
    pub image_side: usize,
    pub fmap_h: usize,
    pub fmap_w: usize,
    pub templates: Vec<BoxTemplate>,
    pub boxes: Vec<CxCyWh>,
    /// The regressor predicts `offsets / variances`; all ones means raw offsets.
    pub variances: [f64; 4],
}

impl DefaultBoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn per_cell(&self) -> usize {
        self.templates.len()
    }

    pub fn with_variances(self, variances: [f64; 4]) -> Self {
        Self { variances, ..self }
    }

    /// Regressor output row to box offsets.
    pub fn unscale(&self, raw: &[f64]) -> BoxOffsets {
        let v = self.variances;
        BoxOffsets {
            dcx: raw[0] * v[0],
            dcy: raw[1] * v[1],
            dw: raw[2] * v[2],
            dh: raw[3] * v[3],
        }
    }

    /// Builds a set from explicit boxes (single cell layout), mainly for small hand-built cases.
    pub fn from_boxes(image_side: usize, boxes: Vec<CxCyWh>) -> Self {
        let templates = boxes
            .iter()
            .map(|b| BoxTemplate {
                size: (b.w * b.h).sqrt(),
                aspect: b.w / b.h,
            })
            .collect();
        Self {
            image_side,
            fmap_h: 1,
            fmap_w: 1,
            templates,
            boxes,
            variances: [1.0; 4],
        }
    }
}

pub fn generate_default_boxes(
    image_side: usize,
    fmap_h: usize,
    fmap_w: usize,
    templates: &[BoxTemplate],
) -> Result<DefaultBoxSet> {
    if image_side == 0 || fmap_h == 0 || fmap_w == 0 || templates.is_empty() {
        return Err(Error::InvalidArgument("default boxes need a positive side, map and template list".into()));
    }
    if templates.iter().any(|t| !(t.size > 0.0 && t.aspect > 0.0)) {
        return Err(Error::InvalidArgument("template sizes and aspects must be positive".into()));
    }
    let s = image_side as f64;
    let mut boxes = Vec::with_capacity(fmap_h * fmap_w * templates.len());
    for i in 0..fmap_h {
        for j in 0..fmap_w {
            let cx = (j as f64 + 0.5) * s / fmap_w as f64;
            let cy = (i as f64 + 0.5) * s / fmap_h as f64;
            for t in templates {
                let r = t.aspect.sqrt();
                boxes.push(CxCyWh::new(cx, cy, t.size * r, t.size / r));
            }
        }
    }
    Ok(DefaultBoxSet {
        image_side,
        fmap_h,
        fmap_w,
        templates: templates.to_vec(),
        boxes,
        variances: [1.0; 4],
    })
}
