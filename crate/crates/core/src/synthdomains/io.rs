//! Dataset directory format: `scenes/NNNNNN.ppm` (binary P6, 8-bit) plus one
//! `annotations.json` list of `{"id", "image", "domain", "boxes"}` records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{Domain, Scene};
use crate::detector::{GroundTruth, Xyxy};
use crate::error::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
/// Full labels of unlabeled-role datasets, kept beside the training copy.
pub const AUDIT_FILE: &str = "audit_annotations.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    image: String,
    domain: Domain,
    boxes: Option<Vec<[f64; 5]>>,
}

fn boxes_of(scene: &Scene) -> Vec<[f64; 5]> {
    scene
        .gts
        .iter()
        .map(|g| [g.bbox.x1, g.bbox.y1, g.bbox.x2, g.bbox.y2, g.label as f64])
        .collect()
}

/// Writes `scenes` under `dir`. With `labeled = false` the annotation file
/// carries `"boxes": null` and the boxes go to a separate audit file.
pub fn save_dataset(scenes: &[Scene], dir: &Path, labeled: bool) -> Result<()> {
    fs::create_dir_all(dir.join("scenes"))?;
    let mut records = Vec::with_capacity(scenes.len());
    let mut audit = Vec::new();
    for s in scenes {
        let image = format!("scenes/{:06}.ppm", s.id);
        fs::write(dir.join(&image), encode_ppm(&s.image, s.side))?;
        let boxes = boxes_of(s);
        if !labeled {
            audit.push(Record {
                id: s.id,
                image: image.clone(),
                domain: s.domain,
                boxes: Some(boxes.clone()),
            });
        }
        records.push(Record {
            id: s.id,
            image,
            domain: s.domain,
            boxes: labeled.then_some(boxes),
        });
    }
    fs::write(dir.join(ANNOTATIONS_FILE), serde_json::to_vec_pretty(&records)?)?;
    if !labeled {
        fs::write(dir.join(AUDIT_FILE), serde_json::to_vec_pretty(&audit)?)?;
    }
    Ok(())
}

/// Reads a dataset directory. A directory without annotations is an empty dataset.
/// Null boxes are filled from the audit file when present, else left empty.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let ann = dir.join(ANNOTATIONS_FILE);
    if !ann.exists() {
        if dir.is_dir() {
            return Ok(Vec::new());
        }
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let records = read_records(&ann)?;
    let audit_path = dir.join(AUDIT_FILE);
    let audit = if audit_path.exists() {
        Some(read_records(&audit_path)?)
    } else {
        None
    };

    let mut scenes = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let path = dir.join(&r.image);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let bytes = fs::read(&path)?;
        let (side, image) = decode_ppm(&bytes, &path)?;
        let boxes = match (&r.boxes, &audit) {
            (Some(b), _) => b.clone(),
            (None, Some(a)) => a
                .iter()
                .find(|x| x.id == r.id)
                .and_then(|x| x.boxes.clone())
                .unwrap_or_default(),
            (None, None) => Vec::new(),
        };
        let mut gts = Vec::with_capacity(boxes.len());
        for b in boxes {
            let bbox = Xyxy::new(b[0], b[1], b[2], b[3]);
            let label = b[4];
            if !bbox.is_valid_in(side as f64) || label < 0.0 || label.fract() != 0.0 {
                return Err(Error::Malformed {
                    path: ann.clone(),
                    offset: 0,
                    detail: format!("record {i}: invalid box {b:?}"),
                });
            }
            gts.push(GroundTruth { bbox, label: label as usize });
        }
        scenes.push(Scene {
            id: r.id,
            domain: r.domain,
            side,
            image,
            requested: gts.len(),
            gts,
        });
    }
    Ok(scenes)
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        detail: e.to_string(),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)) as u64
}

/// Quantizes `[3, S, S]` planar values to interleaved 8-bit P6.
pub fn encode_ppm(image: &[f64], side: usize) -> Vec<u8> {
    let plane = side * side;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            out.push((image[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Parses a square 8-bit P6 image into planar values in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<(usize, Vec<f64>)> {
    let err = |offset: usize, detail: &str| Error::Malformed {
        path: PathBuf::from(path),
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if !bytes.starts_with(b"P6") {
        return Err(err(0, "expected P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a header number"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "header number out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    if w != h || w == 0 {
        return Err(err(pos, "image must be square and non-empty"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after header"));
    }
    pos += 1;
    let plane = w * h;
    let body = &bytes[pos..];
    if body.len() != 3 * plane {
        return Err(err(
            pos + body.len().min(3 * plane),
            &format!("expected {} pixel bytes, found {}", 3 * plane, body.len()),
        ));
    }
    let mut image = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            image[c * plane + p] = body[3 * p + c] as f64 / 255.0;
        }
    }
    Ok((w, image))
}
