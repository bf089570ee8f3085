//! Class weight normalization: per-class weights inversely proportional to
//! how many predictions land on each class, then broadcast to predictions.

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// Per-class scale hyperparameters `a_c`.
    pub a: Vec<f64>,
    /// Argmax counts `n_c`.
    pub counts: Vec<usize>,
    /// Total predictions `N`.
    pub total: usize,
    /// `b_c = a_c · N / (n_c · C)`, or 0 for classes nobody predicted.
    pub per_class: Vec<f64>,
    /// `w_i = b_{argmax P_i}`.
    pub per_prediction: Vec<f64>,
}

/// Argmax of each `C`-wide row; ties resolve to the lower class.
pub fn argmax_classes(conf: &[f64], classes: usize) -> Vec<usize> {
    conf.chunks(classes)
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Class weights `B` and counts `n` for `N` confidence rows of width `C`.
pub fn compute_class_weights(conf: &[f64], a: &[f64], classes: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if classes == 0 || a.len() != classes || conf.len() % classes != 0 {
        return Err(shape_err(
            "compute_class_weights",
            format!("{} confidences, {} class scales, C = {classes}", conf.len(), a.len()),
        ));
    }
    let total = conf.len() / classes;
    if total == 0 {
        return Err(Error::InvalidArgument("class weights need at least one prediction".into()));
    }
    if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("class scales must be positive, got {a:?}")));
    }
    let mut counts = vec![0usize; classes];
    for c in argmax_classes(conf, classes) {
        counts[c] += 1;
    }
    let b = counts
        .iter()
        .zip(a)
        .map(|(&n, &ac)| {
            if n == 0 {
                0.0
            } else {
                ac * total as f64 / (n as f64 * classes as f64)
            }
        })
        .collect();
    Ok((b, counts))
}

pub fn allocate_weights(b: &[f64], conf: &[f64]) -> Vec<f64> {
    argmax_classes(conf, b.len()).into_iter().map(|c| b[c]).collect()
}

/// Both steps at once, keeping the intermediate counts for inspection.
pub fn class_weight_normalization(conf: &[f64], a: &[f64], classes: usize) -> Result<ClassWeights> {
    let (per_class, counts) = compute_class_weights(conf, a, classes)?;
    let per_prediction = allocate_weights(&per_class, conf);
    Ok(ClassWeights {
        a: a.to_vec(),
        total: per_prediction.len(),
        counts,
        per_class,
        per_prediction,
    })
}
