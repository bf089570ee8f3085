//! Detection evaluation: greedy matching, all-point AP, operating-point metrics
//! and multi-run statistics.

mod stats;

use serde::Serialize;

use crate::detector::{iou, Detection, GroundTruth};
use crate::error::{Error, Result};

pub use stats::aggregate_stats;

/// IoU a detection needs with an unmatched gt to count as a true positive.
pub const EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Scores in descending order (ties keep input order).
    pub scores: Vec<f64>,
    /// TP flag for each entry of `scores`.
    pub is_tp: Vec<bool>,
}

/// Greedy matching by descending score. Each detection takes its best-IoU
/// unmatched gt of the same label; it is a TP when that IoU reaches `threshold`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(dets.len());
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.label != d.label {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= threshold => {
                taken[g] = true;
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }
    let tp = is_tp.iter().filter(|&&t| t).count();
    MatchResult {
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        scores: order.iter().map(|&i| dets[i].score).collect(),
        is_tp,
    }
}

/// Matched detections pooled over a test set, sorted by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub num_gt: usize,
}

impl EvalSet {
    /// Matches each image separately, then pools. Score ties keep image order.
    pub fn from_images(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], threshold: f64) -> Result<Self> {
        if dets.len() != gts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} detection lists for {} ground-truth lists",
                dets.len(),
                gts.len()
            )));
        }
        let mut pooled = Vec::new();
        let mut num_gt = 0;
        for (d, g) in dets.iter().zip(gts) {
            let m = match_detections(d, g, threshold);
            num_gt += g.len();
            pooled.extend(m.scores.into_iter().zip(m.is_tp));
        }
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (scores, is_tp) = pooled.into_iter().unzip();
        Ok(Self { scores, is_tp, num_gt })
    }

    pub fn single(dets: &[Detection], gts: &[GroundTruth]) -> Self {
        let m = match_detections(dets, gts, EVAL_IOU);
        Self {
            scores: m.scores,
            is_tp: m.is_tp,
            num_gt: gts.len(),
        }
    }

    /// `(tp, fp)` over detections with score ≥ `threshold`.
    pub fn counts_at(&self, threshold: f64) -> (usize, usize) {
        let n = self.scores.partition_point(|&s| s >= threshold);
        let tp = self.is_tp[..n].iter().filter(|&&t| t).count();
        (tp, n - tp)
    }
}

/// All-point interpolated AP over score levels: detections sharing a score enter
/// together, and each level adds its recall gain times the best precision
/// reached at that level or any lower one.
pub fn average_precision(set: &EvalSet) -> Result<f64> {
    if set.num_gt == 0 {
        return Err(Error::InvalidArgument("average precision is undefined without ground truths".into()));
    }
    // (new TPs, precision) at the end of each score level.
    let mut levels: Vec<(usize, f64)> = Vec::new();
    let (mut tp, mut last_tp) = (0usize, 0usize);
    for (i, (&s, &t)) in set.scores.iter().zip(&set.is_tp).enumerate() {
        tp += t as usize;
        if set.scores.get(i + 1) == Some(&s) {
            continue;
        }
        levels.push((tp - last_tp, tp as f64 / (i + 1) as f64));
        last_tp = tp;
    }
    let mut envelope = 0.0f64;
    let mut sum = 0.0;
    for &(gain, p) in levels.iter().rev() {
        envelope = envelope.max(p);
        sum += gain as f64 * envelope;
    }
    Ok(sum / set.num_gt as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub f1: f64,
    pub pr: f64,
    pub rr: f64,
    pub far: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub pr: f64,
    pub rr: f64,
    pub f1: f64,
    /// False alarms among detections, `FP / (TP + FP)`.
    pub far: f64,
}

impl PointMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let pr = ratio(tp, tp + fp);
        let rr = ratio(tp, tp + fn_);
        let f1 = if pr + rr > 0.0 { 2.0 * pr * rr / (pr + rr) } else { 0.0 };
        Self {
            tp,
            fp,
            fn_,
            pr,
            rr,
            f1,
            far: ratio(fp, tp + fp),
        }
    }
}

pub fn threshold_metrics(set: &EvalSet, threshold: f64) -> Result<PointMetrics> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let (tp, fp) = set.counts_at(threshold);
    Ok(PointMetrics::from_counts(tp, fp, set.num_gt - tp))
}

/// Sweeps every distinct score and keeps the best F1 (ties go to the higher
/// threshold). With no detections the report is all zeros at threshold 1.
pub fn best_f1_operating_point(set: &EvalSet) -> Result<MetricsReport> {
    let ap = average_precision(set)?;
    let mut best = (1.0, PointMetrics::from_counts(0, 0, set.num_gt));
    let mut prev: Option<f64> = None;
    for (i, &s) in set.scores.iter().enumerate() {
        if prev == Some(s) {
            continue;
        }
        prev = Some(s);
        let n = i + set.scores[i..].iter().take_while(|&&x| x == s).count();
        let tp = set.is_tp[..n].iter().filter(|&&t| t).count();
        let m = PointMetrics::from_counts(tp, n - tp, set.num_gt - tp);
        if m.f1 > best.1.f1 {
            best = (s, m);
        }
    }
    let (threshold, m) = best;
    Ok(MetricsReport {
        ap,
        f1: m.f1,
        pr: m.pr,
        rr: m.rr,
        far: m.far,
        threshold,
    })
}

/// `(threshold, precision, recall)` at every distinct score, highest first.
pub fn pr_curve(set: &EvalSet) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    let mut tp = 0;
    for (i, (&s, &t)) in set.scores.iter().zip(&set.is_tp).enumerate() {
        tp += t as usize;
        if set.scores.get(i + 1) == Some(&s) {
            continue;
        }
        let m = PointMetrics::from_counts(tp, i + 1 - tp, set.num_gt.saturating_sub(tp));
        out.push((s, m.pr, m.rr));
    }
    out
}
