use super::boxes::{iou, DefaultBoxSet};
use super::GroundTruth;

/// Default-box IoU threshold for positive assignment.
pub const MATCH_IOU: f64 = 0.5;
/// Negatives kept per positive in hard negative mining.
pub const NEG_POS_RATIO: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// `Some(gt index)` for positive defaults, `None` for background.
    pub matched: Vec<Option<usize>>,
}

impl Assignment {
    pub fn positive_mask(&self) -> Vec<bool> {
        self.matched.iter().map(Option::is_some).collect()
    }

    pub fn num_positive(&self) -> usize {
        self.matched.iter().filter(|m| m.is_some()).count()
    }
}

/// Assigns ground truths to default boxes.
///
/// Every default whose best IoU reaches `threshold` is positive for its best
/// gt. On top of that each gt claims one default unconditionally: pairs are
/// taken greedily by descending IoU (ties by lower gt, then lower default
/// index), so no two gts compete for the same forced default.
pub fn match_gt_to_defaults(gts: &[GroundTruth], defaults: &DefaultBoxSet, threshold: f64) -> Assignment {
    let nd = defaults.len();
    let mut matched = vec![None; nd];
    if gts.is_empty() {
        return Assignment { matched };
    }
    let dboxes: Vec<_> = defaults.boxes.iter().map(|b| b.to_xyxy()).collect();
    let overlaps: Vec<Vec<f64>> = gts.iter().map(|g| dboxes.iter().map(|d| iou(&g.bbox, d)).collect()).collect();

    for d in 0..nd {
        let mut best: Option<(usize, f64)> = None;
        for (g, row) in overlaps.iter().enumerate() {
            if best.is_none_or(|(_, v)| row[d] > v) {
                best = Some((g, row[d]));
            }
        }
        if let Some((g, v)) = best {
            if v >= threshold {
                matched[d] = Some(g);
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..gts.len()).flat_map(|g| (0..nd).map(move |d| (g, d))).collect();
    pairs.sort_by(|a, b| {
        overlaps[b.0][b.1]
            .total_cmp(&overlaps[a.0][a.1])
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut gt_done = vec![false; gts.len()];
    let mut default_claimed = vec![false; nd];
    let mut remaining = gts.len().min(nd);
    for (g, d) in pairs {
        if remaining == 0 {
            break;
        }
        if gt_done[g] || default_claimed[d] {
            continue;
        }
        gt_done[g] = true;
        default_claimed[d] = true;
        matched[d] = Some(g);
        remaining -= 1;
    }
    Assignment { matched }
}

/// Picks the `min(ratio · positives, available)` non-positive boxes with the
/// largest confidence loss; ties go to the lower index.
pub fn hard_negative_mining(conf_losses: &[f64], positive: &[bool], ratio: usize) -> Vec<bool> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let mut candidates: Vec<usize> = (0..conf_losses.len()).filter(|&i| !positive[i]).collect();
    let keep = (ratio * n_pos).min(candidates.len());
    candidates.sort_by(|&a, &b| conf_losses[b].total_cmp(&conf_losses[a]).then(a.cmp(&b)));
    let mut mask = vec![false; conf_losses.len()];
    for &i in &candidates[..keep] {
        mask[i] = true;
    }
    mask
}
