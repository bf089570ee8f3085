//! Adversarial domain losses. Source is labeled 1, target 0. Every log term
//! goes through the clamped binary cross-entropy primitive.

use super::discriminator::Discriminator;
use crate::error::{shape_err, Result};
use crate::numkernel::{Tape, Var};

/// `−mean_src[w·log D] − mean_tgt[w·log(1 − D)]` from discriminator outputs.
pub fn discriminator_loss(
    tape: &mut Tape,
    src_probs: Var,
    tgt_probs: Var,
    src_weights: Option<&[f64]>,
    tgt_weights: Option<&[f64]>,
) -> Result<Var> {
    let ns = tape.value(src_probs).len();
    let nt = tape.value(tgt_probs).len();
    let s = tape.bce(src_probs, &vec![1.0; ns], src_weights)?;
    let s = tape.scale(s, 1.0 / ns as f64)?;
    let t = tape.bce(tgt_probs, &vec![0.0; nt], tgt_weights)?;
    let t = tape.scale(t, 1.0 / nt as f64)?;
    tape.add(s, t)
}

/// Inverted-label generator loss `−mean_tgt[w·log D]`.
pub fn generator_loss(tape: &mut Tape, tgt_probs: Var, tgt_weights: Option<&[f64]>) -> Result<Var> {
    let nt = tape.value(tgt_probs).len();
    let t = tape.bce(tgt_probs, &vec![1.0; nt], tgt_weights)?;
    tape.scale(t, 1.0 / nt as f64)
}

/// Both sides of one adversarial game with gradient routing already applied:
/// `dis` reaches only the discriminator bindings in `disc_vars`; `gen` reaches
/// only whatever produced the target input (the discriminator is frozen there).
#[derive(Debug, Clone)]
pub struct AdversarialLosses {
    pub dis: Var,
    pub gen: Var,
    pub disc_vars: Vec<Var>,
}

/// Per-prediction weights for the prediction game; `None` means unweighted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionWeights {
    pub dis_source: Option<Vec<f64>>,
    pub dis_target: Option<Vec<f64>>,
    pub gen_target: Option<Vec<f64>>,
}

fn routed(
    tape: &mut Tape,
    src: Var,
    tgt: Var,
    disc: &Discriminator,
    weights: &PredictionWeights,
) -> Result<AdversarialLosses> {
    let src_d = tape.detach(src);
    let tgt_d = tape.detach(tgt);
    let disc_vars = disc.params.bind(tape, true);
    let ps = disc.forward(tape, &disc_vars, src_d)?;
    let pt = disc.forward(tape, &disc_vars, tgt_d)?;
    let dis = discriminator_loss(tape, ps, pt, weights.dis_source.as_deref(), weights.dis_target.as_deref())?;

    let frozen = disc.params.bind(tape, false);
    let pt_live = disc.forward(tape, &frozen, tgt)?;
    let gen = generator_loss(tape, pt_live, weights.gen_target.as_deref())?;
    Ok(AdversarialLosses { dis, gen, disc_vars })
}

/// Feature game on `[N, C, Hf, Wf]` maps: returns `(L_feat_dis, L_feat_ext)`.
pub fn feature_alignment_losses(
    tape: &mut Tape,
    src_map: Var,
    tgt_map: Var,
    d_f: &Discriminator,
) -> Result<AdversarialLosses> {
    routed(tape, src_map, tgt_map, d_f, &PredictionWeights::default())
}

/// Prediction game on `[M, 4 + C]` vectors: returns `(L_pred_dis, L_pred_det)`.
pub fn prediction_alignment_losses(
    tape: &mut Tape,
    src_vecs: Var,
    tgt_vecs: Var,
    d_p: &Discriminator,
) -> Result<AdversarialLosses> {
    routed(tape, src_vecs, tgt_vecs, d_p, &PredictionWeights::default())
}

/// Prediction game with each log term scaled by its per-prediction weight
/// before averaging. Weights are plain constants: nothing flows back through them.
pub fn weighted_alignment_losses(
    tape: &mut Tape,
    src_vecs: Var,
    tgt_vecs: Var,
    d_p: &Discriminator,
    weights: &PredictionWeights,
) -> Result<AdversarialLosses> {
    let (ns, nt) = (tape.shape(src_vecs)[0], tape.shape(tgt_vecs)[0]);
    for (w, n, side) in [
        (&weights.dis_source, ns, "source"),
        (&weights.dis_target, nt, "target"),
        (&weights.gen_target, nt, "target"),
    ] {
        if let Some(w) = w {
            if w.len() != n {
                return Err(shape_err(
                    "weighted_alignment_losses",
                    format!("{} weights for {n} {side} predictions", w.len()),
                ));
            }
        }
    }
    routed(tape, src_vecs, tgt_vecs, d_p, weights)
}
