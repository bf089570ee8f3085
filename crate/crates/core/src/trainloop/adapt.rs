//! Alternating adaptation: one discriminator step, then one detector step, per iteration.

use rand::Rng;

use super::config::{Mode, TrainConfig};
use super::pretrain::{at_iteration, labeled, run_rng, supervised_step};
use super::sampler::{BatchSampler, Sample};
use crate::alignkit::{
    build_prediction_vectors, class_weight_normalization, discriminator_loss, generator_loss, Discriminator,
};
use crate::detector::{ssd_loss, stack_images, DetectorModel, DetectorOutputs, GroundTruth, HEAD_PARAM_COUNT};
use crate::error::{Error, Result};
use crate::numkernel::{OptimizerState, ParamSet, Tape, Var};
use crate::synthdomains::Dataset;

/// Feature and prediction discriminators with their optimizer state.
#[derive(Debug, Clone)]
pub struct Discriminators {
    pub feature: Discriminator,
    pub prediction: Discriminator,
    pub feature_opt: OptimizerState,
    pub prediction_opt: OptimizerState,
}

impl Discriminators {
    pub fn new<R: Rng + ?Sized>(model: &DetectorModel, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let feature = Discriminator::feature(model.config.feature_channels(), rng);
        let prediction = Discriminator::prediction(4 + model.config.num_classes, rng);
        Ok(Self {
            feature_opt: OptimizerState::new(&feature.params, cfg.lr_discriminator, cfg.momentum)?,
            prediction_opt: OptimizerState::new(&prediction.params, cfg.lr_discriminator, cfg.momentum)?,
            feature,
            prediction,
        })
    }

    pub fn checksum(&self) -> (u64, u64) {
        (self.feature.params.checksum(), self.prediction.params.checksum())
    }
}

/// The detector side of adaptation: model, its optimizer and, when heads are
/// separate, the target-domain head with its own optimizer.
#[derive(Debug, Clone)]
pub struct DetectorState {
    pub model: DetectorModel,
    pub opt: OptimizerState,
    pub target_head: Option<(ParamSet, OptimizerState)>,
}

impl DetectorState {
    pub fn new(model: DetectorModel, cfg: &TrainConfig) -> Result<Self> {
        let opt = OptimizerState::new(&model.params, cfg.da_lr_model, cfg.momentum)?;
        let target_head = if cfg.separate_target_head {
            let mut head = ParamSet::default();
            let n = model.params.len();
            for i in n - HEAD_PARAM_COUNT..n {
                head.push(model.params.names()[i].clone(), model.params.tensors()[i].clone());
            }
            let hopt = OptimizerState::new(&head, cfg.da_lr_model, cfg.momentum)?;
            Some((head, hopt))
        } else {
            None
        };
        Ok(Self { model, opt, target_head })
    }

    /// Checksum over everything the detector step may change.
    pub fn checksum(&self) -> (u64, u64) {
        (
            self.model.params.checksum(),
            self.target_head.as_ref().map_or(0, |(h, _)| h.checksum()),
        )
    }

    /// The model to deploy on the target domain.
    pub fn into_target_model(self) -> DetectorModel {
        let mut model = self.model;
        if let Some((head, _)) = self.target_head {
            let n = model.params.len();
            for (dst, src) in model.params.tensors_mut()[n - HEAD_PARAM_COUNT..].iter_mut().zip(head.tensors()) {
                *dst = src.clone();
            }
        }
        model
    }
}

/// Detector forward pass over one source and one target batch, recorded with
/// trainable bindings so the detector step can reuse it.
pub struct DaForward {
    tape: Tape,
    vars: Vec<Var>,
    head_vars: Vec<Var>,
    src: DetectorOutputs,
    tgt: DetectorOutputs,
    src_gts: Vec<Vec<GroundTruth>>,
}

impl DaForward {
    pub fn new(state: &DetectorState, src: &[Sample], tgt: &[Sample]) -> Result<Self> {
        let model = &state.model;
        let (src_images, src_gts) = labeled(src)?;
        let src_gts = src_gts.into_iter().map(<[GroundTruth]>::to_vec).collect();
        let tgt_images: Vec<&[f64]> = tgt.iter().map(|s| s.image.as_slice()).collect();
        let cfg = &model.config;
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape, true);
        let xs = stack_images(&mut tape, &src_images, cfg.in_channels, cfg.image_side)?;
        let src = model.forward(&mut tape, &vars, xs)?;
        let (head_vars, tgt_vars) = match &state.target_head {
            Some((head, _)) => {
                let hv = head.bind(&mut tape, true);
                let mut tv = vars[..vars.len() - HEAD_PARAM_COUNT].to_vec();
                tv.extend_from_slice(&hv);
                (hv, tv)
            }
            None => (Vec::new(), vars.clone()),
        };
        let xt = stack_images(&mut tape, &tgt_images, cfg.in_channels, cfg.image_side)?;
        let tgt = model.forward(&mut tape, &tgt_vars, xt)?;
        Ok(Self {
            tape,
            vars,
            head_vars,
            src,
            tgt,
            src_gts,
        })
    }

    fn copy(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        tape.constant(self.tape.shape(v).to_vec(), self.tape.value(v).to_vec())
    }
}

/// Class weights from the confidence block of `[M, 4 + C]` prediction vectors.
/// Raw logits give the same argmax as their softmax, so either block works.
fn vector_weights(tape: &Tape, vecs: Var, a: &[f64]) -> Result<Vec<f64>> {
    let width = tape.shape(vecs)[1];
    let c = width - 4;
    let conf: Vec<f64> = tape.value(vecs).chunks(width).flat_map(|r| r[4..].iter().copied()).collect();
    Ok(class_weight_normalization(&conf, a, c)?.per_prediction)
}

/// One step of both discriminators on detached detector outputs; returns `L_pred1`.
/// Only the discriminators of the mode's active games move.
pub fn da_step_discriminators(fwd: &DaForward, discs: &mut Discriminators, cfg: &TrainConfig) -> Result<f64> {
    let mode = cfg.mode;
    if !mode.feature_alignment() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let fvars = discs.feature.params.bind(&mut tape, true);
    let fs = fwd.copy(&mut tape, fwd.src.features)?;
    let ft = fwd.copy(&mut tape, fwd.tgt.features)?;
    let ps = discs.feature.forward(&mut tape, &fvars, fs)?;
    let pt = discs.feature.forward(&mut tape, &fvars, ft)?;
    let mut total = discriminator_loss(&mut tape, ps, pt, None, None)?;

    let mut pvars = Vec::new();
    if mode.prediction_alignment() {
        pvars = discs.prediction.params.bind(&mut tape, true);
        let (os, ls) = (fwd.copy(&mut tape, fwd.src.offsets)?, fwd.copy(&mut tape, fwd.src.logits)?);
        let (ot, lt) = (fwd.copy(&mut tape, fwd.tgt.offsets)?, fwd.copy(&mut tape, fwd.tgt.logits)?);
        let vs = build_prediction_vectors(&mut tape, os, ls, cfg.prediction_raw_logits)?;
        let vt = build_prediction_vectors(&mut tape, ot, lt, cfg.prediction_raw_logits)?;
        let (ws, wt) = if mode.weights_discriminator() {
            let a = cfg.class_scales();
            (Some(vector_weights(&tape, vs, &a)?), Some(vector_weights(&tape, vt, &a)?))
        } else {
            (None, None)
        };
        let ps = discs.prediction.forward(&mut tape, &pvars, vs)?;
        let pt = discs.prediction.forward(&mut tape, &pvars, vt)?;
        let l = discriminator_loss(&mut tape, ps, pt, ws.as_deref(), wt.as_deref())?;
        total = tape.add(total, l)?;
    }
    let value = tape.scalar(total);
    let grads = tape.backward(total)?;
    discs
        .feature_opt
        .step(&mut discs.feature.params, &ParamSet::collect_grads(&grads, &fvars))?;
    if !pvars.is_empty() {
        discs
            .prediction_opt
            .step(&mut discs.prediction.params, &ParamSet::collect_grads(&grads, &pvars))?;
    }
    Ok(value)
}

/// One detector step against `L_source + L_feat_ext + α·L_pred_det` with the
/// discriminators frozen; returns `L_pred2`.
pub fn da_step_model(fwd: DaForward, state: &mut DetectorState, discs: &Discriminators, cfg: &TrainConfig) -> Result<f64> {
    let mode = cfg.mode;
    let DaForward {
        mut tape,
        vars,
        head_vars,
        src,
        tgt,
        src_gts,
    } = fwd;
    let model = &mut state.model;
    let gts: Vec<&[GroundTruth]> = src_gts.iter().map(Vec::as_slice).collect();
    let mut total = ssd_loss(&mut tape, src.offsets, src.logits, &gts, &model.defaults)?;

    if mode.feature_alignment() {
        let fvars = discs.feature.params.bind(&mut tape, false);
        let pt = discs.feature.forward(&mut tape, &fvars, tgt.features)?;
        let l = generator_loss(&mut tape, pt, None)?;
        total = tape.add(total, l)?;
    }
    let alpha = cfg.alpha();
    if mode.prediction_alignment() && alpha != 0.0 {
        let vt = build_prediction_vectors(&mut tape, tgt.offsets, tgt.logits, cfg.prediction_raw_logits)?;
        let w = if mode.weights_detector() {
            Some(vector_weights(&tape, vt, &cfg.class_scales())?)
        } else {
            None
        };
        let pvars = discs.prediction.params.bind(&mut tape, false);
        let pt = discs.prediction.forward(&mut tape, &pvars, vt)?;
        let l = generator_loss(&mut tape, pt, w.as_deref())?;
        let l = tape.scale(l, alpha)?;
        total = tape.add(total, l)?;
    }
    let value = tape.scalar(total);
    let grads = tape.backward(total)?;
    state.opt.step(&mut model.params, &ParamSet::collect_grads(&grads, &vars))?;
    if let Some((head, hopt)) = &mut state.target_head {
        hopt.step(head, &ParamSet::collect_grads(&grads, &head_vars))?;
    }
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: DetectorModel,
    pub discriminators: Option<Discriminators>,
    /// Discriminator objective per iteration (empty for non-adversarial modes).
    pub l_pred1: Vec<f64>,
    /// Detector objective per iteration.
    pub l_pred2: Vec<f64>,
    /// Number of freeze checks that ran and passed.
    pub purity_checks: usize,
}

/// Datasets visible to adaptation.
#[derive(Debug, Clone, Copy)]
pub struct AdaptData<'a> {
    pub source: &'a Dataset,
    pub target: &'a Dataset,
    /// Labeled target scenes, used only by the reference mode.
    pub target_labels: Option<&'a Dataset>,
}

fn purity_violation(iteration: usize, what: &str) -> Error {
    Error::InvalidArgument(format!("iteration {iteration}: {what} changed during the other party's step"))
}

/// Fine-tunes a pretrained detector according to `cfg.mode`. Discriminators and
/// optimizer state start fresh.
pub fn adapt(pretrained: &DetectorModel, cfg: &TrainConfig, data: AdaptData<'_>) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let mode = cfg.mode;
    let mut out = AdaptOutcome {
        model: pretrained.clone(),
        discriminators: None,
        l_pred1: Vec::new(),
        l_pred2: Vec::new(),
        purity_checks: 0,
    };
    if mode == Mode::WithoutDa {
        return Ok(out);
    }
    let mut rng = run_rng(cfg.seed, 1);
    let mut src_sampler = BatchSampler::new(data.source.len(), cfg.rotation_augment);
    let stage = format!("adapt/{}", mode.name());

    if mode == Mode::Reference {
        let labels = data
            .target_labels
            .filter(|d| !d.is_empty() && d.role.is_labeled())
            .ok_or_else(|| Error::InvalidArgument("reference mode needs labeled target scenes".into()))?;
        let mut model = pretrained.clone();
        let mut opt = OptimizerState::new(&model.params, cfg.da_lr_model, cfg.momentum)?;
        let mut tgt_sampler = BatchSampler::new(labels.len(), cfg.rotation_augment);
        for it in 0..cfg.da_iterations {
            let mut batch = src_sampler.next_batch(data.source, cfg.batch_source, &mut rng)?;
            batch.extend(tgt_sampler.next_batch(labels, cfg.batch_target, &mut rng)?);
            out.l_pred2
                .push(at_iteration(supervised_step(&mut model, &mut opt, &batch), it, &stage)?);
        }
        out.model = model;
        return Ok(out);
    }

    let mut state = DetectorState::new(pretrained.clone(), cfg)?;
    let mut discs = Discriminators::new(&state.model, cfg, &mut rng)?;
    let mut tgt_sampler = BatchSampler::new(data.target.len(), cfg.rotation_augment);
    for it in 0..cfg.da_iterations {
        let src = src_sampler.next_batch(data.source, cfg.batch_source, &mut rng)?;
        let tgt = tgt_sampler.next_batch(data.target, cfg.batch_target, &mut rng)?;
        let fwd = at_iteration(DaForward::new(&state, &src, &tgt), it, &stage)?;

        let model_sum = cfg.check_purity.then(|| state.checksum());
        let l1 = at_iteration(da_step_discriminators(&fwd, &mut discs, cfg), it, &stage)?;
        if let Some(sum) = model_sum {
            if state.checksum() != sum {
                return Err(purity_violation(it, "detector"));
            }
            out.purity_checks += 1;
        }

        let disc_sum = cfg.check_purity.then(|| discs.checksum());
        let l2 = at_iteration(da_step_model(fwd, &mut state, &discs, cfg), it, &stage)?;
        if let Some(sum) = disc_sum {
            if discs.checksum() != sum {
                return Err(purity_violation(it, "discriminator"));
            }
            out.purity_checks += 1;
        }
        out.l_pred1.push(l1);
        out.l_pred2.push(l2);
    }
    out.model = state.into_target_model();
    out.discriminators = Some(discs);
    Ok(out)
}
