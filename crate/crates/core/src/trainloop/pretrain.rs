use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::sampler::{BatchSampler, Sample};
use crate::detector::{ssd_loss, stack_images, DetectorModel, GroundTruth};
use crate::error::{Error, Result};
use crate::numkernel::{OptimizerState, ParamSet, Tape};
use crate::synthdomains::Dataset;

/// Random stream for model init and pretraining batches; adaptation uses stream 1.
pub(crate) fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Turns a numeric blow-up inside a step into a divergence error naming the iteration.
pub(crate) fn at_iteration<T>(r: Result<T>, iteration: usize, stage: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(op) => Error::Diverged {
            iteration,
            stage: format!("{stage}: {op}"),
        },
        other => other,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: DetectorModel,
    /// `L_source` at every iteration.
    pub losses: Vec<f64>,
}

/// Splits labeled samples into images and label lists.
pub(crate) fn labeled(samples: &[Sample]) -> Result<(Vec<&[f64]>, Vec<&[GroundTruth]>)> {
    let mut images = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        let g = s
            .gts
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("supervised step given an unlabeled sample".into()))?;
        images.push(s.image.as_slice());
        gts.push(g);
    }
    Ok((images, gts))
}

/// One SGD step on the detection loss over `samples`; returns the loss before the step.
pub fn supervised_step(model: &mut DetectorModel, opt: &mut OptimizerState, samples: &[Sample]) -> Result<f64> {
    let (images, gts) = labeled(samples)?;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, true);
    let cfg = &model.config;
    let x = stack_images(&mut tape, &images, cfg.in_channels, cfg.image_side)?;
    let out = model.forward(&mut tape, &vars, x)?;
    let loss = ssd_loss(&mut tape, out.offsets, out.logits, &gts, &model.defaults)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    opt.step(&mut model.params, &ParamSet::collect_grads(&grads, &vars))?;
    Ok(value)
}

/// Detection loss of `model` over a whole labeled dataset, without updating anything.
pub fn dataset_loss(model: &DetectorModel, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.scenes.chunks(16) {
        let images: Vec<&[f64]> = chunk.iter().map(|s| s.image.as_slice()).collect();
        let gts: Vec<&[GroundTruth]> = chunk.iter().map(|s| s.gts.as_slice()).collect();
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape, false);
        let cfg = &model.config;
        let x = stack_images(&mut tape, &images, cfg.in_channels, cfg.image_side)?;
        let out = model.forward(&mut tape, &vars, x)?;
        let loss = ssd_loss(&mut tape, out.offsets, out.logits, &gts, &model.defaults)?;
        total += tape.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains a freshly initialized detector on labeled source scenes.
pub fn pretrain_source(cfg: &TrainConfig, source: &Dataset) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if source.is_empty() || !source.role.is_labeled() {
        return Err(Error::InvalidArgument("pretraining needs a non-empty labeled dataset".into()));
    }
    let mut rng = run_rng(cfg.seed, 0);
    let mut model = DetectorModel::new(cfg.detector.clone(), &mut rng)?;
    let mut opt = OptimizerState::new(&model.params, cfg.lr_model, cfg.momentum)?;
    let mut sampler = BatchSampler::new(source.len(), cfg.rotation_augment);
    let mut losses = Vec::with_capacity(cfg.pretrain_iterations);
    for it in 0..cfg.pretrain_iterations {
        opt.lr = cfg.lr_at(it);
        let batch = sampler.next_batch(source, cfg.batch_source, &mut rng)?;
        let loss = at_iteration(supervised_step(&mut model, &mut opt, &batch), it, "pretrain")?;
        losses.push(loss);
    }
    Ok(PretrainOutcome { model, losses })
}
