use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{adapt, AdaptData};
use super::checkpoint::save_checkpoint;
use super::config::{Mode, TrainConfig};
use super::pretrain::pretrain_source;
use crate::detector::{infer_batch, DetectorModel, GroundTruth, NMS_IOU};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    aggregate_stats, average_precision, best_f1_operating_point, threshold_metrics, EvalSet, MetricsReport, EVAL_IOU,
};
use crate::synthdomains::Dataset;

/// Score threshold at which point metrics are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingPoint {
    BestF1,
    Fixed(f64),
}

/// Detection thresholds used when scoring a model on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub iou_threshold: f64,
    pub operating_point: OperatingPoint,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.01,
            nms_threshold: NMS_IOU,
            iou_threshold: EVAL_IOU,
            operating_point: OperatingPoint::BestF1,
        }
    }
}

impl EvalConfig {
    /// Error messages start with the offending field name.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name}: must be in [0, 1], got {v}")))
            }
        };
        unit("conf_threshold", self.conf_threshold)?;
        unit("nms_threshold", self.nms_threshold)?;
        unit("iou_threshold", self.iou_threshold)?;
        if let OperatingPoint::Fixed(t) = self.operating_point {
            unit("operating_point.fixed", t)?;
        }
        Ok(())
    }
}

/// Runs the detector over `test` and pools matches across scenes.
pub fn evaluate_set(model: &DetectorModel, test: &Dataset, eval: &EvalConfig) -> Result<EvalSet> {
    let mut dets = Vec::with_capacity(test.len());
    for chunk in test.scenes.chunks(16) {
        let images: Vec<&[f64]> = chunk.iter().map(|s| s.image.as_slice()).collect();
        dets.extend(infer_batch(model, &images, eval.conf_threshold, eval.nms_threshold)?);
    }
    let gts: Vec<Vec<GroundTruth>> = (0..test.len()).map(|i| test.audit_labels(i).to_vec()).collect();
    EvalSet::from_images(&dets, &gts, eval.iou_threshold)
}

/// Scores `model` on `test` at the configured operating point.
pub fn evaluate(model: &DetectorModel, test: &Dataset, eval: &EvalConfig) -> Result<MetricsReport> {
    report(&evaluate_set(model, test, eval)?, eval.operating_point)
}

pub fn report(set: &EvalSet, point: OperatingPoint) -> Result<MetricsReport> {
    match point {
        OperatingPoint::BestF1 => best_f1_operating_point(set),
        OperatingPoint::Fixed(threshold) => {
            let m = threshold_metrics(set, threshold)?;
            Ok(MetricsReport {
                ap: average_precision(set)?,
                f1: m.f1,
                pr: m.pr,
                rr: m.rr,
                far: m.far,
                threshold,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub checkpoint: Option<PathBuf>,
}

/// Mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub avr: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeStats {
    pub mode: Mode,
    pub runs: usize,
    pub ap: Stat,
    pub f1: Stat,
    pub pr: Stat,
    pub rr: Stat,
    pub far: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentStats {
    pub modes: Vec<ModeStats>,
}

impl ExperimentStats {
    pub fn get(&self, mode: Mode) -> Option<&ModeStats> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub fn summarize(runs: &[RunResult], modes: &[Mode]) -> Result<ExperimentStats> {
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let rs: Vec<&MetricsReport> = runs.iter().filter(|r| r.mode == mode).map(|r| &r.metrics).collect();
        let stat = |f: fn(&MetricsReport) -> f64| -> Result<Stat> {
            let (avr, stderr) = aggregate_stats(&rs.iter().map(|m| f(m)).collect::<Vec<_>>())?;
            Ok(Stat { avr, stderr })
        };
        out.push(ModeStats {
            mode,
            runs: rs.len(),
            ap: stat(|m| m.ap)?,
            f1: stat(|m| m.f1)?,
            pr: stat(|m| m.pr)?,
            rr: stat(|m| m.rr)?,
            far: stat(|m| m.far)?,
        });
    }
    Ok(ExperimentStats { modes: out })
}

/// Datasets shared read-only by every run.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentData<'a> {
    pub source: &'a Dataset,
    pub target: &'a Dataset,
    pub target_labels: Option<&'a Dataset>,
    pub test: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    /// Ordered by seed, then by the order of `modes`.
    pub runs: Vec<RunResult>,
    pub stats: ExperimentStats,
}

/// Repeats the study `repetitions` times with seeds `cfg.seed + i`. Each
/// repetition pretrains once and adapts that model under every mode, so modes
/// within a repetition share initialization and pretraining. Repetitions run in
/// parallel; results do not depend on scheduling.
pub fn run_experiment(
    cfg: &TrainConfig,
    modes: &[Mode],
    repetitions: usize,
    data: ExperimentData<'_>,
    eval: &EvalConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    if repetitions == 0 || modes.is_empty() {
        return Err(Error::InvalidArgument("an experiment needs at least one repetition and one mode".into()));
    }
    cfg.validate()?;
    eval.validate()?;
    let per_seed: Vec<Result<Vec<RunResult>>> = (0..repetitions as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i);
            let base = TrainConfig { seed, ..cfg.clone() };
            let pretrained = pretrain_source(&base, data.source)?.model;
            let mut runs = Vec::with_capacity(modes.len());
            for &mode in modes {
                let mcfg = base.with_mode(mode);
                let adapted = adapt(
                    &pretrained,
                    &mcfg,
                    AdaptData {
                        source: data.source,
                        target: data.target,
                        target_labels: data.target_labels,
                    },
                )?;
                let metrics = evaluate(&adapted.model, data.test, eval)?;
                let checkpoint = match checkpoint_dir {
                    Some(dir) => {
                        let p = dir.join(format!("{}_seed{seed}.paln", mode.name()));
                        save_checkpoint(&adapted.model.params, &p)?;
                        Some(p)
                    }
                    None => None,
                };
                runs.push(RunResult {
                    mode,
                    seed,
                    metrics,
                    checkpoint,
                });
            }
            Ok(runs)
        })
        .collect();
    let mut runs = Vec::new();
    for r in per_seed {
        runs.extend(r?);
    }
    let stats = summarize(&runs, modes)?;
    Ok(ExperimentOutcome { runs, stats })
}
