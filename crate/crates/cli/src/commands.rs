use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use predalign::detector::DetectorModel;
use predalign::synthdomains::{generate_dataset, load_dataset, save_dataset, Dataset, DatasetRole};
use predalign::trainloop::{
    adapt, evaluate_set, load_checkpoint, pretrain_source, report, run_experiment, save_checkpoint, AdaptData,
    ExperimentData, Mode,
};

use crate::config::{ExperimentConfigFile, Overrides};
use crate::report::{metrics_csv, pr_curve_csv, pr_curve_svg};
use crate::{Cli, CliError, Command};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PRETRAINED_FILE: &str = "pretrained.paln";
pub const EVAL_FILE: &str = "eval_metrics.json";
pub const PR_CSV_FILE: &str = "pr_curve.csv";
pub const PR_SVG_FILE: &str = "pr_curve.svg";
pub const DATA_DIR: &str = "data";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const ROLES: [DatasetRole; 4] = [
    DatasetRole::SourceTrain,
    DatasetRole::TargetTrainUnlabeled,
    DatasetRole::TargetTest,
    DatasetRole::TargetLabels,
];

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mode = match &cli.command {
        Command::Adapt { mode, .. } => *mode,
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        mode,
    };
    let cfg = ExperimentConfigFile::load(cli.common.config.as_deref(), &overrides)?;
    cfg.write_resolved()?;
    match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Pretrain { checkpoint } => pretrain(&cfg, checkpoint.as_deref()),
        Command::Adapt { checkpoint, .. } => adapt_cmd(&cfg, checkpoint.as_deref()),
        Command::Eval { checkpoint } => eval(&cfg, checkpoint),
        Command::Experiment => experiment(&cfg),
        Command::Plot { checkpoint } => plot(&cfg, checkpoint),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Loads `role` from `data.dir` when set, otherwise generates it.
pub fn dataset(cfg: &ExperimentConfigFile, role: DatasetRole) -> Result<Dataset, CliError> {
    let side = cfg.train.detector.image_side;
    let Some(dir) = &cfg.data.dir else {
        return Ok(generate_dataset(&cfg.data.spec(role), &cfg.data.params(role), side)?);
    };
    let d = dir.join(role.dir_name());
    if !d.is_dir() {
        return Err(predalign::Error::MissingFile(d).into());
    }
    let scenes = load_dataset(&d)?;
    if scenes.is_empty() {
        return Err(CliError::Failed(format!("{}: dataset has no scenes", d.display())));
    }
    if let Some(s) = scenes.iter().find(|s| s.side != side) {
        return Err(CliError::Failed(format!(
            "{}: scene {} is {}px but the detector expects {side}px",
            d.display(),
            s.id,
            s.side
        )));
    }
    Ok(Dataset { role, scenes })
}

fn uses_labels(modes: &[Mode]) -> bool {
    modes.contains(&Mode::Reference)
}

fn load_model(cfg: &ExperimentConfigFile, path: &Path) -> Result<DetectorModel, CliError> {
    let params = load_checkpoint(path)?;
    Ok(DetectorModel::from_params(cfg.train.detector.clone(), params)?)
}

fn gen_data(cfg: &ExperimentConfigFile) -> Result<(), CliError> {
    let root = cfg.output.dir.join(DATA_DIR);
    for role in ROLES {
        if cfg.data.spec(role).count == 0 {
            continue;
        }
        let d = generate_dataset(&cfg.data.spec(role), &cfg.data.params(role), cfg.train.detector.image_side)?;
        let dir = root.join(role.dir_name());
        save_dataset(&d.scenes, &dir, role.is_labeled())?;
        println!("wrote {} scenes to {}", d.len(), dir.display());
    }
    Ok(())
}

fn pretrain(cfg: &ExperimentConfigFile, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let source = dataset(cfg, DatasetRole::SourceTrain)?;
    let outcome = pretrain_source(&cfg.train, &source)?;
    let path = checkpoint.map_or_else(|| cfg.output.dir.join(PRETRAINED_FILE), Path::to_path_buf);
    save_checkpoint(&outcome.model.params, &path)?;
    println!("wrote {}", path.display());
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write(&cfg.output.dir.join("pretrain_losses.csv"), csv)
}

fn adapt_cmd(cfg: &ExperimentConfigFile, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mode = cfg.train.mode;
    let source = dataset(cfg, DatasetRole::SourceTrain)?;
    let target = dataset(cfg, DatasetRole::TargetTrainUnlabeled)?;
    let labels = if uses_labels(&[mode]) {
        Some(dataset(cfg, DatasetRole::TargetLabels)?)
    } else {
        None
    };
    let pretrained = match checkpoint {
        Some(p) => load_model(cfg, p)?,
        None => pretrain_source(&cfg.train, &source)?.model,
    };
    let outcome = adapt(
        &pretrained,
        &cfg.train.with_mode(mode),
        AdaptData {
            source: &source,
            target: &target,
            target_labels: labels.as_ref(),
        },
    )?;
    let path = cfg.output.dir.join(format!("{}.paln", mode.name()));
    save_checkpoint(&outcome.model.params, &path)?;
    println!("wrote {}", path.display());
    let mut csv = String::from("iteration,l_pred1,l_pred2\n");
    // Reference mode records only the supervised loss.
    for (i, b) in outcome.l_pred2.iter().enumerate() {
        let a = outcome.l_pred1.get(i).copied().unwrap_or(0.0);
        let _ = writeln!(csv, "{i},{a},{b}");
    }
    write(&cfg.output.dir.join(format!("adapt_{}_losses.csv", mode.name())), csv)
}

fn eval(cfg: &ExperimentConfigFile, checkpoint: &Path) -> Result<(), CliError> {
    let model = load_model(cfg, checkpoint)?;
    let test = dataset(cfg, DatasetRole::TargetTest)?;
    let set = evaluate_set(&model, &test, &cfg.eval)?;
    let m = report(&set, cfg.eval.operating_point)?;
    println!(
        "AP {:.4} F1 {:.4} PR {:.4} RR {:.4} FAR {:.4} at threshold {:.4}",
        m.ap, m.f1, m.pr, m.rr, m.far, m.threshold
    );
    let mut json = serde_json::to_string_pretty(&m).map_err(|e| CliError::Failed(e.to_string()))?;
    json.push('\n');
    write(&cfg.output.dir.join(EVAL_FILE), json)
}

fn experiment(cfg: &ExperimentConfigFile) -> Result<(), CliError> {
    let modes = cfg.train.modes.clone();
    let source = dataset(cfg, DatasetRole::SourceTrain)?;
    let target = dataset(cfg, DatasetRole::TargetTrainUnlabeled)?;
    let test = dataset(cfg, DatasetRole::TargetTest)?;
    let labels = if uses_labels(&modes) {
        Some(dataset(cfg, DatasetRole::TargetLabels)?)
    } else {
        None
    };
    let ckpt_dir: Option<PathBuf> = cfg.output.save_checkpoints.then(|| cfg.output.dir.join(CHECKPOINT_DIR));
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let outcome = run_experiment(
        &cfg.train,
        &modes,
        cfg.train.repetitions,
        ExperimentData {
            source: &source,
            target: &target,
            target_labels: labels.as_ref(),
            test: &test,
        },
        &cfg.eval,
        ckpt_dir.as_deref(),
    )?;
    for s in &outcome.stats.modes {
        println!(
            "{:<14} AP {:.4} ± {:.4}  F1 {:.4}  PR {:.4}  RR {:.4}  FAR {:.4}",
            s.mode.name(),
            s.ap.avr,
            s.ap.stderr,
            s.f1.avr,
            s.pr.avr,
            s.rr.avr,
            s.far.avr
        );
    }
    write(
        &cfg.output.dir.join(METRICS_FILE),
        metrics_csv(&outcome.runs, &outcome.stats, &modes),
    )
}

fn plot(cfg: &ExperimentConfigFile, checkpoint: &Path) -> Result<(), CliError> {
    let model = load_model(cfg, checkpoint)?;
    let test = dataset(cfg, DatasetRole::TargetTest)?;
    let set = evaluate_set(&model, &test, &cfg.eval)?;
    if set.scores.is_empty() {
        return Err(CliError::Failed("no detections above the confidence threshold; nothing to plot".into()));
    }
    let ap = predalign::evalmetrics::average_precision(&set)?;
    write(&cfg.output.dir.join(PR_CSV_FILE), pr_curve_csv(&set))?;
    write(
        &cfg.output.dir.join(PR_SVG_FILE),
        pr_curve_svg(&set, &format!("{} (AP {ap:.4})", checkpoint.display())),
    )
}
