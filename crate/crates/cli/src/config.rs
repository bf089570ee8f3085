use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use predalign::synthdomains::{DatasetRole, DatasetSpec, DomainParams};
use predalign::trainloop::{EvalConfig, Mode, TrainConfig};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

/// Synthetic data settings. `target` is reached from `source` by interpolating
/// `shift` of the way, so `shift = 0` makes the two domains identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DomainParams,
    pub target: DomainParams,
    pub shift: f64,
    pub source_count: usize,
    pub target_count: usize,
    pub target_labels_count: usize,
    pub test_count: usize,
    pub seed: u64,
    /// Read datasets written by `gen-data` from here instead of generating them.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DomainParams::source_default(),
            target: DomainParams::target_default(),
            shift: 1.0,
            source_count: 512,
            target_count: 256,
            target_labels_count: 64,
            test_count: 256,
            seed: 0,
            dir: None,
        }
    }
}

impl DataConfig {
    pub fn target_params(&self) -> DomainParams {
        self.source.interpolate(&self.target, self.shift)
    }

    pub fn params(&self, role: DatasetRole) -> DomainParams {
        match role {
            DatasetRole::SourceTrain => self.source.clone(),
            _ => self.target_params(),
        }
    }

    /// Roles draw from disjoint seed ranges.
    pub fn spec(&self, role: DatasetRole) -> DatasetSpec {
        let (slot, count) = match role {
            DatasetRole::SourceTrain => (0u64, self.source_count),
            DatasetRole::TargetTrainUnlabeled => (1, self.target_count),
            DatasetRole::TargetTest => (2, self.test_count),
            DatasetRole::TargetLabels => (3, self.target_labels_count),
        };
        DatasetSpec {
            role,
            count,
            seed: self.seed.wrapping_add(slot << 20),
        }
    }

    fn validate(&self, needs_labels: bool) -> Result<(), String> {
        self.source.validate().map_err(|e| prefixed("data.source", e))?;
        self.target.validate().map_err(|e| prefixed("data.target", e))?;
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(format!("data.shift: must be in [0, 1], got {}", self.shift));
        }
        self.target_params()
            .validate()
            .map_err(|e| prefixed("data.target", e))?;
        for (name, n) in [
            ("source_count", self.source_count),
            ("target_count", self.target_count),
            ("test_count", self.test_count),
        ] {
            if n == 0 || n >= 1 << 20 {
                return Err(format!("data.{name}: must be in 1..{}", 1 << 20));
            }
        }
        if self.target_labels_count >= 1 << 20 || (needs_labels && self.target_labels_count == 0) {
            return Err("data.target_labels_count: must be positive when the reference mode is used".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write one checkpoint per experiment run.
    pub save_checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            save_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
}

fn prefixed(prefix: &str, e: predalign::Error) -> String {
    match e {
        predalign::Error::InvalidArgument(msg) => format!("{prefix}.{msg}"),
        other => format!("{prefix}: {other}"),
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Overlays `user` onto `base`. Keys absent from a non-empty default object are
/// rejected; empty default objects (maps) accept any key.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<(), String> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            let free = b.is_empty();
            for (k, v) in u {
                let p = join(path, &k);
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &p)?,
                    None if free => {
                        b.insert(k, v);
                    }
                    None => return Err(format!("{p}: unknown key")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl ExperimentConfigFile {
    /// Fills missing keys from the defaults, applies `overrides` and validates.
    pub fn from_value(user: Value, overrides: &Overrides) -> Result<Self, CliError> {
        let user = match user {
            Value::Object(m) => Value::Object(m),
            other => {
                return Err(CliError::Config(format!(
                    "config: expected a JSON object, got {}",
                    kind(&other)
                )))
            }
        };
        let mut merged =
            serde_json::to_value(Self::default()).map_err(|e| CliError::Config(format!("config: {e}")))?;
        merge(&mut merged, user, "").map_err(CliError::Config)?;
        let mut cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        if let Some(seed) = overrides.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.output.dir = out.clone();
        }
        if let Some(mode) = overrides.mode {
            cfg.train.mode = mode;
        }
        cfg.validate().map_err(CliError::Config)?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config: invalid JSON at line {} column {}: {e}", e.line(), e.column())))?;
        Self::from_value(v, overrides)
    }

    /// Reads `path`, or starts from the defaults when no file is given.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", p.display())))?;
                Self::from_json(&text, overrides)
            }
            None => Self::from_value(Value::Object(Map::new()), overrides),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let needs_labels = self.train.mode == Mode::Reference || self.train.modes.contains(&Mode::Reference);
        self.data.validate(needs_labels)?;
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.eval.validate().map_err(|e| prefixed("eval", e))?;
        if self.output.dir.as_os_str().is_empty() {
            return Err("output.dir: must not be empty".into());
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Writes the resolved configuration to `<output.dir>/resolved_config.json`.
    pub fn write_resolved(&self) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.output.dir).map_err(|e| CliError::io(&self.output.dir, e))?;
        let path = self.output.dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_pretty_json()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<ExperimentConfigFile, String> {
        ExperimentConfigFile::from_json(text, &Overrides::default()).map_err(|e| e.to_string())
    }

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(load("{}").unwrap(), ExperimentConfigFile::default());
    }

    #[test]
    fn errors_name_the_key_path() {
        assert!(load(r#"{"train": {"alpha": -1}}"#).unwrap_err().contains("train.alpha"));
        assert!(load(r#"{"train": {"alpah": 1}}"#).unwrap_err().contains("train.alpah"));
        assert!(load(r#"{"data": {"source": {"noise_sigma": "x"}}}"#)
            .unwrap_err()
            .contains("data.source.noise_sigma"));
        assert!(load(r#"{"data": {"shift": 2}}"#).unwrap_err().contains("data.shift"));
        assert!(load(r#"{"eval": {"operating_point": {"fixed": 3}}}"#)
            .unwrap_err()
            .contains("eval.operating_point"));
        assert!(load(r#"{"train": {"mode_overrides": {"norm_p": {"alpha": -2}}}}"#)
            .unwrap_err()
            .contains("train.mode_overrides.norm_p.alpha"));
        assert!(load(r#"{"train": {"mode_overrides": {"bogus": {}}}}"#)
            .unwrap_err()
            .contains("train.mode_overrides"));
        assert!(load("[1]").unwrap_err().contains("config"));
    }

    #[test]
    fn partial_domain_params_keep_their_own_defaults() {
        let cfg = load(r#"{"data": {"target": {"noise_sigma": 0.1}}}"#).unwrap();
        let mut want = DomainParams::target_default();
        want.noise_sigma = 0.1;
        assert_eq!(cfg.data.target, want);
        assert_eq!(cfg.data.source, DomainParams::source_default());
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(7),
            out: Some(PathBuf::from("elsewhere")),
            mode: None,
        };
        let cfg = ExperimentConfigFile::from_json(r#"{"train": {"seed": 3}}"#, &o).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.output.dir, PathBuf::from("elsewhere"));
        assert!(cfg.to_pretty_json().contains("\"seed\": 7"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = load(r#"{"train": {"alpha": 0.5, "modes": ["norm_p"]}, "eval": {"operating_point": {"fixed": 0.4}}}"#)
            .unwrap();
        let again = load(&cfg.to_pretty_json()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_pretty_json(), cfg.to_pretty_json());
    }

    #[test]
    fn protocol_settings_load() {
        let cfg = load(
            r#"{"train": {"repetitions": 10,
                "mode_overrides": {"norm_d_and_p": {"alpha": 0.1}, "norm_p": {"class_scales": [3, 1]}}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train.repetitions, 10);
        assert_eq!(cfg.train.alpha_for(Mode::NormDAndP), 0.1);
        assert_eq!(cfg.train.class_scales_for(Mode::NormP), vec![3.0, 1.0]);
    }

    #[test]
    fn reference_mode_needs_labels() {
        let err = load(r#"{"data": {"target_labels_count": 0}, "train": {"modes": ["reference"]}}"#).unwrap_err();
        assert!(err.contains("data.target_labels_count"));
        assert!(load(r#"{"data": {"target_labels_count": 0}, "train": {"modes": ["norm_p"]}}"#).is_ok());
    }

    #[test]
    fn role_seeds_are_disjoint() {
        let d = DataConfig::default();
        let seeds: Vec<u64> = [
            DatasetRole::SourceTrain,
            DatasetRole::TargetTrainUnlabeled,
            DatasetRole::TargetTest,
            DatasetRole::TargetLabels,
        ]
        .iter()
        .map(|&r| d.spec(r).seed)
        .collect();
        assert_eq!(seeds, vec![0, 1 << 20, 2 << 20, 3 << 20]);
        let null = DataConfig {
            shift: 0.0,
            ..DataConfig::default()
        };
        assert_eq!(null.target_params(), null.source);
    }
}
