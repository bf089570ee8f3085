use serde::{Deserialize, Serialize};

use super::params::DomainParams;
use super::scene::{generate_scene, rotate_augment, Domain, Scene, ROTATIONS};
use crate::detector::GroundTruth;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    SourceTrain,
    TargetTrainUnlabeled,
    TargetTest,
    TargetLabels,
}

impl DatasetRole {
    pub fn domain(self) -> Domain {
        match self {
            Self::SourceTrain => Domain::Source,
            _ => Domain::Target,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Self::TargetTrainUnlabeled
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Self::SourceTrain => "source_train",
            Self::TargetTrainUnlabeled => "target_train",
            Self::TargetTest => "target_test",
            Self::TargetLabels => "target_labels",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub role: DatasetRole,
    pub count: usize,
    pub seed: u64,
}

/// Scenes of one role. Ground truths of unlabeled roles stay on the scenes for
/// auditing but are hidden by [`Dataset::labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub role: DatasetRole,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Training view of scene `i`'s labels.
    pub fn labels(&self, i: usize) -> Option<&[GroundTruth]> {
        self.role.is_labeled().then(|| self.scenes[i].gts.as_slice())
    }

    pub fn audit_labels(&self, i: usize) -> &[GroundTruth] {
        &self.scenes[i].gts
    }

    /// Appends every scene rotated by 90, 180 and 270 degrees.
    pub fn with_rotations(&self) -> Result<Self> {
        let mut scenes = self.scenes.clone();
        for angle in ROTATIONS {
            for s in &self.scenes {
                scenes.push(rotate_augment(s, angle)?);
            }
        }
        Ok(Self { role: self.role, scenes })
    }
}

/// Scene `i` is drawn with seed `spec.seed + i`.
pub fn generate_dataset(spec: &DatasetSpec, params: &DomainParams, side: usize) -> Result<Dataset> {
    if spec.count == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one scene".into()));
    }
    let domain = spec.role.domain();
    let scenes = (0..spec.count as u64)
        .map(|i| generate_scene(params, side, domain, i, spec.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { role: spec.role, scenes })
}
