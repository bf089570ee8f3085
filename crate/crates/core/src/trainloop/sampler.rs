use rand::seq::SliceRandom;
use rand::Rng;

use crate::detector::GroundTruth;
use crate::error::Result;
use crate::synthdomains::{rotate_augment, Dataset, ROTATIONS};

/// Epoch-shuffled draws over a dataset, optionally over its rotated copies too.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    scenes: usize,
}

/// One training example: `[3, S, S]` image plus labels when the role exposes them.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Vec<f64>,
    pub gts: Option<Vec<GroundTruth>>,
}

impl BatchSampler {
    pub fn new(scenes: usize, augment: bool) -> Self {
        let views = if augment { 1 + ROTATIONS.len() } else { 1 };
        Self {
            order: (0..scenes * views).collect(),
            pos: scenes * views,
            scenes,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, data: &Dataset, n: usize, rng: &mut R) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let k = self.order[self.pos];
            self.pos += 1;
            let (i, view) = (k % self.scenes, k / self.scenes);
            let labeled = data.labels(i).is_some();
            let sample = if view == 0 {
                Sample {
                    image: data.scenes[i].image.clone(),
                    gts: labeled.then(|| data.scenes[i].gts.clone()),
                }
            } else {
                let r = rotate_augment(&data.scenes[i], ROTATIONS[view - 1])?;
                Sample {
                    image: r.image,
                    gts: labeled.then_some(r.gts),
                }
            };
            out.push(sample);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdomains::{generate_dataset, DatasetRole, DatasetSpec, DomainParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epoch_covers_every_view_once() {
        let spec = DatasetSpec {
            role: DatasetRole::SourceTrain,
            count: 3,
            seed: 0,
        };
        let d = generate_dataset(&spec, &DomainParams::source_default(), 16).unwrap();
        let aug = d.with_rotations().unwrap();
        let mut s = BatchSampler::new(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = s.next_batch(&d, 12, &mut rng).unwrap();
        for scene in &aug.scenes {
            assert_eq!(batch.iter().filter(|b| b.image == scene.image).count(), 1);
        }
    }

    #[test]
    fn unlabeled_has_no_labels() {
        let spec = DatasetSpec {
            role: DatasetRole::TargetTrainUnlabeled,
            count: 2,
            seed: 0,
        };
        let d = generate_dataset(&spec, &DomainParams::target_default(), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = BatchSampler::new(2, true).next_batch(&d, 5, &mut rng).unwrap();
        assert!(b.iter().all(|s| s.gts.is_none()));
    }
}
