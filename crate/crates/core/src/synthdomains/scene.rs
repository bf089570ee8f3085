use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::DomainParams;
use crate::detector::{iou, GroundTruth, Xyxy};
use crate::error::{Error, Result};

/// Vehicles placed in one scene overlap each other below this IoU.
pub const MAX_VEHICLE_IOU: f64 = 0.1;
/// Placement attempts per requested vehicle before giving up.
pub const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One `[3, S, S]` image with its vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub domain: Domain,
    pub side: usize,
    pub image: Vec<f64>,
    pub gts: Vec<GroundTruth>,
    /// Vehicles requested by the sampler; `gts.len()` can be lower when placement ran out of room.
    pub requested: usize,
}

pub fn generate_scene(params: &DomainParams, side: usize, domain: Domain, id: u64, seed: u64) -> Result<Scene> {
    params.validate()?;
    if side == 0 {
        return Err(Error::InvalidArgument("scene side must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side;
    let tau = std::f64::consts::TAU;
    let phase_x = rng.random_range(0.0..params.texture_period);
    let phase_y = rng.random_range(0.0..params.texture_period);
    let mut image = vec![0.0; 3 * s * s];
    for y in 0..s {
        let sy = (tau * (y as f64 + phase_y) / params.texture_period).sin();
        for x in 0..s {
            let t = params.texture_amplitude * sy * (tau * (x as f64 + phase_x) / params.texture_period).sin();
            for c in 0..3 {
                image[(c * s + y) * s + x] = params.background[c] + t;
            }
        }
    }

    let [kmin, kmax] = params.vehicles_per_image;
    let requested = rng.random_range(kmin..=kmax);
    let mut gts: Vec<GroundTruth> = Vec::with_capacity(requested);
    let mut attempts = 0;
    while gts.len() < requested && attempts < PLACEMENT_ATTEMPTS * requested {
        attempts += 1;
        let size = sample(&mut rng, params.vehicle_size);
        let aspect = sample(&mut rng, params.vehicle_aspect);
        let w = (size * aspect.sqrt()).round().clamp(1.0, s as f64) as usize;
        let h = (size / aspect.sqrt()).round().clamp(1.0, s as f64) as usize;
        let x1 = rng.random_range(0..=s - w);
        let y1 = rng.random_range(0..=s - h);
        let bbox = Xyxy::new(x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64);
        if gts.iter().any(|g| iou(&g.bbox, &bbox) >= MAX_VEHICLE_IOU) {
            continue;
        }
        let color: [f64; 3] = std::array::from_fn(|c| sample(&mut rng, [params.vehicle_lo[c], params.vehicle_hi[c]]));
        for (c, &v) in color.iter().enumerate() {
            for y in y1..y1 + h {
                image[(c * s + y) * s + x1..(c * s + y) * s + x1 + w].fill(v);
            }
        }
        gts.push(GroundTruth { bbox, label: 1 });
    }

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma validated");
        for v in image.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Scene {
        id,
        domain,
        side,
        image,
        gts,
        requested,
    })
}

fn sample(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Rotation angles supported by [`rotate_augment`].
pub const ROTATIONS: [u32; 3] = [90, 180, 270];

/// Rotates a square scene counter-clockwise by 90, 180 or 270 degrees.
/// One quarter turn maps box `(x1, y1, x2, y2)` to `(y1, S − x2, y2, S − x1)`.
pub fn rotate_augment(scene: &Scene, angle: u32) -> Result<Scene> {
    let turns = match angle {
        90 => 1,
        180 => 2,
        270 => 3,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported rotation {other}°; use 90, 180 or 270"
            )))
        }
    };
    let mut out = scene.clone();
    for _ in 0..turns {
        out = quarter_turn(&out);
    }
    Ok(out)
}

fn quarter_turn(scene: &Scene) -> Scene {
    let s = scene.side;
    let mut image = vec![0.0; scene.image.len()];
    for c in 0..3 {
        for r in 0..s {
            for col in 0..s {
                image[(c * s + r) * s + col] = scene.image[(c * s + col) * s + (s - 1 - r)];
            }
        }
    }
    let sf = s as f64;
    let gts = scene
        .gts
        .iter()
        .map(|g| GroundTruth {
            bbox: Xyxy::new(g.bbox.y1, sf - g.bbox.x2, g.bbox.y2, sf - g.bbox.x1),
            label: g.label,
        })
        .collect();
    Scene {
        image,
        gts,
        ..scene.clone()
    }
}
