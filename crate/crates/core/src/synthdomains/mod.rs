//! Deterministic synthetic aerial-style scenes with a controllable domain shift.

mod dataset;
mod io;
mod params;
mod scene;

pub use dataset::{generate_dataset, Dataset, DatasetRole, DatasetSpec};
pub use io::{decode_ppm, encode_ppm, load_dataset, save_dataset, ANNOTATIONS_FILE, AUDIT_FILE};
pub use params::DomainParams;
pub use scene::{generate_scene, rotate_augment, Domain, Scene, MAX_VEHICLE_IOU, PLACEMENT_ATTEMPTS, ROTATIONS};
