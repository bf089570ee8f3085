//! Adversarial alignment: feature units and the feature discriminator,
//! prediction vectors and the prediction discriminator, class weight
//! normalization, and the routed/weighted domain losses.

mod cwn;
mod discriminator;
mod losses;
mod units;

pub use cwn::{allocate_weights, argmax_classes, class_weight_normalization, compute_class_weights, ClassWeights};
pub use discriminator::{Discriminator, DiscriminatorKind, DISC_HIDDEN};
pub use losses::{
    discriminator_loss, feature_alignment_losses, generator_loss, prediction_alignment_losses,
    weighted_alignment_losses, AdversarialLosses, PredictionWeights,
};
pub use units::{build_prediction_vectors, extract_units, FeatureUnitBatch};
