use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Appearance model of one synthetic domain. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainParams {
    /// Per-channel background level.
    pub background: [f64; 3],
    /// Period in pixels of the sinusoidal background grid.
    pub texture_period: f64,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    /// Per-channel lower bound of vehicle intensity.
    pub vehicle_lo: [f64; 3],
    /// Per-channel upper bound of vehicle intensity.
    pub vehicle_hi: [f64; 3],
    /// Vehicle scale range (square root of area) in pixels.
    pub vehicle_size: [f64; 2],
    /// Vehicle aspect-ratio range (width / height).
    pub vehicle_aspect: [f64; 2],
    pub vehicles_per_image: [usize; 2],
}

impl DomainParams {
    /// Dark, finely textured background with bright vehicles.
    pub fn source_default() -> Self {
        Self {
            background: [0.35, 0.35, 0.35],
            texture_period: 6.0,
            texture_amplitude: 0.04,
            noise_sigma: 0.02,
            vehicle_lo: [0.75, 0.75, 0.75],
            vehicle_hi: [0.95, 0.95, 0.95],
            vehicle_size: [7.0, 13.0],
            vehicle_aspect: [0.5, 2.0],
            vehicles_per_image: [3, 8],
        }
    }

    /// Brighter, coarser background, weaker vehicle contrast and more noise.
    pub fn target_default() -> Self {
        Self {
            background: [0.55, 0.55, 0.55],
            texture_period: 14.0,
            texture_amplitude: 0.08,
            noise_sigma: 0.06,
            vehicle_lo: [0.65, 0.65, 0.65],
            vehicle_hi: [0.85, 0.85, 0.85],
            vehicle_size: [7.0, 13.0],
            vehicle_aspect: [0.5, 2.0],
            vehicles_per_image: [3, 8],
        }
    }

    /// Moves `shift` of the way from `self` to `other`; `shift = 0` returns `self`
    /// unchanged. Vehicle counts are rounded to the nearest integer.
    pub fn interpolate(&self, other: &Self, shift: f64) -> Self {
        let l = |a: f64, b: f64| if shift == 0.0 { a } else { a + shift * (b - a) };
        let l3 = |a: [f64; 3], b: [f64; 3]| [l(a[0], b[0]), l(a[1], b[1]), l(a[2], b[2])];
        let l2 = |a: [f64; 2], b: [f64; 2]| [l(a[0], b[0]), l(a[1], b[1])];
        let li = |a: usize, b: usize| l(a as f64, b as f64).round().max(0.0) as usize;
        Self {
            background: l3(self.background, other.background),
            texture_period: l(self.texture_period, other.texture_period),
            texture_amplitude: l(self.texture_amplitude, other.texture_amplitude),
            noise_sigma: l(self.noise_sigma, other.noise_sigma),
            vehicle_lo: l3(self.vehicle_lo, other.vehicle_lo),
            vehicle_hi: l3(self.vehicle_hi, other.vehicle_hi),
            vehicle_size: l2(self.vehicle_size, other.vehicle_size),
            vehicle_aspect: l2(self.vehicle_aspect, other.vehicle_aspect),
            vehicles_per_image: [
                li(self.vehicles_per_image[0], other.vehicles_per_image[0]),
                li(self.vehicles_per_image[1], other.vehicles_per_image[1]),
            ],
        }
    }

    /// Error messages start with the offending field name.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.background.iter().all(|&v| unit(v)) {
            return bad("background: levels must be in [0, 1]");
        }
        if !(self.texture_period > 0.0 && self.texture_period.is_finite()) {
            return bad("texture_period: must be positive");
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return bad("texture_amplitude: must be non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma: must be non-negative");
        }
        if !self.vehicle_lo.iter().all(|&v| unit(v)) {
            return bad("vehicle_lo: levels must be in [0, 1]");
        }
        if !self.vehicle_hi.iter().all(|&v| unit(v)) || (0..3).any(|c| self.vehicle_lo[c] > self.vehicle_hi[c]) {
            return bad("vehicle_hi: levels must be in [0, 1] and not below vehicle_lo");
        }
        if !(self.vehicle_size[0] >= 1.0 && self.vehicle_size[0] <= self.vehicle_size[1]) {
            return bad("vehicle_size: range must be non-empty with min ≥ 1");
        }
        if !(self.vehicle_aspect[0] > 0.0 && self.vehicle_aspect[0] <= self.vehicle_aspect[1]) {
            return bad("vehicle_aspect: range must be non-empty and positive");
        }
        if self.vehicles_per_image[0] > self.vehicles_per_image[1] {
            return bad("vehicles_per_image: range must be non-empty");
        }
        Ok(())
    }
}
