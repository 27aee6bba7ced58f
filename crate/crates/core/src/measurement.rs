//! Noisy ToA/AoA synthesis and the inverse VT back-projection.
//!
//! Range is carried directly in meters (time of arrival times the speed of
//! light). Angle noise is added independently to the polar and azimuth angle.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{unit_direction, PathId, TracedPath};
use crate::{Error, Result};

/// Noise levels for measurements, GPS initialization and odometry. Every
/// Gaussian is truncated at `truncation` standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Range noise, meters.
    pub sigma_d: f64,
    /// Angle noise for both polar and azimuth, radians.
    pub sigma_alpha: f64,
    /// GPS initialization error per axis, meters.
    pub sigma_eps: f64,
    /// Speed noise, m/s.
    pub sigma_v: f64,
    /// Heading noise, rad/s.
    pub sigma_omega: f64,
    pub truncation: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_d: 0.2,
            sigma_alpha: 1f64.to_radians(),
            sigma_eps: 3.0,
            sigma_v: 0.1,
            sigma_omega: 0.1f64.to_radians(),
            truncation: 2.0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            sigma_d: 0.0,
            sigma_alpha: 0.0,
            sigma_eps: 0.0,
            sigma_v: 0.0,
            sigma_omega: 0.0,
            truncation: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("sigma_d", self.sigma_d),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_eps", self.sigma_eps),
            ("sigma_v", self.sigma_v),
            ("sigma_omega", self.sigma_omega),
        ];
        for (name, v) in sigmas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::Config(format!(
                "truncation must be > 0, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Draws from `N(0, sigma²)` conditioned on `|x| <= cut · sigma`.
///
/// Exact truncation by rejection; the acceptance rate is `P(|Z| <= cut)`.
pub fn truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64, cut: f64) -> f64 {
    debug_assert!(sigma >= 0.0 && cut > 0.0);
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= cut {
            return sigma * z;
        }
    }
}

/// One multipath measurement at a vehicle receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct PathObservation {
    pub polar: f64,
    pub azimuth: f64,
    pub range: f64,
    /// Ground-truth path identity (oracle association).
    pub path_id: PathId,
    pub vehicle_id: usize,
    /// Position of this path in the vehicle's observation list, 1-based
    /// (0 is reserved for "not observed" in membership vectors).
    pub path_index: usize,
}

impl PathObservation {
    pub fn direction(&self) -> Vector3<f64> {
        unit_direction(self.polar, self.azimuth)
    }
}

/// Maps any (polar, azimuth) to `polar ∈ (−π, π]`, `azimuth ∈ [0, π]`
/// without changing the direction vector.
pub fn normalize_angles(mut polar: f64, mut azimuth: f64) -> (f64, f64) {
    azimuth = azimuth.rem_euclid(2.0 * PI);
    if azimuth > PI {
        azimuth = 2.0 * PI - azimuth;
        polar += PI;
    }
    polar = polar.rem_euclid(2.0 * PI);
    if polar > PI {
        polar -= 2.0 * PI;
    }
    (polar, azimuth)
}

/// Adds truncated Gaussian noise to every traced path.
pub fn observe<R: Rng + ?Sized>(
    paths: &[TracedPath],
    vehicle_id: usize,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Vec<PathObservation> {
    let cut = noise.truncation;
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let range = p.range + truncated_gaussian(rng, noise.sigma_d, cut);
            let polar = p.polar + truncated_gaussian(rng, noise.sigma_alpha, cut);
            let azimuth = p.azimuth + truncated_gaussian(rng, noise.sigma_alpha, cut);
            let (polar, azimuth) = normalize_angles(polar, azimuth);
            PathObservation {
                polar,
                azimuth,
                range,
                path_id: p.path_id,
                vehicle_id,
                path_index: i + 1,
            }
        })
        .collect()
}

/// VT position implied by an observation taken at `receiver`:
/// `receiver + (range − additional_distance) · R(polar, azimuth)`.
pub fn back_project_vt(
    receiver: &Vector3<f64>,
    obs: &PathObservation,
    additional_distance: f64,
) -> Result<Vector3<f64>> {
    let los = obs.range - additional_distance;
    if los < 0.0 {
        return Err(Error::NegativeLosDistance {
            range: obs.range,
            additional: additional_distance,
        });
    }
    Ok(receiver + los * obs.direction())
}
