//! Weight updates for the two coupled filters.
//!
//! For a CVT particle `c = (x, y, z, d)` and an observation `(d̂, α̂)` from a
//! vehicle whose antenna sits at `r`, both filters compare `r` against the
//! receiver position implied by the particle,
//!
//! ```text
//!     t = c_xyz − (d̂ − d) · R(α̂)
//! ```
//!
//! which is the same residual as `c_xyz − (r + (d̂ − d)·R(α̂))`. The CVT
//! filter measures it in 3-D against the lifted vehicle particle; the vehicle
//! filter measures it in the x–y plane. The kernel is
//! `exp(−‖residual‖² / 2σ²)` and the sum over the other filter's particles
//! is weighted by that filter's weights (`1/N` after resampling).
//!
//! Everything runs in the log domain; a particle set only degenerates when
//! no particle has a finite log weight.

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::particles::{CvtParticles, VehicleParticles};
use crate::measurement::{NoiseConfig, PathObservation};

/// Standard deviation of the Gaussian likelihood kernel, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelScale {
    Fixed(f64),
    /// `max(floor, base + per_meter · observed_range)`, i.e. first-order
    /// propagation of range and angle noise into position.
    RangeScaled {
        base: f64,
        per_meter: f64,
        floor: f64,
    },
}

impl KernelScale {
    pub fn sigma(&self, range: f64) -> f64 {
        match *self {
            KernelScale::Fixed(s) => s,
            KernelScale::RangeScaled {
                base,
                per_meter,
                floor,
            } => (base + per_meter * range).max(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub kernel: KernelScale,
}

impl LikelihoodConfig {
    pub const DEFAULT_FLOOR: f64 = 0.05;

    pub fn from_noise(noise: &NoiseConfig) -> Self {
        LikelihoodConfig {
            kernel: KernelScale::RangeScaled {
                base: noise.sigma_d,
                per_meter: noise.sigma_alpha,
                floor: Self::DEFAULT_FLOOR,
            },
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = match self.kernel {
            KernelScale::Fixed(s) => s > 0.0 && s.is_finite(),
            KernelScale::RangeScaled {
                base,
                per_meter,
                floor,
            } => base >= 0.0 && per_meter >= 0.0 && floor > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!(
                "likelihood kernel must have a positive scale: {:?}",
                self.kernel
            )))
        }
    }
}

/// A vehicle contributing to a CVT update: its particles, its observation of
/// the cluster's path and its antenna height.
#[derive(Debug, Clone, Copy)]
pub struct VehicleLink<'a> {
    pub particles: &'a VehicleParticles,
    pub observation: &'a PathObservation,
    pub antenna_height: f64,
}

/// A cluster contributing to a vehicle update, with the vehicle's
/// observation of that cluster's path.
#[derive(Debug, Clone, Copy)]
pub struct CvtLink<'a> {
    pub particles: &'a CvtParticles,
    pub observation: &'a PathObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// No particle kept a usable weight; weights were reset to uniform.
    Degenerate,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Implied receiver positions `c_xyz − (d̂ − d)·R(α̂)` for every CVT particle.
fn implied_receivers(cvt: &CvtParticles, obs: &PathObservation) -> Vec<Vector3<f64>> {
    let dir = obs.direction();
    cvt.states
        .iter()
        .map(|c| c.xyz() - (obs.range - c[3]) * dir)
        .collect()
}

/// Adds `log_like` to the log weights, renormalizes, and handles degeneracy.
fn apply_log_likelihood(weights: &mut [f64], log_like: &[f64], what: &str) -> UpdateOutcome {
    let log_w: Vec<f64> = weights
        .iter()
        .zip(log_like)
        .map(|(&w, &l)| {
            let v = w.ln() + l;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let norm = log_sum_exp(log_w.iter().copied());
    if !norm.is_finite() {
        warn!("{what} weights degenerated; resetting to uniform");
        let u = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = u);
        return UpdateOutcome::Degenerate;
    }
    for (w, l) in weights.iter_mut().zip(log_w) {
        *w = (l - norm).exp();
    }
    UpdateOutcome::Updated
}

/// Reweights one cluster's CVT particles against every vehicle that
/// observes it.
pub fn cvt_weight_update(
    cvt: &mut CvtParticles,
    vehicles: &[VehicleLink<'_>],
    cfg: &LikelihoodConfig,
) -> UpdateOutcome {
    let mut log_like = vec![0.0; cvt.len()];
    for link in vehicles {
        let sigma = cfg.kernel.sigma(link.observation.range);
        let inv = 0.5 / (sigma * sigma);
        let implied = implied_receivers(cvt, link.observation);
        let vp = link.particles;
        let log_vw: Vec<f64> = vp.weights.iter().map(|w| w.ln()).collect();
        for (acc, t) in log_like.iter_mut().zip(&implied) {
            let dz2 = (t.z - link.antenna_height).powi(2);
            let terms = vp.states.iter().zip(&log_vw).map(|(r, lw)| {
                let d2 = (t.x - r.x).powi(2) + (t.y - r.y).powi(2) + dz2;
                lw - d2 * inv
            });
            *acc += log_sum_exp(terms);
        }
    }
    apply_log_likelihood(&mut cvt.weights, &log_like, "CVT")
}

/// Reweights one vehicle's particles against every cluster it observes.
pub fn vehicle_weight_update(
    vehicle: &mut VehicleParticles,
    clusters: &[CvtLink<'_>],
    cfg: &LikelihoodConfig,
) -> UpdateOutcome {
    let mut log_like = vec![0.0; vehicle.len()];
    for link in clusters {
        let sigma = cfg.kernel.sigma(link.observation.range);
        let inv = 0.5 / (sigma * sigma);
        let implied = implied_receivers(link.particles, link.observation);
        let log_cw: Vec<f64> = link.particles.weights.iter().map(|w| w.ln()).collect();
        for (acc, r) in log_like.iter_mut().zip(&vehicle.states) {
            let terms = implied.iter().zip(&log_cw).map(|(t, lw)| {
                let d2 = (t.x - r.x).powi(2) + (t.y - r.y).powi(2);
                lw - d2 * inv
            });
            *acc += log_sum_exp(terms);
        }
    }
    apply_log_likelihood(&mut vehicle.weights, &log_like, "vehicle")
}
