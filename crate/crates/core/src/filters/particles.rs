use nalgebra::{SVector, Vector2, Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::measurement::{truncated_gaussian, NoiseConfig};

/// Weighted particle ensemble over `D`-dimensional states.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<const D: usize> {
    pub states: Vec<SVector<f64, D>>,
    pub weights: Vec<f64>,
}

/// `(x, y, z, additional_distance)`.
pub type CvtState = Vector4<f64>;
pub type CvtParticles = ParticleSet<4>;
pub type VehicleParticles = ParticleSet<2>;

pub fn cvt_state(position: &Vector3<f64>, additional_distance: f64) -> CvtState {
    Vector4::new(position.x, position.y, position.z, additional_distance)
}

pub fn cvt_position(s: &CvtState) -> Vector3<f64> {
    s.xyz()
}

impl<const D: usize> ParticleSet<D> {
    pub fn uniform(states: Vec<SVector<f64, D>>) -> Self {
        assert!(!states.is_empty(), "particle set must not be empty");
        let w = 1.0 / states.len() as f64;
        let weights = vec![w; states.len()];
        ParticleSet { states, weights }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn reset_uniform(&mut self) {
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    pub fn effective_sample_size(&self) -> f64 {
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            1.0 / s2
        } else {
            0.0
        }
    }

    /// Weighted mean of the particle states.
    pub fn estimate(&self) -> SVector<f64, D> {
        self.states
            .iter()
            .zip(&self.weights)
            .fold(SVector::zeros(), |acc, (s, &w)| acc + s * w)
    }
}

/// When to resample after a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    Always,
    /// Resample only when the effective sample size drops below this
    /// fraction of the particle count.
    EssBelow(f64),
}

/// Systematic resampling to uniform weights. Particle `i` receives either
/// `⌊N·w_i⌋` or `⌈N·w_i⌉` copies.
pub fn systematic_resample<const D: usize, R: Rng + ?Sized>(set: &mut ParticleSet<D>, rng: &mut R) {
    let n = set.len();
    let step = 1.0 / n as f64;
    let start = rng.random::<f64>() * step;
    let total = set.weight_sum();

    let mut out = Vec::with_capacity(n);
    let mut cumulative = set.weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 * step;
        while u >= cumulative && i + 1 < n {
            i += 1;
            cumulative += set.weights[i] / total;
        }
        out.push(set.states[i]);
    }
    set.states = out;
    set.reset_uniform();
}

/// Applies `policy`; returns whether the set was resampled.
pub fn resample<const D: usize, R: Rng + ?Sized>(
    set: &mut ParticleSet<D>,
    policy: ResamplePolicy,
    rng: &mut R,
) -> bool {
    let due = match policy {
        ResamplePolicy::Always => true,
        ResamplePolicy::EssBelow(frac) => set.effective_sample_size() < frac * set.len() as f64,
    };
    if due {
        systematic_resample(set, rng);
    }
    due
}

/// Vehicle particles around a GPS fix, truncated Gaussian per axis.
pub fn init_vehicle_particles<R: Rng + ?Sized>(
    gps: &Vector2<f64>,
    noise: &NoiseConfig,
    count: usize,
    rng: &mut R,
) -> VehicleParticles {
    let states = (0..count)
        .map(|_| {
            Vector2::new(
                gps.x + truncated_gaussian(rng, noise.sigma_eps, noise.truncation),
                gps.y + truncated_gaussian(rng, noise.sigma_eps, noise.truncation),
            )
        })
        .collect();
    ParticleSet::uniform(states)
}

/// CVT particles around the mean of the member VT estimates. Positions get
/// isotropic truncated Gaussian spread; the additional distance starts at
/// the member mean.
pub fn init_cvt_particles<R: Rng + ?Sized>(
    members: &[(Vector3<f64>, f64)],
    spread: f64,
    cut: f64,
    count: usize,
    rng: &mut R,
) -> CvtParticles {
    assert!(!members.is_empty(), "CVT init needs at least one member estimate");
    let n = members.len() as f64;
    let center = members.iter().map(|m| m.0).sum::<Vector3<f64>>() / n;
    let d = members.iter().map(|m| m.1).sum::<f64>() / n;
    let states = (0..count)
        .map(|_| {
            let offset = Vector3::new(
                truncated_gaussian(rng, spread, cut),
                truncated_gaussian(rng, spread, cut),
                truncated_gaussian(rng, spread, cut),
            );
            cvt_state(&(center + offset), d)
        })
        .collect();
    ParticleSet::uniform(states)
}
