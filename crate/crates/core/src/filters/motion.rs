use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::particles::{CvtParticles, VehicleParticles};
use crate::measurement::{truncated_gaussian, NoiseConfig};

/// Odometry for one slot: measured velocity at the previous and current
/// slot and the slot length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionCommand {
    pub v_prev: Vector2<f64>,
    pub v_curr: Vector2<f64>,
    pub dt: f64,
}

impl MotionCommand {
    /// Trapezoidal displacement over the slot.
    pub fn displacement(&self) -> Vector2<f64> {
        (self.v_prev + self.v_curr) * (0.5 * self.dt)
    }
}

/// How speed noise `n_v` and orientation noise `n_ω` combine with a velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityNoiseModel {
    /// Speed becomes `|v| + n_v` and the heading turns by `n_ω`.
    #[default]
    HeadingRelative,
    /// `v + n_v · (cos n_ω, sin n_ω)`: a noise vector at absolute angle `n_ω`.
    AbsoluteAngle,
}

pub fn perturb_velocity<R: Rng + ?Sized>(
    v: &Vector2<f64>,
    noise: &NoiseConfig,
    model: VelocityNoiseModel,
    rng: &mut R,
) -> Vector2<f64> {
    let n_v = truncated_gaussian(rng, noise.sigma_v, noise.truncation);
    let n_w = truncated_gaussian(rng, noise.sigma_omega, noise.truncation);
    match model {
        VelocityNoiseModel::HeadingRelative => {
            let speed = v.norm();
            let heading = if speed > 0.0 { v.y.atan2(v.x) } else { 0.0 };
            let (s, c) = (heading + n_w).sin_cos();
            Vector2::new(c, s) * (speed + n_v)
        }
        VelocityNoiseModel::AbsoluteAngle => {
            let (s, c) = n_w.sin_cos();
            v + Vector2::new(c, s) * n_v
        }
    }
}

/// Moves every particle by the trapezoid of two independently perturbed
/// velocities. Weights are untouched.
pub fn propagate_vehicle<R: Rng + ?Sized>(
    particles: &mut VehicleParticles,
    cmd: &MotionCommand,
    noise: &NoiseConfig,
    model: VelocityNoiseModel,
    rng: &mut R,
) {
    for p in particles.states.iter_mut() {
        let v0 = perturb_velocity(&cmd.v_prev, noise, model, rng);
        let v1 = perturb_velocity(&cmd.v_curr, noise, model, rng);
        *p += (v0 + v1) * (0.5 * cmd.dt);
    }
}

/// CVTs are static. A non-zero `roughening` adds truncated Gaussian jitter
/// to the position components.
pub fn propagate_cvt<R: Rng + ?Sized>(
    particles: &mut CvtParticles,
    roughening: f64,
    cut: f64,
    rng: &mut R,
) {
    if roughening <= 0.0 {
        return;
    }
    for p in particles.states.iter_mut() {
        for axis in 0..3 {
            p[axis] += truncated_gaussian(rng, roughening, cut);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{cvt_state, ParticleSet};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn cloud() -> VehicleParticles {
        ParticleSet::uniform(vec![Vector2::new(0.0, 0.0), Vector2::new(3.0, -1.0)])
    }

    #[test]
    fn constant_velocity_shift() {
        let mut set = cloud();
        let cmd = MotionCommand {
            v_prev: Vector2::new(10.0, 0.0),
            v_curr: Vector2::new(10.0, 0.0),
            dt: 0.1,
        };
        let before = set.clone();
        propagate_vehicle(&mut set, &cmd, &NoiseConfig::noiseless(), VelocityNoiseModel::default(), &mut stream(1, &[]));
        for (a, b) in set.states.iter().zip(&before.states) {
            assert_abs_diff_eq!(a - b, Vector2::new(1.0, 0.0), epsilon = 1e-12);
        }
        assert_eq!(set.weights, before.weights);
    }

    #[test]
    fn turning_velocity_uses_the_average() {
        let mut set = cloud();
        let cmd = MotionCommand {
            v_prev: Vector2::new(10.0, 0.0),
            v_curr: Vector2::new(0.0, 10.0),
            dt: 0.1,
        };
        propagate_vehicle(&mut set, &cmd, &NoiseConfig::noiseless(), VelocityNoiseModel::default(), &mut stream(1, &[]));
        assert_abs_diff_eq!(set.states[0], Vector2::new(0.5, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn speed_noise_bound_through_the_trapezoid() {
        let mut noise = NoiseConfig::noiseless();
        noise.sigma_v = 0.1;
        let cmd = MotionCommand {
            v_prev: Vector2::new(10.0, 0.0),
            v_curr: Vector2::new(10.0, 0.0),
            dt: 0.1,
        };
        let mut rng = stream(2, &[]);
        let mut worst: f64 = 0.0;
        for model in [VelocityNoiseModel::HeadingRelative, VelocityNoiseModel::AbsoluteAngle] {
            let mut set = ParticleSet::uniform(vec![Vector2::zeros(); 20_000]);
            propagate_vehicle(&mut set, &cmd, &noise, model, &mut rng);
            for s in &set.states {
                worst = worst.max((s.norm() - 1.0).abs());
            }
        }
        assert!(worst <= 0.02 + 1e-12, "{worst}");
        assert!(worst > 0.015, "noise should reach near the bound, got {worst}");
    }

    #[test]
    fn heading_noise_keeps_speed() {
        let mut noise = NoiseConfig::noiseless();
        noise.sigma_omega = 0.05;
        let mut rng = stream(3, &[]);
        for _ in 0..1000 {
            let v = perturb_velocity(&Vector2::new(0.0, -10.0), &noise, VelocityNoiseModel::HeadingRelative, &mut rng);
            assert_abs_diff_eq!(v.norm(), 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cvt_propagation() {
        let base: CvtParticles =
            ParticleSet::uniform((0..50).map(|i| cvt_state(&Vector3::new(i as f64, 1.0, 2.0), 0.3)).collect());
        let mut same = base.clone();
        propagate_cvt(&mut same, 0.0, 2.0, &mut stream(4, &[]));
        assert_eq!(same, base);

        let mut rough = base.clone();
        propagate_cvt(&mut rough, 0.25, 2.0, &mut stream(4, &[]));
        assert_ne!(rough, base);
        for (a, b) in rough.states.iter().zip(&base.states) {
            for axis in 0..3 {
                assert!((a[axis] - b[axis]).abs() <= 0.5);
            }
            assert_eq!(a[3], b[3]);
        }
    }
}
