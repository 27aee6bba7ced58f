//! Coupled particle filters over CVT positions and vehicle positions.
//!
//! Both filters share [`ParticleSet`]. A CVT particle is `(x, y, z, d)`, a
//! 3-D transmitter position plus its additional path length; a vehicle
//! particle is a planar position. Each filter's weight update marginalizes
//! over the other filter's current particles.

mod likelihood;
mod motion;
mod particles;

pub use likelihood::{
    cvt_weight_update, vehicle_weight_update, CvtLink, KernelScale, LikelihoodConfig,
    UpdateOutcome, VehicleLink,
};
pub use motion::{
    perturb_velocity, propagate_cvt, propagate_vehicle, MotionCommand, VelocityNoiseModel,
};
pub use particles::{
    cvt_position, cvt_state, init_cvt_particles, init_vehicle_particles, resample,
    systematic_resample, CvtParticles, CvtState, ParticleSet, ResamplePolicy, VehicleParticles,
};
