//! Scene and vehicle fleet for one Monte Carlo run.

use nalgebra::Vector2;
use rand::Rng;

use crate::geometry::{Scene, VehicleState};
use crate::orchestrator::FleetSpec;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

use super::ExperimentConfig;

const SPAWN_STREAM: u64 = 0x5350_4157;
const SIM_STREAM: u64 = 0x5349_4d;

/// Seed of the simulation stream of run `run_index` at `density`.
pub fn run_seed(cfg: &ExperimentConfig, density: usize, run_index: usize) -> u64 {
    derive_seed(cfg.seed, &[density as u64, run_index as u64, SIM_STREAM])
}

/// Vehicle `i` heads +x when `i` is even, so ⌈ρ/2⌉ vehicles head +x.
/// +x traffic uses the lanes below the road center line and −x traffic the
/// lanes above it, each filled round-robin. A spawn closer than the headway
/// to a vehicle in the same lane is redrawn.
pub fn build_scenario(
    cfg: &ExperimentConfig,
    density: usize,
    run_index: usize,
) -> Result<(Scene, FleetSpec)> {
    if density == 0 {
        return Err(Error::Config("density must be >= 1".into()));
    }
    let sc = &cfg.scene;
    let scene = sc.build()?;
    let mut rng = stream(cfg.seed, &[density as u64, run_index as u64, SPAWN_STREAM]);

    let mid = 0.5 * (scene.road.y.0 + scene.road.y.1);
    let (mut forward, mut backward): (Vec<usize>, Vec<usize>) =
        (0..scene.lanes.count).partition(|&l| scene.lane_center(l) < mid);
    if forward.is_empty() {
        forward = backward.clone();
    }
    if backward.is_empty() {
        backward = forward.clone();
    }

    let mut placed: Vec<(usize, f64)> = Vec::with_capacity(density);
    let mut vehicles = Vec::with_capacity(density);
    for i in 0..density {
        let heading_forward = i % 2 == 0;
        let k = i / 2;
        let (lane, interval, dir) = if heading_forward {
            (forward[k % forward.len()], sc.spawn_x_forward, 1.0)
        } else {
            (backward[k % backward.len()], sc.spawn_x_backward, -1.0)
        };
        let mut x = None;
        for _ in 0..sc.spawn_attempts {
            let candidate = rng.random_range(interval[0]..interval[1]);
            let clear = placed
                .iter()
                .all(|&(l, px)| l != lane || (px - candidate).abs() >= sc.headway);
            if clear {
                x = Some(candidate);
                break;
            }
        }
        let x = x.ok_or(Error::Spawn {
            vehicle: i,
            headway: sc.headway,
            attempts: sc.spawn_attempts,
        })?;
        placed.push((lane, x));
        vehicles.push(VehicleState {
            position: Vector2::new(x, scene.lane_center(lane)),
            velocity: Vector2::new(dir * sc.speed, 0.0),
            antenna_height: sc.antenna_height,
        });
    }
    Ok((scene, FleetSpec { vehicles }))
}
