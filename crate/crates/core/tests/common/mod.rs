//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain arrays and explicit loops so that
//! it shares no code path with the library beyond the data types.

#![allow(dead_code)]

use coop_channel_slam::clustering::{
    affinity_propagation, build_similarity, ApConfig, Preference, SimilarityMatrix,
};
use coop_channel_slam::filters::{
    cvt_state, cvt_weight_update, propagate_vehicle, resample, vehicle_weight_update, CvtLink,
    CvtParticles, KernelScale, LikelihoodConfig, MotionCommand, ParticleSet, ResamplePolicy,
    VehicleLink, VehicleParticles, VelocityNoiseModel,
};
use coop_channel_slam::geometry::{
    direction_angles, trace_paths, Extent, LaneGeometry, PathId, ReflectorPlane, RoadExtent, Scene,
    VehicleState,
};
use coop_channel_slam::measurement::{back_project_vt, observe, NoiseConfig, PathObservation};
use coop_channel_slam::rng::{stream, SimRng};
use nalgebra::{Vector2, Vector3};
use rand::Rng;

// ---------------------------------------------------------------- filters

fn dir(polar: f64, azimuth: f64) -> [f64; 3] {
    [polar.cos() * azimuth.sin(), polar.sin() * azimuth.sin(), azimuth.cos()]
}

fn kernel(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Brute-force CVT reweighting: product over vehicles of the weighted sum
/// over that vehicle's particles, times the prior, normalized.
pub fn oracle_cvt_weights(
    cvt: &[[f64; 4]],
    prior: &[f64],
    vehicles: &[(&[[f64; 2]], &[f64], &PathObservation, f64)],
    sigma_of: &dyn Fn(f64) -> f64,
) -> Vec<f64> {
    let mut w = Vec::new();
    for (a, c) in cvt.iter().enumerate() {
        let mut like = 1.0;
        for &(states, weights, obs, h) in vehicles {
            let u = dir(obs.polar, obs.azimuth);
            let los = obs.range - c[3];
            let t = [c[0] - los * u[0], c[1] - los * u[1], c[2] - los * u[2]];
            let sigma = sigma_of(obs.range);
            let mut sum = 0.0;
            for (j, r) in states.iter().enumerate() {
                let d2 = (t[0] - r[0]).powi(2) + (t[1] - r[1]).powi(2) + (t[2] - h).powi(2);
                sum += weights[j] * kernel(d2, sigma);
            }
            like *= sum;
        }
        w.push(prior[a] * like);
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Brute-force vehicle reweighting against the clusters the vehicle sees.
pub fn oracle_vehicle_weights(
    states: &[[f64; 2]],
    prior: &[f64],
    clusters: &[(&[[f64; 4]], &[f64], &PathObservation)],
    sigma_of: &dyn Fn(f64) -> f64,
) -> Vec<f64> {
    let mut w = Vec::new();
    for (j, r) in states.iter().enumerate() {
        let mut like = 1.0;
        for &(cvt, cw, obs) in clusters {
            let u = dir(obs.polar, obs.azimuth);
            let sigma = sigma_of(obs.range);
            let mut sum = 0.0;
            for (a, c) in cvt.iter().enumerate() {
                let los = obs.range - c[3];
                let t = [c[0] - los * u[0], c[1] - los * u[1]];
                let d2 = (t[0] - r[0]).powi(2) + (t[1] - r[1]).powi(2);
                sum += cw[a] * kernel(d2, sigma);
            }
            like *= sum;
        }
        w.push(prior[j] * like);
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Systematic resampling from a single uniform draw `u ∈ [0, 1)`.
pub fn oracle_systematic<T: Copy>(states: &[T], weights: &[f64], u: f64) -> Vec<T> {
    let n = states.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let step = 1.0 / n as f64;
    (0..n)
        .map(|k| {
            let pos = u * step + k as f64 * step;
            let i = cdf.iter().position(|&c| pos < c).unwrap_or(n - 1);
            states[i]
        })
        .collect()
}

pub fn observation_between(rx: &Vector3<f64>, vt: &Vector3<f64>, path: u32) -> PathObservation {
    let off = vt - rx;
    let (polar, azimuth) = direction_angles(&off);
    PathObservation {
        polar,
        azimuth,
        range: off.norm(),
        path_id: PathId(path),
        vehicle_id: 0,
        path_index: path as usize + 1,
    }
}

fn vec2s(p: &VehicleParticles) -> Vec<[f64; 2]> {
    p.states.iter().map(|s| [s.x, s.y]).collect()
}

fn vec4s(p: &CvtParticles) -> Vec<[f64; 4]> {
    p.states.iter().map(|s| [s[0], s[1], s[2], s[3]]).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation between the library and the oracle over one filter
/// slot: motion, CVT update/resample/estimate, vehicle
/// update/resample/estimate. Vehicles see both clusters, each with
/// `n` particles.
pub fn filter_slot_deviation(seed: u64, n: usize, kernel: KernelScale) -> f64 {
    let mut rng = stream(seed, &[]);
    let vts = [Vector3::new(70.0, 0.0, 8.0), Vector3::new(70.0, 32.0, 8.0)];
    let heights = [0.0, 1.5];
    let truth = [Vector2::new(30.0, -6.0), Vector2::new(110.0, 10.0)];
    let cfg = LikelihoodConfig { kernel };
    let sigma_of = move |range: f64| kernel.sigma(range);
    let noise = NoiseConfig::noiseless();
    let cmd = MotionCommand {
        v_prev: Vector2::new(10.0, 0.0),
        v_curr: Vector2::new(9.5, 0.4),
        dt: 0.1,
    };
    let shift = [(cmd.v_prev.x + cmd.v_curr.x) * 0.05, (cmd.v_prev.y + cmd.v_curr.y) * 0.05];

    let mut jitter = |s: f64| rng.random_range(-s..s);
    let mut vehicles: Vec<VehicleParticles> = truth
        .iter()
        .map(|t| {
            let mut set = ParticleSet::uniform(
                (0..n).map(|_| t + Vector2::new(jitter(0.8), jitter(0.8))).collect(),
            );
            let raw: Vec<f64> = (0..n).map(|_| 0.2 + jitter(0.1).abs()).collect();
            let total: f64 = raw.iter().sum();
            set.weights = raw.iter().map(|w| w / total).collect();
            set
        })
        .collect();
    let mut clusters: Vec<CvtParticles> = vts
        .iter()
        .map(|vt| {
            ParticleSet::uniform(
                (0..n)
                    .map(|_| cvt_state(&(vt + Vector3::new(jitter(0.6), jitter(0.6), jitter(0.3))), 0.0))
                    .collect(),
            )
        })
        .collect();
    // observations from the post-motion truth, slightly perturbed
    let obs: Vec<Vec<PathObservation>> = (0..2)
        .map(|m| {
            let rx = Vector3::new(truth[m].x + shift[0], truth[m].y + shift[1], heights[m]);
            (0..2)
                .map(|u| {
                    let mut o = observation_between(&rx, &vts[u], u as u32);
                    o.range += jitter(0.1);
                    o.polar += jitter(0.01);
                    o.vehicle_id = m;
                    o
                })
                .collect()
        })
        .collect();
    drop(jitter);

    // motion
    let mut oracle_v: Vec<Vec<[f64; 2]>> = vehicles
        .iter()
        .map(|v| vec2s(v).iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect())
        .collect();
    let mut oracle_vw: Vec<Vec<f64>> = vehicles.iter().map(|v| v.weights.clone()).collect();
    for v in vehicles.iter_mut() {
        propagate_vehicle(v, &cmd, &noise, VelocityNoiseModel::HeadingRelative, &mut rng);
    }
    let mut dev: f64 = 0.0;
    for (v, o) in vehicles.iter().zip(&oracle_v) {
        for (s, p) in v.states.iter().zip(o) {
            dev = dev.max((s.x - p[0]).abs()).max((s.y - p[1]).abs());
        }
    }

    // CVT phase
    let mut oracle_c: Vec<Vec<[f64; 4]>> = clusters.iter().map(vec4s).collect();
    let mut oracle_cest = Vec::new();
    for u in 0..2 {
        let links: Vec<(&[[f64; 2]], &[f64], &PathObservation, f64)> = (0..2)
            .map(|m| (oracle_v[m].as_slice(), oracle_vw[m].as_slice(), &obs[m][u], heights[m]))
            .collect();
        let prior = clusters[u].weights.clone();
        let expect = oracle_cvt_weights(&oracle_c[u], &prior, &links, &sigma_of);

        let lib_links: Vec<VehicleLink<'_>> = (0..2)
            .map(|m| VehicleLink {
                particles: &vehicles[m],
                observation: &obs[m][u],
                antenna_height: heights[m],
            })
            .collect();
        cvt_weight_update(&mut clusters[u], &lib_links, &cfg);
        dev = dev.max(max_abs(&clusters[u].weights, &expect));

        let draw: f64 = rng.clone().random();
        oracle_c[u] = oracle_systematic(&oracle_c[u], &expect, draw);
        resample(&mut clusters[u], ResamplePolicy::Always, &mut rng);
        let est = clusters[u].estimate();
        let mut mean = [0.0; 4];
        for c in &oracle_c[u] {
            for k in 0..4 {
                mean[k] += c[k] / n as f64;
            }
        }
        for k in 0..4 {
            dev = dev.max((est[k] - mean[k]).abs() / mean[k].abs().max(1.0));
        }
        oracle_cest.push(mean);
    }
    let uniform = vec![1.0 / n as f64; n];

    // vehicle phase
    for m in 0..2 {
        let links: Vec<(&[[f64; 4]], &[f64], &PathObservation)> = (0..2)
            .map(|u| (oracle_c[u].as_slice(), uniform.as_slice(), &obs[m][u]))
            .collect();
        let expect = oracle_vehicle_weights(&oracle_v[m], &oracle_vw[m], &links, &sigma_of);
        let lib_links: Vec<CvtLink<'_>> = (0..2)
            .map(|u| CvtLink {
                particles: &clusters[u],
                observation: &obs[m][u],
            })
            .collect();
        vehicle_weight_update(&mut vehicles[m], &lib_links, &cfg);
        dev = dev.max(max_abs(&vehicles[m].weights, &expect));

        let draw: f64 = rng.clone().random();
        oracle_v[m] = oracle_systematic(&oracle_v[m], &expect, draw);
        oracle_vw[m] = uniform.clone();
        resample(&mut vehicles[m], ResamplePolicy::Always, &mut rng);
        let est = vehicles[m].estimate();
        let mut mean = [0.0; 2];
        for p in &oracle_v[m] {
            mean[0] += p[0] / n as f64;
            mean[1] += p[1] / n as f64;
        }
        for k in 0..2 {
            dev = dev.max((est[k] - mean[k]).abs() / mean[k].abs().max(1.0));
        }
    }
    dev
}

// ----------------------------------------------------- affinity propagation

/// Exemplar set maximizing net similarity: preferences of the exemplars plus
/// every other point's similarity to its best exemplar. Returns the head of
/// every point.
pub fn brute_force_exemplars(s: &SimilarityMatrix) -> Vec<usize> {
    let n = s.len();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 1u32..(1 << n) {
        let exemplars: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut net = 0.0;
        let mut heads = vec![0; n];
        for i in 0..n {
            if mask & (1 << i) != 0 {
                net += s.get(i, i);
                heads[i] = i;
            } else {
                let (e, v) = exemplars
                    .iter()
                    .map(|&e| (e, s.get(i, e)))
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                net += v;
                heads[i] = e;
            }
        }
        if net > best.0 {
            best = (net, heads);
        }
    }
    best.1
}

/// Canonical partition: groups as sorted index lists, sorted.
pub fn partition(heads: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &h) in heads.iter().enumerate() {
        groups.entry(h).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// 2 or 3 groups of 2–3 points, at most 6 points, group centers 50–112 m
/// apart, 0.5 m spread inside a group. Singleton groups are excluded: with a
/// median preference they make the exemplar objective an exact tie.
pub fn separated_instance(rng: &mut SimRng) -> Vec<Vector3<f64>> {
    let groups = rng.random_range(2..=3usize);
    let mut sizes = vec![2; groups];
    for s in sizes.iter_mut() {
        if rng.random_bool(0.5) {
            *s = 3;
        }
    }
    while sizes.iter().sum::<usize>() > 6 {
        let i = sizes.iter().position(|&s| s == 3).expect("only 3s push past 6");
        sizes[i] = 2;
    }
    let mut pts = Vec::new();
    for (g, &size) in sizes.iter().enumerate() {
        let center = Vector3::new(100.0 * g as f64, 50.0 * (g % 2) as f64, 0.0);
        for _ in 0..size {
            pts.push(
                center
                    + Vector3::new(
                        rng.random_range(-0.25..0.25),
                        rng.random_range(-0.25..0.25),
                        rng.random_range(-0.25..0.25),
                    ),
            );
        }
    }
    pts
}

/// Fraction of `count` random instances where AP reproduces the
/// brute-force partition.
pub fn ap_agreement(seed: u64, count: usize) -> f64 {
    let mut rng = stream(seed, &[]);
    let cfg = ApConfig::default();
    let mut hits = 0;
    for _ in 0..count {
        let pts = separated_instance(&mut rng);
        let s = build_similarity(&pts, Preference::Median);
        let ap = affinity_propagation(&s, &cfg);
        if partition(&ap.heads()) == partition(&brute_force_exemplars(&s)) {
            hits += 1;
        }
    }
    hits as f64 / count as f64
}

// --------------------------------------------------------------- geometry

pub fn street_scene() -> Scene {
    let facades = vec![
        ReflectorPlane::facade_y(0, -16.0, (0.0, 140.0), (0.0, 20.0)).unwrap(),
        ReflectorPlane::facade_y(1, 16.0, (0.0, 140.0), (0.0, 20.0)).unwrap(),
        ReflectorPlane::new(
            2,
            Vector3::new(140.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Extent {
                min: [140.0, -16.0, 0.0],
                max: [140.0, 16.0, 20.0],
            },
        )
        .unwrap(),
    ];
    Scene::new(
        Vector3::new(70.0, 0.0, 8.0),
        facades,
        RoadExtent {
            x: (0.0, 140.0),
            y: (-16.0, 16.0),
        },
        LaneGeometry { count: 8, width: 4.0 },
    )
    .unwrap()
}

/// Largest distance between a back-projected and a true VT over random
/// vehicle poses with noiseless observations, plus the number of paths
/// checked.
pub fn round_trip_error(seed: u64, poses: usize) -> (f64, usize) {
    let scene = street_scene();
    let mut rng = stream(seed, &[]);
    let noise = NoiseConfig::noiseless();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..poses {
        let v = VehicleState {
            position: Vector2::new(rng.random_range(0.5..139.5), rng.random_range(-15.5..15.5)),
            velocity: Vector2::zeros(),
            antenna_height: rng.random_range(0.0..2.0),
        };
        let paths = trace_paths(&scene, &v);
        for o in observe(&paths, 0, &noise, &mut rng) {
            let est = back_project_vt(&v.antenna(), &o, 0.0).unwrap();
            let truth = scene.true_vt(o.path_id).unwrap().position;
            worst = worst.max((est - truth).norm());
            checked += 1;
        }
    }
    (worst, checked)
}
