//! One simulation run: ground truth, observations, path lifecycle,
//! re-clustering, and the two filter phases, slot by slot.
//!
//! Per slot the order is fixed:
//!
//! 1. move the true vehicles, draw odometry, predict vehicle particles,
//!    trace and observe paths;
//! 2. open a singleton cluster for every newly seen path and drop lost paths
//!    from their clusters (empty clusters retire);
//! 3. re-cluster all current VT estimates and carry cluster ids over;
//! 4. CVT phase: weight update against the vehicle particles, resample,
//!    estimate;
//! 5. vehicle phase: weight update against the fresh CVT particles,
//!    resample, estimate.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::clustering::{
    affinity_propagation, build_similarity, carry_over_identity, form_clusters, ApConfig,
    ClusterId, CvtCluster, IdAllocator, Member, VtEstimate,
};
use crate::filters::{
    cvt_position, cvt_weight_update, init_cvt_particles, init_vehicle_particles,
    perturb_velocity, propagate_cvt, propagate_vehicle, resample, vehicle_weight_update,
    CvtLink, CvtParticles, CvtState, LikelihoodConfig, MotionCommand, ResamplePolicy,
    UpdateOutcome, VehicleLink, VehicleParticles, VelocityNoiseModel,
};
use crate::geometry::{lift, trace_paths, PathId, Scene, VehicleState};
use crate::measurement::{back_project_vt, observe, truncated_gaussian, NoiseConfig, PathObservation};
use crate::rng::{stream, SimRng};
use crate::{Error, Result};

/// Estimator settings shared by every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub particles_vehicle: usize,
    pub particles_cvt: usize,
    /// Slot length, seconds.
    pub dt: f64,
    /// Per-axis standard deviation of a new CVT particle cloud, meters.
    pub cvt_spread: f64,
    /// `None` derives a range-scaled kernel from the noise levels.
    pub likelihood: Option<LikelihoodConfig>,
    pub ap: ApConfig,
    pub resample: ResamplePolicy,
    /// Per-axis CVT jitter applied every slot, meters. 0 disables it.
    pub roughening: f64,
    pub velocity_noise: VelocityNoiseModel,
    /// Divide `cvt_spread` by the square root of the member count.
    pub spread_per_member: bool,
    /// A cluster whose particles have never been weighted is re-drawn
    /// around the full member mean when its membership changes.
    pub refresh_unweighted: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            particles_vehicle: 120,
            particles_cvt: 120,
            dt: 0.1,
            cvt_spread: DEFAULT_CVT_SPREAD,
            likelihood: None,
            ap: ApConfig::default(),
            resample: ResamplePolicy::Always,
            roughening: 0.0,
            velocity_noise: VelocityNoiseModel::default(),
            spread_per_member: true,
            refresh_unweighted: true,
        }
    }
}

/// The true VT falls inside the initial cloud's bounding box in at least 99%
/// of trials at the default noise levels (the smallest 0.5 m grid value that
/// does is 3.5, right at the edge); see the `cvt_spread_calibration` test.
pub const DEFAULT_CVT_SPREAD: f64 = 4.0;

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles_vehicle == 0 || self.particles_cvt == 0 {
            return Err(Error::Config("particle counts must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.cvt_spread >= 0.0) || !(self.roughening >= 0.0) {
            return Err(Error::Config("cvt_spread and roughening must be >= 0".into()));
        }
        if let ResamplePolicy::EssBelow(f) = self.resample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("ESS threshold must lie in (0, 1], got {f}")));
            }
        }
        if let Some(l) = &self.likelihood {
            l.validate()?;
        }
        self.ap.validate()
    }

    /// Initial cloud spread for a cluster of `members` paths.
    pub fn spread_for(&self, members: usize) -> f64 {
        if self.spread_per_member && members > 1 {
            self.cvt_spread / (members as f64).sqrt()
        } else {
            self.cvt_spread
        }
    }

    pub fn likelihood_for(&self, noise: &NoiseConfig) -> LikelihoodConfig {
        self.likelihood
            .unwrap_or_else(|| LikelihoodConfig::from_noise(noise))
    }
}

/// Initial ground truth for every vehicle of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub vehicles: Vec<VehicleState>,
}

#[derive(Debug, Clone)]
pub struct VehicleTrack {
    pub id: usize,
    pub truth: VehicleState,
    pub gps_fix: Vector2<f64>,
    pub particles: VehicleParticles,
    pub estimate: Vector2<f64>,
    /// Odometry velocity of the latest slot.
    pub measured_velocity: Vector2<f64>,
    pub observations: Vec<PathObservation>,
}

impl VehicleTrack {
    pub fn observation(&self, path: PathId) -> Option<&PathObservation> {
        self.observations.iter().find(|o| o.path_id == path)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterTrack {
    pub cluster: CvtCluster,
    pub particles: CvtParticles,
    pub estimate: CvtState,
    /// The particles went through at least one weight update.
    pub weighted: bool,
}

impl ClusterTrack {
    pub fn id(&self) -> ClusterId {
        self.cluster.cluster_id.expect("tracked clusters always carry an id")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStatus {
    pub active: bool,
    pub cluster: Option<ClusterId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    PathAppeared { slot: usize, vehicle: usize, path: PathId },
    PathLost { slot: usize, vehicle: usize, path: PathId },
    ClusterRetired { slot: usize, cluster: ClusterId },
    /// A vehicle had no visible path and was propagated by odometry only.
    NoPaths { slot: usize, vehicle: usize },
    CvtDegenerate { slot: usize, cluster: ClusterId },
    VehicleDegenerate { slot: usize, vehicle: usize },
    ApUnconverged { slot: usize, points: usize },
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub slot: usize,
    pub vehicles: Vec<VehicleTrack>,
    pub clusters: Vec<ClusterTrack>,
    pub registry: BTreeMap<(usize, PathId), PathStatus>,
    pub ids: IdAllocator,
    pub events: Vec<Event>,
}

impl SimulationState {
    /// Vehicles observing cluster `u`.
    pub fn vehicles_of(&self, u: ClusterId) -> BTreeSet<usize> {
        self.clusters
            .iter()
            .filter(|c| c.id() == u)
            .flat_map(|c| c.cluster.members.iter().map(|m| m.vehicle_id))
            .collect()
    }

    /// Clusters holding a path of vehicle `m`.
    pub fn clusters_of(&self, m: usize) -> BTreeSet<ClusterId> {
        self.clusters
            .iter()
            .filter(|c| c.cluster.member_of(m).is_some())
            .map(ClusterTrack::id)
            .collect()
    }

    /// Structural invariants that must hold after every slot.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen: BTreeMap<(usize, PathId), ClusterId> = BTreeMap::new();
        for c in &self.clusters {
            let mut vehicles = BTreeSet::new();
            for m in &c.cluster.members {
                if !vehicles.insert(m.vehicle_id) {
                    return Err(format!("cluster {} has two paths of vehicle {}", c.id(), m.vehicle_id));
                }
                if seen.insert(m.key(), c.id()).is_some() {
                    return Err(format!("path {:?} belongs to two clusters", m.key()));
                }
            }
            if c.cluster.members.is_empty() {
                return Err(format!("cluster {} is empty", c.id()));
            }
            let sum = c.particles.weight_sum();
            if (sum - 1.0).abs() > 1e-9 || c.particles.weights.iter().any(|w| *w < 0.0) {
                return Err(format!("cluster {} weights sum to {sum}", c.id()));
            }
        }
        let mut paths = 0;
        for v in &self.vehicles {
            paths += v.observations.len();
            for o in &v.observations {
                if !seen.contains_key(&(v.id, o.path_id)) {
                    return Err(format!("active path {:?} of vehicle {} is unclustered", o.path_id, v.id));
                }
            }
            let sum = v.particles.weight_sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("vehicle {} weights sum to {sum}", v.id));
            }
        }
        if seen.len() != paths {
            return Err("clusters hold paths that are not currently observed".into());
        }
        if self.clusters.len() > paths {
            return Err(format!("{} clusters for {paths} paths", self.clusters.len()));
        }
        for c in &self.clusters {
            for m in self.vehicles_of(c.id()) {
                if !self.clusters_of(m).contains(&c.id()) {
                    return Err(format!("V(u)/C(m) mismatch for cluster {} vehicle {m}", c.id()));
                }
            }
        }
        for v in &self.vehicles {
            for u in self.clusters_of(v.id) {
                if !self.vehicles_of(u).contains(&v.id) {
                    return Err(format!("C(m)/V(u) mismatch for vehicle {} cluster {u}", v.id));
                }
            }
        }
        Ok(())
    }
}

/// Draws GPS fixes and initial particles; no clusters exist yet.
pub fn initialize(
    fleet: &FleetSpec,
    noise: &NoiseConfig,
    cfg: &EstimatorConfig,
    rng: &mut SimRng,
) -> SimulationState {
    let vehicles = fleet
        .vehicles
        .iter()
        .enumerate()
        .map(|(id, truth)| {
            let gps_fix = Vector2::new(
                truth.position.x + truncated_gaussian(rng, noise.sigma_eps, noise.truncation),
                truth.position.y + truncated_gaussian(rng, noise.sigma_eps, noise.truncation),
            );
            let particles = init_vehicle_particles(&gps_fix, noise, cfg.particles_vehicle, rng);
            let measured_velocity = perturb_velocity(&truth.velocity, noise, cfg.velocity_noise, rng);
            VehicleTrack {
                id,
                truth: truth.clone(),
                gps_fix,
                estimate: particles.estimate(),
                particles,
                measured_velocity,
                observations: Vec::new(),
            }
        })
        .collect();
    SimulationState {
        slot: 0,
        vehicles,
        clusters: Vec::new(),
        registry: BTreeMap::new(),
        ids: IdAllocator::default(),
        events: Vec::new(),
    }
}

/// Advances the state by one slot.
pub fn step(
    state: &mut SimulationState,
    scene: &Scene,
    noise: &NoiseConfig,
    cfg: &EstimatorConfig,
    rng: &mut SimRng,
) {
    let slot = state.slot + 1;
    let likelihood = cfg.likelihood_for(noise);

    // 1. truth, odometry, prediction, observation
    let mut predicted = Vec::with_capacity(state.vehicles.len());
    for v in state.vehicles.iter_mut() {
        v.truth.position += v.truth.velocity * cfg.dt;
        let measured = perturb_velocity(&v.truth.velocity, noise, cfg.velocity_noise, rng);
        let cmd = MotionCommand {
            v_prev: v.measured_velocity,
            v_curr: measured,
            dt: cfg.dt,
        };
        v.measured_velocity = measured;
        propagate_vehicle(&mut v.particles, &cmd, noise, cfg.velocity_noise, rng);
        predicted.push(v.particles.estimate());

        v.observations = if scene.road.contains(&v.truth.position) {
            observe(&trace_paths(scene, &v.truth), v.id, noise, rng)
        } else {
            Vec::new()
        };
    }

    // 2. path lifecycle
    update_path_lifecycle(state, slot, &predicted, cfg, noise, rng);

    // 3. re-clustering
    recluster(state, slot, &predicted, cfg, noise, rng);

    // 4. CVT phase
    {
        let vehicles = &state.vehicles;
        for track in state.clusters.iter_mut() {
            propagate_cvt(&mut track.particles, cfg.roughening, noise.truncation, rng);
            let links: Vec<VehicleLink<'_>> = track
                .cluster
                .members
                .iter()
                .map(|m| {
                    let v = &vehicles[m.vehicle_id];
                    VehicleLink {
                        particles: &v.particles,
                        observation: v
                            .observation(m.path_id)
                            .expect("cluster members are observed this slot"),
                        antenna_height: v.truth.antenna_height,
                    }
                })
                .collect();
            if cvt_weight_update(&mut track.particles, &links, &likelihood) == UpdateOutcome::Degenerate {
                state.events.push(Event::CvtDegenerate {
                    slot,
                    cluster: track.id(),
                });
            }
            track.weighted = true;
            resample(&mut track.particles, cfg.resample, rng);
            track.estimate = track.particles.estimate();
        }
    }

    // 5. vehicle phase
    {
        let clusters = &state.clusters;
        for (v, pred) in state.vehicles.iter_mut().zip(&predicted) {
            let links: Vec<CvtLink<'_>> = clusters
                .iter()
                .filter_map(|c| {
                    let m = c.cluster.member_of(v.id)?;
                    Some(CvtLink {
                        particles: &c.particles,
                        observation: v.observation(m.path_id)?,
                    })
                })
                .collect();
            if links.is_empty() {
                debug!("slot {slot}: vehicle {} has no paths, odometry only", v.id);
                state.events.push(Event::NoPaths { slot, vehicle: v.id });
                v.estimate = *pred;
                continue;
            }
            let mut particles = v.particles.clone();
            if vehicle_weight_update(&mut particles, &links, &likelihood) == UpdateOutcome::Degenerate {
                state.events.push(Event::VehicleDegenerate { slot, vehicle: v.id });
            }
            resample(&mut particles, cfg.resample, rng);
            v.estimate = particles.estimate();
            v.particles = particles;
        }
    }

    state.slot = slot;
}

fn receiver(v: &VehicleTrack, predicted: &Vector2<f64>) -> Vector3<f64> {
    lift(predicted, v.truth.antenna_height)
}

fn update_path_lifecycle(
    state: &mut SimulationState,
    slot: usize,
    predicted: &[Vector2<f64>],
    cfg: &EstimatorConfig,
    noise: &NoiseConfig,
    rng: &mut SimRng,
) {
    let current: BTreeMap<(usize, PathId), usize> = state
        .vehicles
        .iter()
        .flat_map(|v| v.observations.iter().map(|o| ((v.id, o.path_id), o.path_index)))
        .collect();

    // lost paths leave their clusters
    let lost: Vec<(usize, PathId)> = state
        .registry
        .iter()
        .filter(|(k, s)| s.active && !current.contains_key(k))
        .map(|(k, _)| *k)
        .collect();
    for key in lost {
        let status = state.registry.get_mut(&key).expect("listed from registry");
        status.active = false;
        let owner = status.cluster.take();
        state.events.push(Event::PathLost {
            slot,
            vehicle: key.0,
            path: key.1,
        });
        if let Some(track) = owner.and_then(|id| state.clusters.iter_mut().find(|c| c.id() == id)) {
            track.cluster.members.retain(|m| m.key() != key);
        }
    }
    let mut retired = Vec::new();
    state.clusters.retain(|c| {
        let keep = !c.cluster.members.is_empty();
        if !keep {
            retired.push(c.id());
        }
        keep
    });
    for cluster in retired {
        state.events.push(Event::ClusterRetired { slot, cluster });
    }

    // refresh slot-local path indices
    for track in state.clusters.iter_mut() {
        for m in track.cluster.members.iter_mut() {
            if let Some(&idx) = current.get(&m.key()) {
                m.path_index = idx;
            }
        }
    }

    // new paths open singleton clusters
    for (&(vehicle, path), &path_index) in &current {
        if state.registry.get(&(vehicle, path)).is_some_and(|s| s.active) {
            continue;
        }
        let v = &state.vehicles[vehicle];
        let obs = v.observation(path).expect("key comes from observations");
        let position = back_project_vt(&receiver(v, &predicted[vehicle]), obs, 0.0)
            .expect("zero additional distance is always admissible");
        let id = state.ids.fresh();
        let estimate = VtEstimate {
            member: Member {
                vehicle_id: vehicle,
                path_id: path,
                path_index,
            },
            position,
            additional_distance: 0.0,
        };
        let mut cluster = CvtCluster::from_estimates(&[&estimate]);
        cluster.cluster_id = Some(id);
        let particles = init_cvt_particles(
            &[(position, 0.0)],
            cfg.cvt_spread,
            noise.truncation,
            cfg.particles_cvt,
            rng,
        );
        state.clusters.push(ClusterTrack {
            cluster,
            estimate: particles.estimate(),
            particles,
            weighted: false,
        });
        state.registry.insert(
            (vehicle, path),
            PathStatus {
                active: true,
                cluster: Some(id),
            },
        );
        state.events.push(Event::PathAppeared { slot, vehicle, path });
    }
}

fn recluster(
    state: &mut SimulationState,
    slot: usize,
    predicted: &[Vector2<f64>],
    cfg: &EstimatorConfig,
    noise: &NoiseConfig,
    rng: &mut SimRng,
) {
    let owner_d: BTreeMap<ClusterId, f64> = state
        .clusters
        .iter()
        .map(|c| (c.id(), c.estimate[3]))
        .collect();

    let mut estimates = Vec::new();
    for v in &state.vehicles {
        let rx = receiver(v, &predicted[v.id]);
        for obs in &v.observations {
            let d = state
                .registry
                .get(&(v.id, obs.path_id))
                .and_then(|s| s.cluster)
                .and_then(|id| owner_d.get(&id).copied())
                .unwrap_or(0.0)
                .clamp(0.0, obs.range);
            let position = back_project_vt(&rx, obs, d).expect("d is clamped to the range");
            estimates.push(VtEstimate {
                member: Member {
                    vehicle_id: v.id,
                    path_id: obs.path_id,
                    path_index: obs.path_index,
                },
                position,
                additional_distance: d,
            });
        }
    }
    if estimates.is_empty() {
        return;
    }

    let points: Vec<Vector3<f64>> = estimates.iter().map(|e| e.position).collect();
    let ap = affinity_propagation(&build_similarity(&points, cfg.ap.preference), &cfg.ap);
    if !ap.converged {
        debug!("slot {slot}: affinity propagation did not settle on {} points", points.len());
        state.events.push(Event::ApUnconverged {
            slot,
            points: points.len(),
        });
    }
    let formed = form_clusters(&ap.heads(), &estimates);

    // Previous clusters are matched against their filter estimates.
    let prev: Vec<CvtCluster> = state
        .clusters
        .iter()
        .map(|t| {
            let mut c = t.cluster.clone();
            c.position = cvt_position(&t.estimate);
            c
        })
        .collect();
    let carried = carry_over_identity(&prev, formed, &mut state.ids);

    let mut old: BTreeMap<ClusterId, ClusterTrack> =
        state.clusters.drain(..).map(|t| (t.id(), t)).collect();
    let mut tracks = Vec::with_capacity(carried.clusters.len());
    for cluster in carried.clusters {
        let id = cluster.cluster_id.expect("carry-over assigns ids");
        let inherited = old.remove(&id).filter(|t| {
            t.weighted || !cfg.refresh_unweighted || t.cluster.members == cluster.members
        });
        let track = match inherited {
            Some(t) => ClusterTrack {
                cluster,
                particles: t.particles,
                estimate: t.estimate,
                weighted: t.weighted,
            },
            None => {
                let members: Vec<(Vector3<f64>, f64)> = cluster
                    .members
                    .iter()
                    .map(|m| {
                        let e = estimates
                            .iter()
                            .find(|e| e.member.key() == m.key())
                            .expect("members come from the estimates");
                        (e.position, e.additional_distance)
                    })
                    .collect();
                let particles = init_cvt_particles(
                    &members,
                    cfg.spread_for(members.len()),
                    noise.truncation,
                    cfg.particles_cvt,
                    rng,
                );
                ClusterTrack {
                    cluster,
                    estimate: particles.estimate(),
                    particles,
                    weighted: false,
                }
            }
        };
        for m in &track.cluster.members {
            state.registry.insert(
                m.key(),
                PathStatus {
                    active: true,
                    cluster: Some(id),
                },
            );
        }
        tracks.push(track);
    }
    for id in carried.retired {
        old.remove(&id);
        state.events.push(Event::ClusterRetired { slot, cluster: id });
    }
    if !old.is_empty() {
        warn!("slot {slot}: {} cluster tracks dropped without retirement", old.len());
    }
    state.clusters = tracks;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Vehicle,
    Cvt,
}

impl EntityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityKind::Vehicle => "vehicle",
            EntityKind::Cvt => "cvt",
        }
    }
}

/// Truth versus estimate for one entity at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub slot: usize,
    pub kind: EntityKind,
    pub entity_id: u64,
    pub truth: Vector3<f64>,
    pub estimate: Vector3<f64>,
    /// Planar error for vehicles, 3-D error for CVTs.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
    pub events: Vec<Event>,
}

impl RunLog {
    pub fn slot_records(&self, slot: usize, kind: EntityKind) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(move |r| r.slot == slot && r.kind == kind)
    }

    pub fn mean_error(&self, slot: usize, kind: EntityKind) -> Option<f64> {
        let (sum, n) = self
            .slot_records(slot, kind)
            .fold((0.0, 0usize), |(s, n), r| (s + r.error, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Appends the truth-versus-estimate records of the current slot.
pub fn log_state(state: &SimulationState, scene: &Scene, log: &mut RunLog) {
    for v in &state.vehicles {
        let h = v.truth.antenna_height;
        log.records.push(LogRecord {
            slot: state.slot,
            kind: EntityKind::Vehicle,
            entity_id: v.id as u64,
            truth: lift(&v.truth.position, h),
            estimate: lift(&v.estimate, h),
            error: (v.estimate - v.truth.position).norm(),
        });
    }
    for c in &state.clusters {
        let Some(truth) = majority_path(&c.cluster).and_then(|p| scene.true_vt(p)) else {
            continue;
        };
        let estimate = cvt_position(&c.estimate);
        log.records.push(LogRecord {
            slot: state.slot,
            kind: EntityKind::Cvt,
            entity_id: c.id().0,
            truth: truth.position,
            error: (estimate - truth.position).norm(),
            estimate,
        });
    }
}

/// Most frequent ground-truth path among the members; ties go to the lower id.
fn majority_path(c: &CvtCluster) -> Option<PathId> {
    let mut counts: BTreeMap<PathId, usize> = BTreeMap::new();
    for m in &c.members {
        *counts.entry(m.path_id).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(p, _)| p)
}

/// Full run of `slots` slots. All randomness derives from `seed`.
pub fn run(
    scene: &Scene,
    fleet: &FleetSpec,
    noise: &NoiseConfig,
    cfg: &EstimatorConfig,
    slots: usize,
    seed: u64,
) -> Result<RunLog> {
    scene.validate()?;
    noise.validate()?;
    cfg.validate()?;
    if fleet.vehicles.is_empty() {
        return Err(Error::Config("fleet has no vehicles".into()));
    }
    let mut rng = stream(seed, &[]);
    let mut state = initialize(fleet, noise, cfg, &mut rng);
    let mut log = RunLog::default();
    log_state(&state, scene, &mut log);
    for _ in 0..slots {
        step(&mut state, scene, noise, cfg, &mut rng);
        log_state(&state, scene, &mut log);
    }
    log.events = state.events;
    Ok(log)
}
