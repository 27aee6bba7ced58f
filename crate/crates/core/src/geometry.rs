//! Ground-truth scene: base station, vertical facades and vehicle poses, with
//! exact single-bounce ray geometry.
//!
//! Angles follow the receiver-side convention used everywhere in the crate:
//! `polar` is measured in the x–y plane from +x, `azimuth` from +z, and the
//! unit direction is `(cos polar · sin azimuth, sin polar · sin azimuth, cos azimuth)`.

use std::fmt;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-12;
const EXTENT_TOL: f64 = 1e-9;

/// Stable identity of a propagation path, shared by every vehicle that sees
/// the same transmitter image. `0` is the line-of-sight path; reflector `k`
/// yields `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathId(pub u32);

impl PathId {
    pub const LOS: PathId = PathId(0);

    pub fn reflection(plane_id: u32) -> Self {
        PathId(plane_id + 1)
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unit vector for a (polar, azimuth) pair.
pub fn unit_direction(polar: f64, azimuth: f64) -> Vector3<f64> {
    let (sp, cp) = polar.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vector3::new(cp * sa, sp * sa, ca)
}

/// Inverse of [`unit_direction`] for any non-zero vector.
pub fn direction_angles(v: &Vector3<f64>) -> (f64, f64) {
    let horizontal = v.x.hypot(v.y);
    (v.y.atan2(v.x), horizontal.atan2(v.z))
}

/// Axis-aligned bounds of a reflector rectangle. For a vertical plane the
/// plane ∩ box is exactly the facade rectangle whose corners span the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Extent {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - EXTENT_TOL && p[i] <= self.max[i] + EXTENT_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectorPlane {
    pub id: u32,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub extent: Extent,
}

impl ReflectorPlane {
    pub fn new(id: u32, point: Vector3<f64>, normal: Vector3<f64>, extent: Extent) -> Result<Self> {
        let norm = normal.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Scene(format!("reflector {id} has a degenerate normal")));
        }
        let plane = ReflectorPlane {
            id,
            point,
            normal: normal / norm,
            extent,
        };
        plane.validate()?;
        Ok(plane)
    }

    /// Facade parallel to the x axis at `y`, facing the road at `y = 0`.
    pub fn facade_y(id: u32, y: f64, x_range: (f64, f64), z_range: (f64, f64)) -> Result<Self> {
        let normal = Vector3::new(0.0, -y.signum(), 0.0);
        Self::new(
            id,
            Vector3::new(x_range.0, y, z_range.0),
            normal,
            Extent {
                min: [x_range.0, y, z_range.0],
                max: [x_range.1, y, z_range.1],
            },
        )
    }

    fn validate(&self) -> Result<()> {
        if (self.normal.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Scene(format!("reflector {} normal is not unit length", self.id)));
        }
        if self.normal.z.abs() > UNIT_TOL {
            return Err(Error::Scene(format!("reflector {} is not vertical", self.id)));
        }
        Ok(())
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }

    /// Specular mirror image of `p` across the plane.
    pub fn mirror(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - 2.0 * self.signed_distance(p) * self.normal
    }

    /// Intersection of the segment `a → b` with the (infinite) plane.
    fn segment_intersection(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Vector3<f64>> {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        if da * db > 0.0 || da == db {
            return None;
        }
        let t = da / (da - db);
        Some(a + t * (b - a))
    }
}

/// Where a virtual transmitter comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VtOrigin {
    Los,
    Reflection(u32),
    Scatter([f64; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTransmitter {
    pub position: Vector3<f64>,
    pub additional_distance: f64,
    pub origin: VtOrigin,
}

/// Mirror of the base station across `plane`.
pub fn mirror_vt(bs: &Vector3<f64>, plane: &ReflectorPlane) -> VirtualTransmitter {
    VirtualTransmitter {
        position: plane.mirror(bs),
        additional_distance: 0.0,
        origin: VtOrigin::Reflection(plane.id),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadExtent {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl RoadExtent {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x.0 && p.x <= self.x.1 && p.y >= self.y.0 && p.y <= self.y.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub count: usize,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub antenna_height: f64,
}

impl VehicleState {
    pub fn antenna(&self) -> Vector3<f64> {
        lift(&self.position, self.antenna_height)
    }
}

pub fn lift(p: &Vector2<f64>, height: f64) -> Vector3<f64> {
    Vector3::new(p.x, p.y, height)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bs_position: Vector3<f64>,
    pub reflectors: Vec<ReflectorPlane>,
    pub road: RoadExtent,
    pub lanes: LaneGeometry,
}

impl Scene {
    pub fn new(
        bs_position: Vector3<f64>,
        reflectors: Vec<ReflectorPlane>,
        road: RoadExtent,
        lanes: LaneGeometry,
    ) -> Result<Self> {
        let scene = Scene {
            bs_position,
            reflectors,
            road,
            lanes,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.road.contains(&self.bs_position.xy()) {
            return Err(Error::Scene("base station lies outside the road footprint".into()));
        }
        for plane in &self.reflectors {
            plane.validate()?;
        }
        let mut ids: Vec<u32> = self.reflectors.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Scene("duplicate reflector id".into()));
        }
        if self.lanes.count == 0 || self.lanes.width <= 0.0 {
            return Err(Error::Scene("lane geometry needs at least one lane of positive width".into()));
        }
        Ok(())
    }

    /// Center line `y` of lane `index`, counted from the lowest y.
    pub fn lane_center(&self, index: usize) -> f64 {
        let total = self.lanes.count as f64 * self.lanes.width;
        let mid = 0.5 * (self.road.y.0 + self.road.y.1);
        mid - 0.5 * total + (index as f64 + 0.5) * self.lanes.width
    }

    /// True transmitter image for a path id, if the scene can produce it.
    pub fn true_vt(&self, id: PathId) -> Option<VirtualTransmitter> {
        if id == PathId::LOS {
            return Some(VirtualTransmitter {
                position: self.bs_position,
                additional_distance: 0.0,
                origin: VtOrigin::Los,
            });
        }
        self.reflectors
            .iter()
            .find(|p| PathId::reflection(p.id) == id)
            .map(|p| mirror_vt(&self.bs_position, p))
    }
}

/// One ground-truth propagation path as seen from a vehicle antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedPath {
    pub path_id: PathId,
    pub vt: VirtualTransmitter,
    /// Total travelled distance: antenna-to-VT distance plus the VT's
    /// additional distance.
    pub range: f64,
    pub polar: f64,
    pub azimuth: f64,
    /// Specular reflection point, for reflected paths.
    pub bounce: Option<Vector3<f64>>,
}

/// LOS plus every single-bounce reflection whose specular point lies on the
/// finite facade. There are no occluders.
pub fn trace_paths(scene: &Scene, vehicle: &VehicleState) -> Vec<TracedPath> {
    let rx = vehicle.antenna();
    let bs = scene.bs_position;
    let mut paths = Vec::with_capacity(1 + scene.reflectors.len());

    let make = |path_id, vt: VirtualTransmitter, bounce| {
        let offset = vt.position - rx;
        let (polar, azimuth) = direction_angles(&offset);
        TracedPath {
            path_id,
            range: offset.norm() + vt.additional_distance,
            polar,
            azimuth,
            bounce,
            vt,
        }
    };

    paths.push(make(
        PathId::LOS,
        VirtualTransmitter {
            position: bs,
            additional_distance: 0.0,
            origin: VtOrigin::Los,
        },
        None,
    ));

    for plane in &scene.reflectors {
        // Transmitter and receiver must both be on the reflecting side.
        if plane.signed_distance(&bs) <= 0.0 || plane.signed_distance(&rx) <= 0.0 {
            continue;
        }
        let vt = mirror_vt(&bs, plane);
        let Some(bounce) = plane.segment_intersection(&rx, &vt.position) else {
            continue;
        };
        if plane.extent.contains(&bounce) {
            paths.push(make(PathId::reflection(plane.id), vt, Some(bounce)));
        }
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn facade(y: f64) -> ReflectorPlane {
        ReflectorPlane::facade_y(0, y, (0.0, 140.0), (0.0, 20.0)).unwrap()
    }

    fn default_scene() -> Scene {
        Scene::new(
            Vector3::new(70.0, 0.0, 8.0),
            vec![
                ReflectorPlane::facade_y(0, 16.0, (0.0, 140.0), (0.0, 20.0)).unwrap(),
                ReflectorPlane::facade_y(1, -16.0, (0.0, 140.0), (0.0, 20.0)).unwrap(),
            ],
            RoadExtent {
                x: (0.0, 140.0),
                y: (-16.0, 16.0),
            },
            LaneGeometry { count: 8, width: 4.0 },
        )
        .unwrap()
    }

    fn vehicle(x: f64, y: f64, h: f64) -> VehicleState {
        VehicleState {
            position: Vector2::new(x, y),
            velocity: Vector2::zeros(),
            antenna_height: h,
        }
    }

    #[test]
    fn mirror_examples() {
        let bs = Vector3::new(70.0, 0.0, 8.0);
        let vt = mirror_vt(&bs, &facade(16.0));
        assert_abs_diff_eq!(vt.position, Vector3::new(70.0, 32.0, 8.0), epsilon = 1e-12);
        assert_eq!(vt.additional_distance, 0.0);

        let vt = mirror_vt(&bs, &facade(-16.0));
        assert_abs_diff_eq!(vt.position, Vector3::new(70.0, -32.0, 8.0), epsilon = 1e-12);

        let through_bs = ReflectorPlane::facade_y(3, 0.0, (0.0, 140.0), (0.0, 20.0)).unwrap();
        assert_abs_diff_eq!(mirror_vt(&bs, &through_bs).position, bs, epsilon = 1e-12);
    }

    #[test]
    fn mirrored_point_is_equidistant() {
        let plane = ReflectorPlane::new(
            0,
            Vector3::new(3.0, -1.0, 0.0),
            Vector3::new(1.0, 2.0, 0.0),
            Extent {
                min: [-100.0; 3],
                max: [100.0; 3],
            },
        )
        .unwrap();
        let p = Vector3::new(10.0, 4.0, 2.5);
        let m = plane.mirror(&p);
        assert_abs_diff_eq!(plane.signed_distance(&p), -plane.signed_distance(&m), epsilon = 1e-12);
        assert_abs_diff_eq!(plane.mirror(&m), p, epsilon = 1e-12);
    }

    #[test]
    fn rejects_tilted_or_degenerate_planes() {
        let ext = Extent {
            min: [0.0; 3],
            max: [1.0; 3],
        };
        assert!(ReflectorPlane::new(0, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.5), ext).is_err());
        assert!(ReflectorPlane::new(0, Vector3::zeros(), Vector3::zeros(), ext).is_err());
    }

    #[test]
    fn scene_requires_bs_on_road() {
        let s = default_scene();
        let err = Scene::new(Vector3::new(200.0, 0.0, 8.0), vec![], s.road, s.lanes);
        assert!(err.is_err());
    }

    #[test]
    fn los_range_is_vertical_offset_below_bs() {
        let paths = trace_paths(&default_scene(), &vehicle(70.0, 0.0, 0.0));
        let los = paths.iter().find(|p| p.path_id == PathId::LOS).unwrap();
        assert_abs_diff_eq!(los.range, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(los.azimuth, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reflected_range_matches_hand_computation() {
        let paths = trace_paths(&default_scene(), &vehicle(70.0, 0.0, 0.0));
        let up = paths
            .iter()
            .find(|p| p.path_id == PathId::reflection(0))
            .unwrap();
        assert_abs_diff_eq!(up.range, (32.0f64 * 32.0 + 8.0 * 8.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(up.range, 32.984845, epsilon = 1e-6);
    }

    #[test]
    fn empty_reflector_list_gives_los_only() {
        let mut scene = default_scene();
        scene.reflectors.clear();
        let paths = trace_paths(&scene, &vehicle(20.0, -6.0, 1.5));
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].path_id, PathId::LOS);
    }

    #[test]
    fn reflection_outside_facade_is_dropped() {
        let mut scene = default_scene();
        scene.reflectors[0] =
            ReflectorPlane::facade_y(0, 16.0, (0.0, 10.0), (0.0, 20.0)).unwrap();
        let paths = trace_paths(&scene, &vehicle(120.0, 2.0, 0.0));
        assert!(paths.iter().all(|p| p.path_id != PathId::reflection(0)));
        assert!(paths.iter().any(|p| p.path_id == PathId::reflection(1)));
    }

    #[test]
    fn lane_centers_cover_the_road() {
        let s = default_scene();
        let centers: Vec<f64> = (0..8).map(|i| s.lane_center(i)).collect();
        assert_eq!(centers, vec![-14.0, -10.0, -6.0, -2.0, 2.0, 6.0, 10.0, 14.0]);
    }

    #[test]
    fn true_vt_lookup() {
        let s = default_scene();
        assert_eq!(s.true_vt(PathId::LOS).unwrap().position, s.bs_position);
        assert_abs_diff_eq!(
            s.true_vt(PathId::reflection(1)).unwrap().position,
            Vector3::new(70.0, -32.0, 8.0),
            epsilon = 1e-12
        );
        assert!(s.true_vt(PathId(9)).is_none());
    }
}
