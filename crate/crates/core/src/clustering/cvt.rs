//! CVT clusters built from an exemplar assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;

use crate::geometry::PathId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hands out fresh cluster ids in increasing order.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn fresh(&mut self) -> ClusterId {
        let id = ClusterId(self.next);
        self.next += 1;
        id
    }
}

/// One vehicle's path inside a cluster. Identity is `(vehicle_id, path_id)`;
/// `path_index` is the slot-local index reported in the membership vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Member {
    pub vehicle_id: usize,
    pub path_id: PathId,
    pub path_index: usize,
}

impl Member {
    pub fn key(&self) -> (usize, PathId) {
        (self.vehicle_id, self.path_id)
    }
}

/// A VT position estimate from one vehicle's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct VtEstimate {
    pub member: Member,
    pub position: Vector3<f64>,
    pub additional_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvtCluster {
    /// Assigned by [`carry_over_identity`].
    pub cluster_id: Option<ClusterId>,
    /// Mean of the member VT positions.
    pub position: Vector3<f64>,
    /// Mean of the member additional distances.
    pub additional_distance: f64,
    /// Sorted by vehicle id, at most one entry per vehicle.
    pub members: Vec<Member>,
}

impl CvtCluster {
    pub fn from_estimates(estimates: &[&VtEstimate]) -> Self {
        assert!(!estimates.is_empty(), "a cluster needs at least one member");
        let n = estimates.len() as f64;
        let position = estimates.iter().map(|e| e.position).sum::<Vector3<f64>>() / n;
        let additional_distance = estimates.iter().map(|e| e.additional_distance).sum::<f64>() / n;
        let mut members: Vec<Member> = estimates.iter().map(|e| e.member).collect();
        members.sort();
        CvtCluster {
            cluster_id: None,
            position,
            additional_distance,
            members,
        }
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn member_of(&self, vehicle_id: usize) -> Option<&Member> {
        self.members.iter().find(|m| m.vehicle_id == vehicle_id)
    }

    /// Membership vector over `vehicle_count` vehicles: the path index the
    /// vehicle contributes, or 0.
    pub fn cvti(&self, vehicle_count: usize) -> Vec<usize> {
        let mut v = vec![0; vehicle_count];
        for m in &self.members {
            if m.vehicle_id < vehicle_count {
                v[m.vehicle_id] = m.path_index;
            }
        }
        v
    }

    fn keys(&self) -> BTreeSet<(usize, PathId)> {
        self.members.iter().map(Member::key).collect()
    }
}

/// Builds one cluster per head. When a head's group holds several paths
/// of the same vehicle, the one nearest the head stays and the others become
/// singleton clusters.
pub fn form_clusters(heads: &[usize], estimates: &[VtEstimate]) -> Vec<CvtCluster> {
    assert_eq!(heads.len(), estimates.len());
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &h) in heads.iter().enumerate() {
        groups.entry(h).or_default().push(i);
    }

    let mut clusters = Vec::with_capacity(groups.len());
    for (head, indices) in groups {
        let anchor = estimates[head].position;
        let mut kept: BTreeMap<usize, usize> = BTreeMap::new();
        let mut demoted = Vec::new();
        for i in indices {
            let vehicle = estimates[i].member.vehicle_id;
            match kept.get(&vehicle) {
                None => {
                    kept.insert(vehicle, i);
                }
                Some(&j) => {
                    let di = (estimates[i].position - anchor).norm();
                    let dj = (estimates[j].position - anchor).norm();
                    if di < dj {
                        kept.insert(vehicle, i);
                        demoted.push(j);
                    } else {
                        demoted.push(i);
                    }
                }
            }
        }
        let members: Vec<&VtEstimate> = kept.values().map(|&i| &estimates[i]).collect();
        clusters.push(CvtCluster::from_estimates(&members));
        demoted.sort_unstable();
        for i in demoted {
            clusters.push(CvtCluster::from_estimates(&[&estimates[i]]));
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarryOver {
    pub clusters: Vec<CvtCluster>,
    /// Previous ids that no current cluster inherited.
    pub retired: Vec<ClusterId>,
}

/// Gives each current cluster the id of the previous cluster it overlaps
/// most, matched greedily: larger member overlap first, then smaller
/// centroid distance, then lower previous id. Unmatched clusters get fresh
/// ids.
pub fn carry_over_identity(
    prev: &[CvtCluster],
    mut curr: Vec<CvtCluster>,
    ids: &mut IdAllocator,
) -> CarryOver {
    let prev_keys: Vec<_> = prev.iter().map(CvtCluster::keys).collect();
    let mut candidates = Vec::new();
    for (ci, c) in curr.iter().enumerate() {
        let keys = c.keys();
        for (pi, p) in prev.iter().enumerate() {
            let Some(pid) = p.cluster_id else { continue };
            let overlap = keys.intersection(&prev_keys[pi]).count();
            if overlap > 0 {
                let dist = (c.position - p.position).norm();
                candidates.push((overlap, dist, pid, ci));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut taken = BTreeSet::new();
    for (_, _, pid, ci) in candidates {
        if curr[ci].cluster_id.is_none() && !taken.contains(&pid) {
            curr[ci].cluster_id = Some(pid);
            taken.insert(pid);
        }
    }
    for c in curr.iter_mut().filter(|c| c.cluster_id.is_none()) {
        c.cluster_id = Some(ids.fresh());
    }
    let retired = prev
        .iter()
        .filter_map(|p| p.cluster_id)
        .filter(|id| !taken.contains(id))
        .collect();
    CarryOver {
        clusters: curr,
        retired,
    }
}
