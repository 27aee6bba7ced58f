//! Grouping of per-vehicle VT estimates into common virtual transmitters.
//!
//! [`affinity`] holds the message-passing clustering itself; [`cvt`] turns an
//! exemplar assignment into CVT clusters with one member per vehicle and
//! keeps cluster identities stable across time slots.

pub mod affinity;
pub mod cvt;

pub use affinity::{
    affinity_propagation, build_similarity, ApConfig, ApResult, ApState, DampingMode, Preference,
    SimilarityMatrix,
};
pub use cvt::{
    carry_over_identity, form_clusters, CarryOver, ClusterId, CvtCluster, IdAllocator, Member,
    VtEstimate,
};
