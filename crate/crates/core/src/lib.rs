//! Certified robustness of community membership under edge perturbations.
//!
//! A base function reports whether Louvain places a set of victim nodes in
//! one community. Smoothing it with independent bit flips over a space of
//! node pairs yields a function whose output provably survives any edit of
//! at most `L` pairs, where `L` follows from a lower confidence bound on the
//! majority probability.
//!
//! Modules, bottom-up:
//! - [`graphio`]: graphs, edge-list and community files, pair spaces and
//!   structure vectors.
//! - [`louvain`]: deterministic Louvain modularity optimisation.
//! - [`smoothing`]: noise model, base functions and Monte-Carlo counts.
//! - [`estimate`]: Clopper-Pearson lower bounds.
//! - [`certify`]: region tables and the certified perturbation size.
//! - [`oracle`]: brute-force enumeration at small sizes.
//! - [`evalharness`]: victim sampling, certified accuracy and experiments.

pub mod certify;
pub mod error;
pub mod estimate;
pub mod evalharness;
pub mod graphio;
pub mod louvain;
pub mod oracle;
pub mod smoothing;

pub use certify::{certify, CertifyParams, CertifyResult, Outcome, RadiusSolver, RegionTable};
pub use error::{Error, Result};
pub use estimate::{clopper_pearson_lower, ConfidenceSpec};
pub use graphio::{Graph, GroundTruth, NodeId, PairSpace, StructureVector};
pub use louvain::{louvain_detect, CommunityAssignment};
pub use smoothing::{BaseFunction, CommunityMembership, NoiseSpec, SampleCounts};
