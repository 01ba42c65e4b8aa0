//! Ride-match search: finds, for every ride in a pool, a short list of
//! high-utility co-riders using space-time LSH for inner product search,
//! and evaluates match lists through shareability-network matching.

pub mod baselines;
pub mod error;
pub mod geo;
pub mod hashing;
pub mod lsh;
pub mod network;
pub mod represent;
pub mod roadnet;
pub mod trips;
pub mod utility;

pub use baselines::{BaselineConfig, MatchLists};
pub use error::{Error, Result};
pub use geo::{CellId, GeoPoint, TimeBucket};
pub use lsh::{find_potential_matches, LshConfig, LshIndex, PotentialMatches};
pub use network::{MatchingResult, Proposals, ShareabilityNetwork};
pub use represent::{DenseVector, SpaceTimeEdgeSet, SparseVector};
pub use roadnet::{GridSpec, LedgerSnapshot, NodeId, RoadNetwork, Route, Router, RoutingLedger};
pub use trips::{CommuteMode, Ride, RideId, SynthSpec, Workload};
pub use utility::{MatchEvaluation, UtilityModel};
