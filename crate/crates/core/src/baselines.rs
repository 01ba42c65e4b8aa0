//! Comparison heuristics: nearest pickups, exhaustive straight-line utility,
//! and nearest pickups re-ranked by straight-line utility.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};
use crate::trips::{Ride, RideId};
use crate::utility::{rank_desc, MatchEvaluation, PairSegments};

/// Per-ride candidate lists with an approach-specific score.
pub type MatchLists = BTreeMap<RideId, Vec<(RideId, f64)>>;

pub const DEFAULT_M_CANDIDATES: usize = 1000;
pub const DEFAULT_NOMINAL_SPEED_MPS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub m_candidates: usize,
    pub nominal_speed_mps: f64,
    /// Reject pairs whose straight-line pickup leg at the nominal speed
    /// exceeds the delay bound.
    pub delay_proxy: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            m_candidates: DEFAULT_M_CANDIDATES,
            nominal_speed_mps: DEFAULT_NOMINAL_SPEED_MPS,
            delay_proxy: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, k: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.m_candidates < k {
            errs.push(format!(
                "baseline.m_candidates ({}) must be >= k ({k})",
                self.m_candidates
            ));
        }
        if !(self.nominal_speed_mps > 0.0) {
            errs.push(format!(
                "baseline.nominal_speed_mps must be positive, got {}",
                self.nominal_speed_mps
            ));
        }
        errs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaversineRide {
    pub id: RideId,
    pub pickup: GeoPoint,
    pub dropoff: GeoPoint,
    pub request_time: f64,
    /// Straight-line ride length, km.
    pub haversine_cost: f64,
}

impl From<&Ride> for HaversineRide {
    fn from(r: &Ride) -> Self {
        HaversineRide {
            id: r.id,
            pickup: r.pickup,
            dropoff: r.dropoff,
            request_time: r.request_time,
            haversine_cost: haversine_km(r.pickup, r.dropoff),
        }
    }
}

/// Straight-line analogue of the exact pair evaluation; costs in km.
pub fn haversine_evaluate(
    a: &HaversineRide,
    b: &HaversineRide,
    max_delay: f64,
    cfg: &BaselineConfig,
) -> MatchEvaluation {
    let seg = PairSegments {
        own: a.haversine_cost,
        other: b.haversine_cost,
        s_to_s2: Some(haversine_km(a.pickup, b.pickup)),
        s2_to_s: Some(haversine_km(b.pickup, a.pickup)),
        t_to_t2: Some(haversine_km(a.dropoff, b.dropoff)),
        t2_to_t: Some(haversine_km(b.dropoff, a.dropoff)),
        s_to_t2: Some(haversine_km(a.pickup, b.dropoff)),
        s2_to_t: Some(haversine_km(b.pickup, a.dropoff)),
    };
    // The delay test compares km against a km budget derived from ΔT.
    let budget_km = if cfg.delay_proxy {
        max_delay * cfg.nominal_speed_mps / 1000.0
    } else {
        f64::INFINITY
    };
    MatchEvaluation::from_segments(&seg, budget_km)
}

/// Exact k nearest pickups by great-circle distance, self excluded, ties
/// by ascending id. Scores are distances in km.
pub fn closeby(rides: &[Ride], k: usize) -> MatchLists {
    let pts: Vec<(RideId, GeoPoint)> = rides.iter().map(|r| (r.id, r.pickup)).collect();
    let index = PickupIndex::new(&pts);
    pts.par_iter()
        .map(|&(id, p)| (id, index.nearest(p, k, id)))
        .collect()
}

/// Pickups sorted by latitude. A latitude gap of `Δ` radians bounds the
/// great-circle distance from below by `R·Δ`, which ends the outward sweep.
struct PickupIndex {
    by_lat: Vec<(GeoPoint, RideId)>,
}

impl PickupIndex {
    fn new(pts: &[(RideId, GeoPoint)]) -> Self {
        let mut by_lat: Vec<(GeoPoint, RideId)> = pts.iter().map(|&(id, p)| (p, id)).collect();
        by_lat.sort_by(|a, b| a.0.lat.total_cmp(&b.0.lat).then(a.1.cmp(&b.1)));
        PickupIndex { by_lat }
    }

    fn nearest(&self, q: GeoPoint, k: usize, exclude: RideId) -> Vec<(RideId, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let start = self.by_lat.partition_point(|(p, _)| p.lat < q.lat);
        // Sorted ascending by (distance, id); holds at most k entries.
        let mut best: Vec<(f64, RideId)> = Vec::with_capacity(k + 1);
        let bound = |lat: f64| crate::geo::EARTH_RADIUS_KM * (lat - q.lat).abs().to_radians();
        let consider = |best: &mut Vec<(f64, RideId)>, p: GeoPoint, id: RideId| {
            if id == exclude {
                return;
            }
            let d = haversine_km(q, p);
            let pos = best.partition_point(|&(bd, bid)| bd < d || (bd == d && bid < id));
            if pos < k {
                best.insert(pos, (d, id));
                best.truncate(k);
            }
        };
        let (mut lo, mut hi) = (start, start);
        loop {
            let worst = if best.len() == k {
                best[k - 1].0
            } else {
                f64::INFINITY
            };
            let down = lo > 0 && bound(self.by_lat[lo - 1].0.lat) <= worst;
            let up = hi < self.by_lat.len() && bound(self.by_lat[hi].0.lat) <= worst;
            if !down && !up {
                break;
            }
            if down {
                lo -= 1;
                let (p, id) = self.by_lat[lo];
                consider(&mut best, p, id);
            }
            if up {
                let (p, id) = self.by_lat[hi];
                consider(&mut best, p, id);
                hi += 1;
            }
        }
        best.into_iter().map(|(d, id)| (id, d)).collect()
    }
}

/// Top-k by straight-line matching utility over all pairs. Scores are km.
pub fn haversine_topk(
    rides: &[Ride],
    k: usize,
    max_delay: f64,
    cfg: &BaselineConfig,
) -> MatchLists {
    let hs: Vec<HaversineRide> = rides.iter().map(HaversineRide::from).collect();
    hs.par_iter()
        .map(|a| {
            let mut all: Vec<(RideId, f64)> = hs
                .iter()
                .filter(|b| b.id != a.id)
                .map(|b| (b.id, haversine_evaluate(a, b, max_delay, cfg).utility))
                .collect();
            rank_desc(&mut all);
            all.truncate(k);
            (a.id, all)
        })
        .collect()
}

/// `m_candidates` nearest pickups, re-ranked by straight-line utility.
pub fn closeby_haversine(
    rides: &[Ride],
    k: usize,
    max_delay: f64,
    cfg: &BaselineConfig,
) -> Result<MatchLists> {
    if cfg.m_candidates < k {
        return Err(Error::invalid(format!(
            "m_candidates ({}) must be at least k ({k})",
            cfg.m_candidates
        )));
    }
    let hs: BTreeMap<RideId, HaversineRide> = rides
        .iter()
        .map(|r| (r.id, HaversineRide::from(r)))
        .collect();
    let near = closeby(rides, cfg.m_candidates);
    Ok(near
        .into_par_iter()
        .map(|(id, cands)| {
            let a = &hs[&id];
            let mut scored: Vec<(RideId, f64)> = cands
                .into_iter()
                .map(|(c, _)| (c, haversine_evaluate(a, &hs[&c], max_delay, cfg).utility))
                .collect();
            rank_desc(&mut scored);
            scored.truncate(k);
            (id, scored)
        })
        .collect())
}
