//! Ground-truth pairwise match utility.
//!
//! Serving rides `r` (pickup `s`, dropoff `t`) and `r'` (`s'`, `t'`) together
//! costs the cheapest of four pickup/dropoff sequences. Each sequence is
//! feasible only if the second pickup is reached within `ΔT` of the first,
//! and rides requested more than `ΔT` apart never match.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::roadnet::{DurationCache, RoutingLedger};
use crate::trips::{Ride, RideId};

/// Maximum allowable pickup delay, seconds.
pub const DEFAULT_MAX_DELAY_S: f64 = 600.0;

/// Cross segments fetched from the router per evaluated pair.
pub const CROSS_SEGMENTS_PER_PAIR: usize = 6;

/// Visiting order of the four stops; primes mark the second ride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServeOrder {
    /// s → s' → t → t'
    SSpTTp,
    /// s → s' → t' → t
    SSpTpT,
    /// s' → s → t' → t
    SpSTpT,
    /// s' → s → t → t'
    SpSTTp,
}

impl ServeOrder {
    pub const ALL: [ServeOrder; 4] = [
        ServeOrder::SSpTTp,
        ServeOrder::SSpTpT,
        ServeOrder::SpSTpT,
        ServeOrder::SpSTTp,
    ];

    /// Whether the first ride is picked up first.
    pub fn own_first(self) -> bool {
        matches!(self, ServeOrder::SSpTTp | ServeOrder::SSpTpT)
    }

    /// Stop sequence as (ride index 0/1, is_dropoff) pairs.
    pub fn stops(self) -> [(usize, bool); 4] {
        match self {
            ServeOrder::SSpTTp => [(0, false), (1, false), (0, true), (1, true)],
            ServeOrder::SSpTpT => [(0, false), (1, false), (1, true), (0, true)],
            ServeOrder::SpSTpT => [(1, false), (0, false), (1, true), (0, true)],
            ServeOrder::SpSTTp => [(1, false), (0, false), (0, true), (1, true)],
        }
    }
}

/// The eight segment costs that determine a pair's combined cost. Cross
/// segments are `None` when unreachable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSegments {
    /// s → t
    pub own: f64,
    /// s' → t'
    pub other: f64,
    pub s_to_s2: Option<f64>,
    pub s2_to_s: Option<f64>,
    pub t_to_t2: Option<f64>,
    pub t2_to_t: Option<f64>,
    pub s_to_t2: Option<f64>,
    pub s2_to_t: Option<f64>,
}

impl PairSegments {
    pub fn sequence_cost(&self, order: ServeOrder) -> Option<f64> {
        Some(match order {
            ServeOrder::SSpTTp => self.s_to_s2? + self.s2_to_t? + self.t_to_t2?,
            ServeOrder::SSpTpT => self.s_to_s2? + self.other + self.t2_to_t?,
            ServeOrder::SpSTpT => self.s2_to_s? + self.s_to_t2? + self.t2_to_t?,
            ServeOrder::SpSTTp => self.s2_to_s? + self.own + self.t_to_t2?,
        })
    }

    /// Cheapest admissible sequence. `own_first_ok` / `other_first_ok` say
    /// whether the delay check passes when that ride is picked up first.
    pub fn cheapest(&self, own_first_ok: bool, other_first_ok: bool) -> Option<(f64, ServeOrder)> {
        let mut best: Option<(f64, ServeOrder)> = None;
        for order in ServeOrder::ALL {
            let allowed = if order.own_first() {
                own_first_ok
            } else {
                other_first_ok
            };
            if !allowed {
                continue;
            }
            if let Some(c) = self.sequence_cost(order) {
                if best.is_none_or(|(b, _)| c < b) {
                    best = Some((c, order));
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchEvaluation {
    /// Cost of the cheapest feasible joint service; infinite when infeasible.
    pub combined_cost: f64,
    pub best_ordering: Option<ServeOrder>,
    pub feasible: bool,
    /// Savings versus serving separately, clamped at zero.
    pub utility: f64,
}

impl MatchEvaluation {
    pub const INFEASIBLE: MatchEvaluation = MatchEvaluation {
        combined_cost: f64::INFINITY,
        best_ordering: None,
        feasible: false,
        utility: 0.0,
    };

    /// Applies the pickup-delay rule: picking up `a` first delays `b` by the
    /// a→b pickup leg.
    pub fn from_segments(seg: &PairSegments, max_delay: f64) -> MatchEvaluation {
        let own_first_ok = seg.s_to_s2.is_some_and(|d| d <= max_delay);
        let other_first_ok = seg.s2_to_s.is_some_and(|d| d <= max_delay);
        match seg.cheapest(own_first_ok, other_first_ok) {
            Some((combined, order)) => MatchEvaluation {
                combined_cost: combined,
                best_ordering: Some(order),
                feasible: true,
                utility: (seg.own + seg.other - combined).max(0.0),
            },
            None => MatchEvaluation::INFEASIBLE,
        }
    }
}

/// Exact, duration-based pair evaluator over a shared travel-time cache.
pub struct UtilityModel<'a> {
    cache: DurationCache<'a>,
    max_delay: f64,
}

impl<'a> UtilityModel<'a> {
    pub fn new(net: &'a crate::roadnet::RoadNetwork, max_delay: f64) -> Self {
        assert!(max_delay > 0.0, "maximum pickup delay must be positive");
        UtilityModel {
            cache: DurationCache::new(net),
            max_delay,
        }
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn cache(&self) -> &DurationCache<'a> {
        &self.cache
    }

    pub fn segments(&self, r: &Ride, r2: &Ride) -> PairSegments {
        let (s, t) = (r.pickup_node(), r.dropoff_node());
        let (s2, t2) = (r2.pickup_node(), r2.dropoff_node());
        let d = |a, b| self.cache.duration(a, b);
        PairSegments {
            own: r.cost,
            other: r2.cost,
            s_to_s2: d(s, s2),
            s2_to_s: d(s2, s),
            t_to_t2: d(t, t2),
            t2_to_t: d(t2, t),
            s_to_t2: d(s, t2),
            s2_to_t: d(s2, t),
        }
    }

    /// Evaluation without ledger accounting; callers that evaluate in bulk
    /// charge the ledger themselves.
    pub fn evaluate(&self, r: &Ride, r2: &Ride) -> MatchEvaluation {
        if (r.request_time - r2.request_time).abs() > self.max_delay {
            return MatchEvaluation::INFEASIBLE;
        }
        MatchEvaluation::from_segments(&self.segments(r, r2), self.max_delay)
    }

    pub fn utility(&self, r: &Ride, r2: &Ride) -> f64 {
        self.evaluate(r, r2).utility
    }
}

/// Evaluates one pair, charging its six cross-segment requests as a batch.
pub fn combined_cost(
    model: &UtilityModel<'_>,
    r: &Ride,
    r2: &Ride,
    ledger: &RoutingLedger,
) -> MatchEvaluation {
    ledger.record(CROSS_SEGMENTS_PER_PAIR);
    model.evaluate(r, r2)
}

pub fn matching_utility(
    model: &UtilityModel<'_>,
    r: &Ride,
    r2: &Ride,
    ledger: &RoutingLedger,
) -> f64 {
    combined_cost(model, r, r2, ledger).utility
}

/// Descending by score, ties by ascending id.
pub fn rank_desc(list: &mut [(RideId, f64)]) {
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Exact top-k co-riders of `q` by matching utility. `q` itself (same id) is
/// excluded.
pub fn brute_force_topk(
    rides: &[Ride],
    q: &Ride,
    k: usize,
    model: &UtilityModel<'_>,
) -> Vec<(RideId, f64)> {
    assert!(k >= 1, "k must be at least 1");
    let mut all: Vec<(RideId, f64)> = rides
        .iter()
        .filter(|r| r.id != q.id)
        .map(|r| (r.id, model.utility(q, r)))
        .collect();
    rank_desc(&mut all);
    all.truncate(k);
    all
}

/// Symmetric n×n utility matrix (row-major, zero diagonal).
pub fn utility_matrix(rides: &[Ride], model: &UtilityModel<'_>) -> Vec<f64> {
    let n = rides.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j > i {
                        model.utility(&rides[i], &rides[j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = rows[i][j];
            m[j * n + i] = rows[i][j];
        }
    }
    m
}

/// Top-k lists for every ride from a precomputed [`utility_matrix`].
pub fn topk_from_matrix(rides: &[Ride], matrix: &[f64], k: usize) -> Vec<Vec<(RideId, f64)>> {
    let n = rides.len();
    (0..n)
        .map(|i| {
            let mut row: Vec<(RideId, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (rides[j].id, matrix[i * n + j]))
                .collect();
            rank_desc(&mut row);
            row.truncate(k);
            row
        })
        .collect()
}
