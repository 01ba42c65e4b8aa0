//! Shareability networks and their maximum-weight matchings.
//!
//! Rides are nodes; a proposed pair becomes an edge weighted by its exact
//! matching utility. The total weight of a maximum matching measures how
//! much riding time an approach's proposals can save.

mod blossom;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::MatchLists;
use crate::error::{Error, Result};
use crate::roadnet::RoutingLedger;
use crate::trips::{Ride, RideId};
use crate::utility::{UtilityModel, CROSS_SEGMENTS_PER_PAIR};

pub use blossom::max_weight_matching as max_weight_matching_raw;

/// Largest pool for which the complete network is evaluated.
pub const DEFAULT_OPTIMAL_CAP: usize = 3000;

/// Utilities are matched as integer milliseconds.
const WEIGHT_SCALE: f64 = 1000.0;

pub type Proposals = BTreeMap<RideId, Vec<RideId>>;

/// Candidate ids only, dropping scores.
pub fn proposals_from(lists: &MatchLists) -> Proposals {
    lists
        .iter()
        .map(|(&id, l)| (id, l.iter().map(|&(o, _)| o).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkEdge {
    pub u: RideId,
    pub v: RideId,
    /// Exact matching utility, seconds.
    pub weight: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ShareabilityNetwork {
    pub nodes: Vec<RideId>,
    /// Sorted by `(u, v)` with `u < v`; only positive weights.
    pub edges: Vec<NetworkEdge>,
    /// Distinct pairs whose utility was computed.
    pub evaluated_pairs: usize,
}

impl ShareabilityNetwork {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Writes `u,v,weight_s,provenance` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["u", "v", "weight_s", "provenance"])?;
        for e in &self.edges {
            w.write_record([
                e.u.to_string(),
                e.v.to_string(),
                e.weight.to_string(),
                e.provenance.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetrizes the proposals and weights each distinct pair once. The
/// ledger is charged the cross-segment requests of every evaluated pair.
pub fn build_network(
    rides: &[Ride],
    proposals: &Proposals,
    model: &UtilityModel<'_>,
    ledger: &RoutingLedger,
    provenance: &str,
) -> Result<ShareabilityNetwork> {
    let index: BTreeMap<RideId, usize> = rides.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
    let mut pairs = BTreeSet::new();
    for (&a, cands) in proposals {
        if !index.contains_key(&a) {
            return Err(Error::invalid(format!("proposal for unknown ride {a}")));
        }
        for &b in cands {
            if !index.contains_key(&b) {
                return Err(Error::invalid(format!(
                    "ride {a} proposes unknown ride {b}"
                )));
            }
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    let pairs: Vec<(RideId, RideId)> = pairs.into_iter().collect();
    let weights: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| model.utility(&rides[index[&a]], &rides[index[&b]]))
        .collect();
    ledger.record(CROSS_SEGMENTS_PER_PAIR * pairs.len());
    let edges = pairs
        .iter()
        .zip(weights)
        .filter(|&(_, w)| w > 0.0)
        .map(|(&(u, v), weight)| NetworkEdge {
            u,
            v,
            weight,
            provenance: provenance.to_string(),
        })
        .collect();
    Ok(ShareabilityNetwork {
        nodes: rides.iter().map(|r| r.id).collect(),
        edges,
        evaluated_pairs: pairs.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MatchingResult {
    /// Matched pairs `(u, v)` with `u < v`, sorted.
    pub pairs: Vec<(RideId, RideId)>,
    /// Sum of matched edge weights, seconds.
    pub total_utility: f64,
    pub unmatched: Vec<RideId>,
}

impl MatchingResult {
    fn from_mates(
        g: &ShareabilityNetwork,
        mate: &[Option<usize>],
        weight_of: &BTreeMap<(RideId, RideId), f64>,
    ) -> Self {
        let mut pairs = Vec::new();
        let mut unmatched = Vec::new();
        for (i, m) in mate.iter().enumerate() {
            match m {
                Some(j) if i < *j => {
                    let (u, v) = (g.nodes[i], g.nodes[*j]);
                    pairs.push((u.min(v), u.max(v)));
                }
                Some(_) => {}
                None => unmatched.push(g.nodes[i]),
            }
        }
        pairs.sort_unstable();
        unmatched.sort_unstable();
        let total_utility = pairs.iter().map(|p| weight_of[p]).sum();
        MatchingResult {
            pairs,
            total_utility,
            unmatched,
        }
    }
}

fn node_positions(g: &ShareabilityNetwork) -> BTreeMap<RideId, usize> {
    g.nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect()
}

/// Exact maximum-weight matching of the network.
pub fn max_weight_matching(g: &ShareabilityNetwork) -> MatchingResult {
    let pos = node_positions(g);
    let edges: Vec<(usize, usize, i64)> = g
        .edges
        .iter()
        .map(|e| {
            (
                pos[&e.u],
                pos[&e.v],
                (e.weight * WEIGHT_SCALE).round() as i64,
            )
        })
        .collect();
    let mate = blossom::max_weight_matching(g.nodes.len(), &edges);
    let weight_of = g.edges.iter().map(|e| ((e.u, e.v), e.weight)).collect();
    MatchingResult::from_mates(g, &mate, &weight_of)
}

/// Heaviest-edge-first matching, for pools too large for the exact solver.
pub fn greedy_matching(g: &ShareabilityNetwork) -> MatchingResult {
    let pos = node_positions(g);
    let mut order: Vec<&NetworkEdge> = g.edges.iter().collect();
    order.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then((a.u, a.v).cmp(&(b.u, b.v)))
    });
    let mut mate = vec![None; g.nodes.len()];
    for e in order {
        let (i, j) = (pos[&e.u], pos[&e.v]);
        if mate[i].is_none() && mate[j].is_none() {
            mate[i] = Some(j);
            mate[j] = Some(i);
        }
    }
    let weight_of = g.edges.iter().map(|e| ((e.u, e.v), e.weight)).collect();
    MatchingResult::from_mates(g, &mate, &weight_of)
}

/// Complete network over the pool.
pub fn complete_network(
    rides: &[Ride],
    model: &UtilityModel<'_>,
    ledger: &RoutingLedger,
) -> Result<ShareabilityNetwork> {
    let proposals: Proposals = rides
        .iter()
        .map(|r| {
            (
                r.id,
                rides.iter().map(|o| o.id).filter(|&o| o > r.id).collect(),
            )
        })
        .collect();
    build_network(rides, &proposals, model, ledger, "optimal")
}

/// Best achievable matching utility over every pair in the pool.
pub fn optimal_utility(
    rides: &[Ride],
    model: &UtilityModel<'_>,
    ledger: &RoutingLedger,
    cap: usize,
) -> Result<MatchingResult> {
    if rides.len() > cap {
        return Err(Error::OverCap {
            n: rides.len(),
            cap,
        });
    }
    Ok(max_weight_matching(&complete_network(
        rides, model, ledger,
    )?))
}
