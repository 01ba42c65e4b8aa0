//! Scenario execution: subsample per load, propose matches per approach,
//! build and match the shareability network, collect metrics.

use std::time::Instant;

use ridematch_core::baselines::{closeby, closeby_haversine, haversine_topk, MatchLists};
use ridematch_core::hashing::derive_seed;
use ridematch_core::lsh::find_potential_matches;
use ridematch_core::network::{
    build_network, complete_network, greedy_matching, max_weight_matching, proposals_from,
    MatchingResult, ShareabilityNetwork,
};
use ridematch_core::roadnet::{LedgerSnapshot, RoadNetwork, RoutingLedger};
use ridematch_core::trips::{
    load_trips_csv, subsample, synth_commute, BBox, CsvOptions, IngestStats, Workload,
};
use ridematch_core::{Error, Result, Ride, UtilityModel};

use crate::config::{Approach, ExperimentConfig, MatchingMode, NetworkSource, Scenario};
use crate::report::{ExperimentReport, ReportRow};

pub fn load_network(source: &NetworkSource) -> Result<RoadNetwork> {
    match source {
        NetworkSource::Grid(g) => g.build(),
        NetworkSource::Json { path } => RoadNetwork::load_json(path),
    }
}

/// Builds the full ride pool. Returns ingest statistics for CSV input.
pub fn load_workload(
    cfg: &ExperimentConfig,
    net: &RoadNetwork,
    ledger: &RoutingLedger,
) -> Result<(Workload, Option<IngestStats>)> {
    match &cfg.scenario {
        Scenario::Synth(s) => Ok((synth_commute(net, &s.spec(cfg.seed), ledger)?, None)),
        Scenario::Csv(c) => {
            let bbox = match cfg.bbox()? {
                Some(b) => b,
                None => {
                    let (min_lat, min_lon, max_lat, max_lon) = net.bounds();
                    BBox {
                        min_lat,
                        min_lon,
                        max_lat,
                        max_lon,
                    }
                }
            };
            let opts = CsvOptions {
                bbox,
                window: c.window,
                utc_offset_s: c.utc_offset_s,
                alternates: c.alternates,
            };
            let (w, stats) = load_trips_csv(&c.path, &opts, net, ledger)?;
            Ok((w, Some(stats)))
        }
    }
}

struct Proposed {
    lists: MatchLists,
    candidates: Option<Vec<usize>>,
    degenerate: usize,
}

fn propose(approach: Approach, rides: &[Ride], cfg: &ExperimentConfig) -> Result<Proposed> {
    let plain = |lists| Proposed {
        lists,
        candidates: None,
        degenerate: 0,
    };
    match approach {
        Approach::Lsh => {
            let pm = find_potential_matches(rides, &cfg.lsh_config())?;
            Ok(Proposed {
                degenerate: pm.degenerate.len(),
                candidates: Some(pm.candidates),
                lists: pm.lists,
            })
        }
        Approach::Closeby => Ok(plain(closeby(rides, cfg.k))),
        Approach::Haversine => Ok(plain(haversine_topk(
            rides,
            cfg.k,
            cfg.delta_t,
            &cfg.baseline,
        ))),
        Approach::ClosebyHaversine => Ok(plain(closeby_haversine(
            rides,
            cfg.k,
            cfg.delta_t,
            &cfg.baseline,
        )?)),
        Approach::Optimal => Err(Error::invalid("optimal has no proposal stage")),
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Each approach is charged the per-ride route requests of the pool it
/// searched plus the cross-segment requests of the pairs it proposed.
fn charged_ledger(n: usize) -> RoutingLedger {
    let ledger = RoutingLedger::new();
    ledger.record(n);
    ledger
}

struct Evaluated {
    network: ShareabilityNetwork,
    matching: MatchingResult,
    build_ms: f64,
    matching_ms: f64,
    ledger: LedgerSnapshot,
}

fn evaluate(
    rides: &[Ride],
    lists: Option<&MatchLists>,
    approach: Approach,
    model: &UtilityModel<'_>,
    cfg: &ExperimentConfig,
) -> Result<Evaluated> {
    let ledger = charged_ledger(rides.len());
    let t = Instant::now();
    let network = match lists {
        Some(l) => build_network(rides, &proposals_from(l), model, &ledger, approach.name())?,
        None => {
            if rides.len() > cfg.optimal_cap {
                return Err(Error::OverCap {
                    n: rides.len(),
                    cap: cfg.optimal_cap,
                });
            }
            complete_network(rides, model, &ledger)?
        }
    };
    let build_ms = ms(t);
    let t = Instant::now();
    let matching = match cfg.matching {
        MatchingMode::Exact => max_weight_matching(&network),
        MatchingMode::Greedy => greedy_matching(&network),
    };
    Ok(Evaluated {
        network,
        matching,
        build_ms,
        matching_ms: ms(t),
        ledger: ledger.snapshot(),
    })
}

fn fill(row: &mut ReportRow, ev: &Evaluated, record_timings: bool) {
    row.total_utility_s = Some(ev.matching.total_utility);
    row.routing_calls = Some(ev.ledger.call_count);
    row.routing_batches = Some(ev.ledger.batch_count);
    row.batch_latency_ms = Some(ev.ledger.simulated_latency_ms);
    row.evaluated_pairs = Some(ev.network.evaluated_pairs);
    row.network_edges = Some(ev.network.edge_count());
    row.matched_pairs = Some(ev.matching.pairs.len());
    if record_timings {
        row.network_build_ms = Some(ev.build_ms);
        row.matching_ms = Some(ev.matching_ms);
    }
}

/// Runs every configured approach at every load level.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::invalid(errs.join("; ")));
    }
    let net = load_network(&cfg.network)?;
    let (workload, _) = load_workload(cfg, &net, &RoutingLedger::new())?;
    let model = UtilityModel::new(&net, cfg.delta_t);

    let mut approaches = cfg.approaches.clone();
    approaches.sort_unstable();
    approaches.dedup();
    let mut loads = cfg.loads.clone();
    loads.sort_by(f64::total_cmp);
    loads.dedup();

    let mut rows = Vec::new();
    for &load in &loads {
        let pool = subsample(
            &workload,
            load,
            derive_seed(cfg.seed, &format!("load-{load}")),
        )?;
        let rides = &pool.rides;
        let mut load_rows = Vec::new();
        let mut optimal = None;
        for &approach in &approaches {
            let mut row = ReportRow::new(approach.name(), load, rides.len());
            let outcome = if approach == Approach::Optimal {
                evaluate(rides, None, approach, &model, cfg).map(|ev| {
                    optimal = Some(ev.matching.total_utility);
                    fill(&mut row, &ev, cfg.record_timings);
                })
            } else {
                let t = Instant::now();
                propose(approach, rides, cfg).and_then(|p| {
                    let search_ms = ms(t);
                    if cfg.record_timings {
                        row.search_ms = Some(search_ms);
                    }
                    if let Some(c) = &p.candidates {
                        row.candidates_mean =
                            Some(c.iter().sum::<usize>() as f64 / c.len().max(1) as f64);
                        row.candidates_max = c.iter().copied().max();
                        row.degenerate_rides = Some(p.degenerate);
                    }
                    let ev = evaluate(rides, Some(&p.lists), approach, &model, cfg)?;
                    fill(&mut row, &ev, cfg.record_timings);
                    Ok(())
                })
            };
            if let Err(e) = outcome {
                row.status = format!("failed: {e}");
            }
            load_rows.push(row);
        }
        if let Some(opt) = optimal {
            for row in &mut load_rows {
                if let Some(u) = row.total_utility_s {
                    row.utility_fraction_of_optimal = Some(if opt > 0.0 { u / opt } else { 1.0 });
                }
            }
        }
        rows.extend(load_rows);
    }
    Ok(ExperimentReport { rows })
}
