//! Shared workload builders for the benchmarks.

use ridematch_core::trips::synth_commute;
use ridematch_core::{GridSpec, RoadNetwork, RoutingLedger, SynthSpec, Workload};

pub fn grid(rows: usize) -> RoadNetwork {
    GridSpec {
        rows,
        cols: rows,
        ..GridSpec::default()
    }
    .build()
    .expect("grid network")
}

pub fn morning(net: &RoadNetwork, n: usize, seed: u64) -> Workload {
    let spec = SynthSpec {
        n,
        seed,
        ..SynthSpec::default()
    };
    synth_commute(net, &spec, &RoutingLedger::new()).expect("synthetic workload")
}
