//! Road network model and in-process router.
//!
//! The router is a plain Dijkstra over a directed graph with per-edge travel
//! durations. [`Router`] is the seam where an external routing service could
//! be plugged in; everything downstream only sees [`Route`]s and durations.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};

pub type NodeId = usize;

/// Requests per batch routing call.
pub const BATCH_SIZE: usize = 100;
/// Simulated latency charged per batch routing call.
pub const BATCH_LATENCY_MS: u64 = 10;

pub const MIN_SPEED_MPS: f64 = 6.0;
pub const MAX_SPEED_MPS: f64 = 14.0;

/// Used-edge duration multiplier when searching for an alternate route.
pub const ALTERNATE_PENALTY: f64 = 1.5;
/// Alternates longer than this multiple of the optimum are discarded.
pub const ALTERNATE_MAX_STRETCH: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub duration_s: f64,
    pub length_m: f64,
}

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<GeoPoint>,
    edges: Vec<RoadEdge>,
    outgoing: Vec<Vec<usize>>,
    /// Node ids sorted by latitude; nearest-node queries sweep outwards from
    /// the query latitude and stop once the latitude gap alone exceeds the
    /// best distance found.
    by_lat: Vec<NodeId>,
}

/// Grid city parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub origin: GeoPoint,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 30,
            cols: 30,
            spacing_m: 200.0,
            origin: DEFAULT_ORIGIN,
            seed: 7,
        }
    }
}

/// South-west corner of the default grid city (lower Manhattan).
pub const DEFAULT_ORIGIN: GeoPoint = GeoPoint {
    lat: 40.7060,
    lon: -74.0120,
};

impl GridSpec {
    pub fn build(&self) -> Result<RoadNetwork> {
        let (rows, cols) = (self.rows, self.cols);
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if !(self.spacing_m > 0.0) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        let origin = GeoPoint::new(self.origin.lat, self.origin.lon)?;
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let p = origin.offset_m(r as f64 * self.spacing_m, c as f64 * self.spacing_m);
                nodes.push(GeoPoint::new(p.lat, p.lon)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut edges = Vec::with_capacity(2 * (rows * (cols - 1) + cols * (rows - 1)));
        let mut link = |a: NodeId, b: NodeId, edges: &mut Vec<RoadEdge>| {
            let length_m = haversine_km(nodes[a], nodes[b]) * 1000.0;
            for (from, to) in [(a, b), (b, a)] {
                let speed = rng.random_range(MIN_SPEED_MPS..=MAX_SPEED_MPS);
                // whole seconds keep every route cost an exact integer
                let duration_s = (length_m / speed).round().max(1.0);
                edges.push(RoadEdge {
                    from,
                    to,
                    duration_s,
                    length_m,
                });
            }
        };
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    link(id, id + 1, &mut edges);
                }
                if r + 1 < rows {
                    link(id, id + cols, &mut edges);
                }
            }
        }
        RoadNetwork::from_parts(nodes, edges)
    }
}

pub fn build_grid_network(
    rows: usize,
    cols: usize,
    spacing_m: f64,
    seed: u64,
) -> Result<RoadNetwork> {
    GridSpec {
        rows,
        cols,
        spacing_m,
        origin: DEFAULT_ORIGIN,
        seed,
    }
    .build()
}

#[derive(Deserialize, Serialize)]
struct JsonNode {
    id: i64,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize, Serialize)]
struct JsonEdge {
    u: i64,
    v: i64,
    duration_s: f64,
    length_m: f64,
}

#[derive(Deserialize, Serialize)]
struct JsonNetwork {
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
}

impl RoadNetwork {
    pub fn from_parts(nodes: Vec<GeoPoint>, edges: Vec<RoadEdge>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::degenerate("road network has no nodes"));
        }
        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(Error::invalid(format!(
                    "edge {i} references a missing node"
                )));
            }
            if !(e.duration_s > 0.0) || !e.duration_s.is_finite() {
                return Err(Error::invalid(format!(
                    "edge {i} has non-positive duration {}",
                    e.duration_s
                )));
            }
            outgoing[e.from].push(i);
        }
        let mut by_lat: Vec<NodeId> = (0..nodes.len()).collect();
        by_lat.sort_by(|&a, &b| nodes[a].lat.total_cmp(&nodes[b].lat).then(a.cmp(&b)));
        Ok(RoadNetwork {
            nodes,
            edges,
            outgoing,
            by_lat,
        })
    }

    /// Parses `{nodes:[{id,lat,lon}], edges:[{u,v,duration_s,length_m}]}`.
    /// Node ids may be arbitrary integers; they are renumbered densely in
    /// file order.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: JsonNetwork = serde_json::from_str(s)?;
        let mut index = HashMap::with_capacity(raw.nodes.len());
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in &raw.nodes {
            if index.insert(n.id, nodes.len()).is_some() {
                return Err(Error::Format(format!("duplicate node id {}", n.id)));
            }
            nodes.push(GeoPoint::new(n.lat, n.lon)?);
        }
        let lookup = |id: i64| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Format(format!("edge references unknown node {id}")))
        };
        let edges = raw
            .edges
            .iter()
            .map(|e| {
                Ok(RoadEdge {
                    from: lookup(e.u)?,
                    to: lookup(e.v)?,
                    duration_s: e.duration_s,
                    length_m: e.length_m,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RoadNetwork::from_parts(nodes, edges)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        RoadNetwork::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = JsonNetwork {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, p)| JsonNode {
                    id: id as i64,
                    lat: p.lat,
                    lon: p.lon,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| JsonEdge {
                    u: e.from as i64,
                    v: e.to as i64,
                    duration_s: e.duration_s,
                    length_m: e.length_m,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> GeoPoint {
        self.nodes[id]
    }

    pub fn nodes(&self) -> &[GeoPoint] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn outgoing(&self, id: NodeId) -> impl Iterator<Item = &RoadEdge> {
        self.outgoing[id].iter().map(move |&e| &self.edges[e])
    }

    /// Bounding box (min lat, min lon, max lat, max lon).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.nodes.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), p| (a.min(p.lat), b.min(p.lon), c.max(p.lat), d.max(p.lon)),
        )
    }

    /// Nearest node by haversine distance; ties go to the lower id.
    pub fn nearest_node(&self, p: GeoPoint) -> NodeId {
        let start = self
            .by_lat
            .partition_point(|&id| self.nodes[id].lat < p.lat);
        let lat_gap_km = |id: NodeId| {
            (self.nodes[id].lat - p.lat).abs().to_radians() * crate::geo::EARTH_RADIUS_KM
        };
        let mut best = (f64::INFINITY, usize::MAX);
        let consider = |id: NodeId, best: &mut (f64, usize)| {
            let d = haversine_km(p, self.nodes[id]);
            if d < best.0 || (d == best.0 && id < best.1) {
                *best = (d, id);
            }
        };
        for &id in &self.by_lat[start..] {
            if lat_gap_km(id) > best.0 {
                break;
            }
            consider(id, &mut best);
        }
        for &id in self.by_lat[..start].iter().rev() {
            if lat_gap_km(id) > best.0 {
                break;
            }
            consider(id, &mut best);
        }
        best.1
    }

    pub fn is_strongly_connected(&self) -> bool {
        let reach = |forward: bool| {
            let mut adj = vec![Vec::new(); self.nodes.len()];
            for e in &self.edges {
                if forward {
                    adj[e.from].push(e.to);
                } else {
                    adj[e.to].push(e.from);
                }
            }
            let mut seen = vec![false; self.nodes.len()];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Single-source shortest durations to every node (`INFINITY` when
    /// unreachable).
    pub fn durations_from(&self, source: NodeId) -> Vec<f64> {
        self.dijkstra(source, None, None).0
    }

    /// Shortest path as an edge-index list, optionally under substitute
    /// edge weights.
    fn shortest_path(
        &self,
        from: NodeId,
        to: NodeId,
        weights: Option<&[f64]>,
    ) -> Option<Vec<usize>> {
        let (dist, pred) = self.dijkstra(from, Some(to), weights);
        if !dist[to].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while cur != from {
            let e = pred[cur];
            path.push(e);
            cur = self.edges[e].from;
        }
        path.reverse();
        Some(path)
    }

    fn dijkstra(
        &self,
        source: NodeId,
        target: Option<NodeId>,
        weights: Option<&[f64]>,
    ) -> (Vec<f64>, Vec<usize>) {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if Some(u) == target {
                break;
            }
            for &ei in &self.outgoing[u] {
                let e = &self.edges[ei];
                let w = weights.map_or(e.duration_s, |w| w[ei]);
                let nd = d + w;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    pred[e.to] = ei;
                    heap.push(HeapEntry {
                        dist: nd,
                        node: e.to,
                    });
                }
            }
        }
        (dist, pred)
    }

    fn route_from_edges(&self, start: NodeId, path: &[usize]) -> Route {
        let mut nodes = Vec::with_capacity(path.len() + 1);
        nodes.push(start);
        let mut segment_durations = Vec::with_capacity(path.len());
        for &ei in path {
            nodes.push(self.edges[ei].to);
            segment_durations.push(self.edges[ei].duration_s);
        }
        Route::new(
            nodes.iter().map(|&n| self.nodes[n]).collect(),
            nodes,
            segment_durations,
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct HeapEntry {
    dist: f64,
    node: NodeId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// A driven path at node granularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub points: Vec<GeoPoint>,
    pub segment_durations: Vec<f64>,
    pub total_duration: f64,
}

impl Route {
    pub fn new(points: Vec<GeoPoint>, nodes: Vec<NodeId>, segment_durations: Vec<f64>) -> Self {
        debug_assert_eq!(segment_durations.len() + 1, points.len());
        let total_duration = segment_durations.iter().sum();
        Route {
            nodes,
            points,
            segment_durations,
            total_duration,
        }
    }

    pub fn origin(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("route has at least one node")
    }
}

/// Minimum-duration route between the nodes nearest to `from` and `to`,
/// followed by up to `alternates - 1` alternates found by penalising used
/// edges. Alternates must differ from every earlier route and stay within
/// [`ALTERNATE_MAX_STRETCH`] of the optimum. Sorted by duration.
pub fn route(
    net: &RoadNetwork,
    from: GeoPoint,
    to: GeoPoint,
    alternates: usize,
) -> Result<Vec<Route>> {
    route_nodes(
        net,
        net.nearest_node(from),
        net.nearest_node(to),
        alternates,
    )
}

pub fn route_nodes(
    net: &RoadNetwork,
    from: NodeId,
    to: NodeId,
    alternates: usize,
) -> Result<Vec<Route>> {
    if alternates < 1 {
        return Err(Error::invalid("at least one route must be requested"));
    }
    let best = net
        .shortest_path(from, to, None)
        .ok_or(Error::NoRoute { from, to })?;
    let mut routes = vec![net.route_from_edges(from, &best)];
    if best.is_empty() || alternates == 1 {
        return Ok(routes);
    }
    let optimum = routes[0].total_duration;
    let mut weights: Vec<f64> = net.edges.iter().map(|e| e.duration_s).collect();
    let mut last = best;
    for _ in 0..3 * (alternates - 1) {
        if routes.len() >= alternates {
            break;
        }
        for &e in &last {
            weights[e] *= ALTERNATE_PENALTY;
        }
        let Some(path) = net.shortest_path(from, to, Some(&weights)) else {
            break;
        };
        let candidate = net.route_from_edges(from, &path);
        if candidate.total_duration > ALTERNATE_MAX_STRETCH * optimum {
            break;
        }
        if routes.iter().all(|r| r.nodes != candidate.nodes) {
            routes.push(candidate);
        }
        last = path;
    }
    routes.sort_by(|a, b| a.total_duration.total_cmp(&b.total_duration));
    Ok(routes)
}

/// Counter of logical routing-service calls and simulated batch latency.
/// Safe to share across threads; no update is ever lost.
#[derive(Debug, Default)]
pub struct RoutingLedger {
    calls: AtomicU64,
    batches: AtomicU64,
    latency_ms: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LedgerSnapshot {
    pub call_count: u64,
    pub batch_count: u64,
    pub simulated_latency_ms: u64,
}

impl RoutingLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accounts `requests` routing requests issued as one batched submission.
    pub fn record(&self, requests: usize) {
        if requests == 0 {
            return;
        }
        let batches = requests.div_ceil(BATCH_SIZE) as u64;
        self.calls
            .fetch_add(requests as u64, AtomicOrdering::Relaxed);
        self.batches.fetch_add(batches, AtomicOrdering::Relaxed);
        self.latency_ms
            .fetch_add(batches * BATCH_LATENCY_MS, AtomicOrdering::Relaxed);
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(AtomicOrdering::Relaxed)
    }

    pub fn batch_count(&self) -> u64 {
        self.batches.load(AtomicOrdering::Relaxed)
    }

    pub fn simulated_latency_ms(&self) -> u64 {
        self.latency_ms.load(AtomicOrdering::Relaxed)
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            call_count: self.call_count(),
            batch_count: self.batch_count(),
            simulated_latency_ms: self.simulated_latency_ms(),
        }
    }
}

impl LedgerSnapshot {
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        LedgerSnapshot {
            call_count: self.call_count - earlier.call_count,
            batch_count: self.batch_count - earlier.batch_count,
            simulated_latency_ms: self.simulated_latency_ms - earlier.simulated_latency_ms,
        }
    }
}

/// Routing service contract. Implementations must be usable from many
/// threads at once.
pub trait Router: Sync {
    fn network(&self) -> &RoadNetwork;

    fn route(&self, from: GeoPoint, to: GeoPoint, alternates: usize) -> Result<Vec<Route>> {
        route(self.network(), from, to, alternates)
    }
}

impl Router for RoadNetwork {
    fn network(&self) -> &RoadNetwork {
        self
    }
}

/// Routes every request with up to `alternates` routes each, charging the
/// ledger once per request in batches of [`BATCH_SIZE`]. An unreachable pair
/// yields an error in its slot without failing the batch.
pub fn batch_route_alternates(
    router: &dyn Router,
    requests: &[(GeoPoint, GeoPoint)],
    alternates: usize,
    ledger: &RoutingLedger,
) -> Vec<Result<Vec<Route>>> {
    let mut out = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(BATCH_SIZE) {
        ledger.record(chunk.len());
        out.extend(chunk.iter().map(|&(a, b)| router.route(a, b, alternates)));
    }
    out
}

pub fn batch_route(
    router: &dyn Router,
    requests: &[(GeoPoint, GeoPoint)],
    ledger: &RoutingLedger,
) -> Vec<Result<Route>> {
    batch_route_alternates(router, requests, 1, ledger)
        .into_iter()
        .map(|r| r.map(|mut routes| routes.swap_remove(0)))
        .collect()
}

/// Node-to-node travel durations memoised per source node.
///
/// Memoisation only saves Dijkstra work; callers still charge the ledger for
/// every logical segment request.
pub struct DurationCache<'a> {
    net: &'a RoadNetwork,
    trees: RwLock<HashMap<NodeId, Arc<Vec<f64>>>>,
}

impl<'a> DurationCache<'a> {
    pub fn new(net: &'a RoadNetwork) -> Self {
        DurationCache {
            net,
            trees: RwLock::new(HashMap::new()),
        }
    }

    pub fn network(&self) -> &'a RoadNetwork {
        self.net
    }

    pub fn tree(&self, from: NodeId) -> Arc<Vec<f64>> {
        if let Some(t) = self.trees.read().expect("cache lock").get(&from) {
            return Arc::clone(t);
        }
        let tree = Arc::new(self.net.durations_from(from));
        let mut trees = self.trees.write().expect("cache lock");
        Arc::clone(trees.entry(from).or_insert(tree))
    }

    /// `None` when `to` is unreachable from `from`.
    pub fn duration(&self, from: NodeId, to: NodeId) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let d = self.tree(from)[to];
        d.is_finite().then_some(d)
    }
}
