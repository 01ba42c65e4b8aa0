//! Cross-polytope LSH for maximum inner product search over ride vectors.
//!
//! Each hash function rotates its input with a seeded random orthonormal
//! matrix and reports the closest signed basis vector. The rotation may be
//! truncated to its first `cp_dim` rows; `cp_dim == dim` is the full
//! cross-polytope hash, smaller values give coarser buckets.

use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{combine, derive_seed, mix64};
use crate::represent::{
    feature_hash, normalize_dataset, preprocessing_vector, query_vector, st_edge_set, transform_P,
    transform_Q, unit_normalize, DenseVector, DEFAULT_APPENDED_TERMS, DEFAULT_HASHED_DIM,
    DEFAULT_NORM_BOUND,
};
use crate::trips::{Ride, RideId};
use crate::utility::rank_desc;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_TABLES: usize = 50;
pub const DEFAULT_HASH_BITS: usize = 10;
pub const DEFAULT_PROBES: usize = 4;
pub const DEFAULT_CP_DIM: usize = 1;

/// One cross-polytope hash: `cp_dim` orthonormal rows of length `dim`.
#[derive(Clone, Debug)]
pub struct CpHashFunction {
    dim: usize,
    cp_dim: usize,
    rows: Vec<f64>,
}

impl CpHashFunction {
    pub fn new(dim: usize, cp_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim == 0 || cp_dim == 0 || cp_dim > dim {
            return Err(Error::invalid(format!(
                "need 1 <= cp_dim <= dim, got cp_dim={cp_dim}, dim={dim}"
            )));
        }
        let mut rows = vec![0.0; cp_dim * dim];
        for r in 0..cp_dim {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let mut v = row;
                // Two Gram-Schmidt passes keep the rows orthogonal to rounding level.
                for _ in 0..2 {
                    for prev in 0..r {
                        let p = &rows[prev * dim..(prev + 1) * dim];
                        let d: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                        v.iter_mut().zip(p).for_each(|(a, b)| *a -= d * b);
                    }
                }
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-8 {
                    rows[r * dim..(r + 1) * dim]
                        .iter_mut()
                        .zip(&v)
                        .for_each(|(o, a)| *o = a / n);
                    break;
                }
            }
        }
        Ok(CpHashFunction { dim, cp_dim, rows })
    }

    /// Full cross-polytope hash with no rotation.
    pub fn identity(dim: usize) -> Self {
        let mut rows = vec![0.0; dim * dim];
        for i in 0..dim {
            rows[i * dim + i] = 1.0;
        }
        CpHashFunction {
            dim,
            cp_dim: dim,
            rows,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cp_dim(&self) -> usize {
        self.cp_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rotate(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cp_dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Index of the signed basis vector closest to `y`: `2 * argmax |y_i|`, plus
/// one when that coordinate is negative. Ties go to the lowest index.
fn closest_vertex(y: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if v.abs() > y[best].abs() {
            best = i;
        }
    }
    2 * best as u32 + u32::from(y[best] < 0.0)
}

pub fn cp_hash(h: &CpHashFunction, x: &DenseVector) -> Result<u32> {
    if x.len() != h.dim {
        return Err(Error::invalid(format!(
            "vector has dimension {}, hash expects {}",
            x.len(),
            h.dim
        )));
    }
    if x.is_zero() {
        return Err(Error::invalid("cannot hash the zero vector"));
    }
    Ok(closest_vertex(&h.rotate(x.as_slice())))
}

/// Sparse view used on both the build and query side.
type Nonzeros = Vec<(u32, f64)>;

fn nonzeros(x: &DenseVector) -> Nonzeros {
    x.nonzeros()
        .into_iter()
        .map(|(i, v)| (i as u32, v))
        .collect()
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// `t` concatenated hash functions forming one table's bucket key.
#[derive(Clone, Debug)]
pub struct AmplifiedHash {
    functions: Vec<CpHashFunction>,
    key_seed: u64,
    /// Column-major copy of all rows: for input coordinate `j`, the slice
    /// `packed[j * width..(j + 1) * width]` holds every row's entry `j`.
    packed: Vec<f64>,
    width: usize,
}

impl AmplifiedHash {
    pub fn new(dim: usize, t: usize, cp_dim: usize, seed: u64) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("need at least one hash function per table"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let functions = (0..t)
            .map(|_| CpHashFunction::new(dim, cp_dim, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let width = t * cp_dim;
        let mut packed = vec![0.0; dim * width];
        for (f, h) in functions.iter().enumerate() {
            for r in 0..cp_dim {
                for (j, &v) in h.row(r).iter().enumerate() {
                    packed[j * width + f * cp_dim + r] = v;
                }
            }
        }
        Ok(AmplifiedHash {
            functions,
            key_seed: mix64(seed),
            packed,
            width,
        })
    }

    pub fn functions(&self) -> &[CpHashFunction] {
        &self.functions
    }

    fn project(&self, x: &[(u32, f64)]) -> Vec<f64> {
        let mut y = vec![0.0; self.width];
        for &(j, v) in x {
            let col = &self.packed[j as usize * self.width..(j as usize + 1) * self.width];
            y.iter_mut().zip(col).for_each(|(o, c)| *o += v * c);
        }
        y
    }

    fn key_of(&self, vertices: impl Iterator<Item = u32>) -> u64 {
        vertices.fold(self.key_seed, |h, v| combine(h, v as u64))
    }

    fn cp_dim(&self) -> usize {
        self.functions[0].cp_dim
    }

    fn vertices(&self, y: &[f64]) -> Vec<u32> {
        y.chunks(self.cp_dim()).map(closest_vertex).collect()
    }

    pub fn key(&self, x: &DenseVector) -> u64 {
        let y = self.project(&nonzeros(x));
        self.key_of(self.vertices(&y).into_iter())
    }

    /// Bucket keys in probing order: the home bucket first, then buckets
    /// reached by moving the hash functions with the smallest score margin
    /// to their runner-up vertices, cheapest perturbation sets first.
    fn probe_keys(&self, y: &[f64], probes: usize) -> Vec<u64> {
        let cp = self.cp_dim();
        let base = self.vertices(y);
        let mut keys = vec![self.key_of(base.iter().copied())];
        if probes <= 1 {
            return keys;
        }
        // Alternative vertices per function with the score they give up.
        // A function's alternative of rank r can only appear after r cheaper
        // single-function probes, so `probes` alternatives per function suffice.
        let mut alts: Vec<(f64, usize, u32)> = Vec::new();
        for (f, chunk) in y.chunks(cp).enumerate() {
            let best = chunk[(base[f] / 2) as usize].abs();
            let mut own: Vec<(f64, u32)> = (0..2 * cp as u32)
                .filter(|&v| v != base[f])
                .map(|v| {
                    let c = chunk[(v / 2) as usize];
                    let score = if v % 2 == 0 { c } else { -c };
                    (best - score, v)
                })
                .collect();
            own.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            own.truncate(probes);
            alts.extend(own.into_iter().map(|(c, v)| (c, f, v)));
        }
        alts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        #[derive(PartialEq)]
        struct Set {
            cost: f64,
            members: Vec<usize>,
        }
        impl Eq for Set {}
        impl Ord for Set {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                o.cost
                    .total_cmp(&self.cost)
                    .then_with(|| o.members.cmp(&self.members))
            }
        }
        impl PartialOrd for Set {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }

        let mut heap = BinaryHeap::new();
        if !alts.is_empty() {
            heap.push(Set {
                cost: alts[0].0,
                members: vec![0],
            });
        }
        while keys.len() < probes {
            let Some(set) = heap.pop() else { break };
            let last = *set.members.last().unwrap();
            if last + 1 < alts.len() {
                let mut shifted = set.members.clone();
                *shifted.last_mut().unwrap() = last + 1;
                heap.push(Set {
                    cost: set.cost - alts[last].0 + alts[last + 1].0,
                    members: shifted,
                });
                let mut expanded = set.members.clone();
                expanded.push(last + 1);
                heap.push(Set {
                    cost: set.cost + alts[last + 1].0,
                    members: expanded,
                });
            }
            let mut fs: Vec<usize> = set.members.iter().map(|&m| alts[m].1).collect();
            fs.sort_unstable();
            if fs.windows(2).any(|w| w[0] == w[1]) {
                continue;
            }
            let mut v = base.clone();
            for &m in &set.members {
                v[alts[m].1] = alts[m].2;
            }
            keys.push(self.key_of(v.into_iter()));
        }
        keys
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    pub tables: usize,
    pub hash_bits: usize,
    pub cp_dim: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            tables: DEFAULT_TABLES,
            hash_bits: DEFAULT_HASH_BITS,
            cp_dim: DEFAULT_CP_DIM,
            seed: 0,
        }
    }
}

/// A vector stored in the index, tagged with its ride and route.
#[derive(Clone, Debug)]
pub struct IndexItem {
    pub ride: RideId,
    pub route: usize,
    pub vector: DenseVector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryResult {
    pub matches: Vec<(RideId, f64)>,
    /// Distinct stored vectors re-scored for this query.
    pub candidates: usize,
}

#[derive(Debug)]
pub struct LshIndex {
    params: IndexParams,
    dim: usize,
    hashes: Vec<AmplifiedHash>,
    tables: Vec<HashMap<u64, Vec<u32>>>,
    items: Vec<(RideId, usize)>,
    vectors: Vec<Nonzeros>,
}

impl LshIndex {
    pub fn build(items: &[IndexItem], params: &IndexParams) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::degenerate("cannot build an index over no vectors"));
        }
        if params.tables == 0 || params.hash_bits == 0 {
            return Err(Error::invalid(format!(
                "need tables >= 1 and hash_bits >= 1, got {} and {}",
                params.tables, params.hash_bits
            )));
        }
        if u32::try_from(items.len()).is_err() {
            return Err(Error::invalid("too many vectors for one index"));
        }
        let dim = items[0].vector.len();
        if let Some(bad) = items.iter().find(|it| it.vector.len() != dim) {
            return Err(Error::invalid(format!(
                "ride {} has dimension {}, expected {dim}",
                bad.ride,
                bad.vector.len()
            )));
        }
        let vectors: Vec<Nonzeros> = items.iter().map(|it| nonzeros(&it.vector)).collect();
        let hashes = (0..params.tables)
            .into_par_iter()
            .map(|l| {
                AmplifiedHash::new(
                    dim,
                    params.hash_bits,
                    params.cp_dim,
                    combine(params.seed, l as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let tables = hashes
            .par_iter()
            .map(|h| {
                let mut table: HashMap<u64, Vec<u32>> = HashMap::new();
                for (i, x) in vectors.iter().enumerate() {
                    let y = h.project(x);
                    table
                        .entry(h.key_of(h.vertices(&y).into_iter()))
                        .or_default()
                        .push(i as u32);
                }
                table
            })
            .collect();
        Ok(LshIndex {
            params: *params,
            dim,
            hashes,
            tables,
            items: items.iter().map(|it| (it.ride, it.route)).collect(),
            vectors,
        })
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tables(&self) -> &[HashMap<u64, Vec<u32>>] {
        &self.tables
    }

    pub fn hashes(&self) -> &[AmplifiedHash] {
        &self.hashes
    }

    /// Top-k stored rides by exact inner product with `q` among the vectors
    /// found in the probed buckets. `exclude` drops one ride id (the query's own).
    pub fn query(
        &self,
        q: &DenseVector,
        k: usize,
        probes: usize,
        exclude: Option<RideId>,
    ) -> Result<QueryResult> {
        if k == 0 || probes == 0 {
            return Err(Error::invalid(format!(
                "need k >= 1 and probes >= 1, got {k} and {probes}"
            )));
        }
        if q.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has dimension {}, index expects {}",
                q.len(),
                self.dim
            )));
        }
        let qn = nonzeros(q);
        let mut seen: Vec<u32> = Vec::new();
        for (h, table) in self.hashes.iter().zip(&self.tables) {
            let y = h.project(&qn);
            for key in h.probe_keys(&y, probes) {
                if let Some(bucket) = table.get(&key) {
                    seen.extend_from_slice(bucket);
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        let mut best: BTreeMap<RideId, f64> = BTreeMap::new();
        for &i in &seen {
            let ride = self.items[i as usize].0;
            if Some(ride) == exclude {
                continue;
            }
            let s = sparse_dot(&qn, &self.vectors[i as usize]);
            best.entry(ride).and_modify(|b| *b = b.max(s)).or_insert(s);
        }
        let mut matches: Vec<(RideId, f64)> = best.into_iter().collect();
        rank_desc(&mut matches);
        matches.truncate(k);
        Ok(QueryResult {
            matches,
            candidates: seen.len(),
        })
    }

    /// Exact top-k over every stored vector, for comparison with `query`.
    pub fn exhaustive(
        &self,
        q: &DenseVector,
        k: usize,
        exclude: Option<RideId>,
    ) -> Vec<(RideId, f64)> {
        let qn = nonzeros(q);
        let mut best: BTreeMap<RideId, f64> = BTreeMap::new();
        for (i, &(ride, _)) in self.items.iter().enumerate() {
            if Some(ride) != exclude {
                let s = sparse_dot(&qn, &self.vectors[i]);
                best.entry(ride).and_modify(|b| *b = b.max(s)).or_insert(s);
            }
        }
        let mut matches: Vec<_> = best.into_iter().collect();
        rank_desc(&mut matches);
        matches.truncate(k);
        matches
    }
}

pub fn build_index(
    items: &[IndexItem],
    tables: usize,
    hash_bits: usize,
    seed: u64,
) -> Result<LshIndex> {
    LshIndex::build(
        items,
        &IndexParams {
            tables,
            hash_bits,
            seed,
            ..IndexParams::default()
        },
    )
}

/// `(L, t)` from the dataset size: `t = ceil(log2 n)` in `[4, 20]`,
/// `L = ceil(n^rho * ln(k / f))` in `[8, 512]`.
pub fn suggest_params(n: usize, k: usize, f: f64, rho: f64) -> Result<(usize, usize)> {
    if n < 2 || k == 0 || !(f > 0.0 && f < 1.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!(
            "need n >= 2, k >= 1, f and rho in (0, 1); got n={n}, k={k}, f={f}, rho={rho}"
        )));
    }
    let t = ((n as f64).log2().ceil() as usize).clamp(4, 20);
    let raw = ((n as f64).powf(rho) * (k as f64 / f).ln()).ceil();
    let l = if raw.is_finite() && raw > 0.0 {
        (raw as usize).clamp(8, 512)
    } else {
        8
    };
    Ok((l, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshConfig {
    pub tables: usize,
    pub hash_bits: usize,
    pub probes: usize,
    pub dim: usize,
    pub m: usize,
    #[serde(rename = "U")]
    pub norm_bound: f64,
    pub seed: u64,
    pub k: usize,
    pub cp_dim: usize,
    pub space_precision: usize,
    pub time_interval_s: f64,
    pub centering: bool,
}

impl Default for LshConfig {
    fn default() -> Self {
        LshConfig {
            tables: DEFAULT_TABLES,
            hash_bits: DEFAULT_HASH_BITS,
            probes: DEFAULT_PROBES,
            dim: DEFAULT_HASHED_DIM,
            m: DEFAULT_APPENDED_TERMS,
            norm_bound: DEFAULT_NORM_BOUND,
            seed: 0,
            k: DEFAULT_K,
            cp_dim: DEFAULT_CP_DIM,
            space_precision: 7,
            time_interval_s: 1200.0,
            centering: false,
        }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.tables == 0 {
            errs.push("lsh.tables must be >= 1".to_string());
        }
        if self.hash_bits == 0 {
            errs.push("lsh.hash_bits must be >= 1".to_string());
        }
        if self.probes == 0 {
            errs.push("lsh.probes must be >= 1".to_string());
        }
        if self.k == 0 {
            errs.push("lsh.k must be >= 1".to_string());
        }
        if self.dim < 2 || !self.dim.is_power_of_two() {
            errs.push(format!(
                "lsh.dim must be a power of two >= 2, got {}",
                self.dim
            ));
        }
        if !(self.norm_bound > 0.0 && self.norm_bound < 1.0) {
            errs.push(format!("lsh.U must lie in (0, 1), got {}", self.norm_bound));
        }
        if self.cp_dim == 0 || self.cp_dim > self.dim + self.m {
            errs.push(format!(
                "lsh.cp_dim must lie in [1, dim + m], got {}",
                self.cp_dim
            ));
        }
        if self.space_precision == 0 || self.space_precision > crate::geo::GEOHASH_MAX_PRECISION {
            errs.push(format!(
                "space precision must lie in [1, 12], got {}",
                self.space_precision
            ));
        }
        if !(self.time_interval_s > 0.0) {
            errs.push(format!(
                "time interval must be positive, got {}",
                self.time_interval_s
            ));
        }
        errs
    }
}

/// Output of the end-to-end search over a ride pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PotentialMatches {
    pub lists: BTreeMap<RideId, Vec<(RideId, f64)>>,
    /// Rides whose route produced no space-time edge; they get empty lists.
    pub degenerate: Vec<RideId>,
    /// Distinct stored vectors re-scored per query, in ride order.
    pub candidates: Vec<usize>,
}

impl PotentialMatches {
    pub fn mean_candidates(&self) -> f64 {
        if self.candidates.is_empty() {
            0.0
        } else {
            self.candidates.iter().sum::<usize>() as f64 / self.candidates.len() as f64
        }
    }
}

/// Data-side and query-side vectors of a pool, ready for indexing.
#[derive(Clone, Debug)]
pub struct EncodedPool {
    pub items: Vec<IndexItem>,
    /// Query vector per ride, `None` for degenerate rides.
    pub queries: Vec<Option<DenseVector>>,
    pub degenerate: Vec<RideId>,
}

/// Runs every ride through edge-set extraction, feature hashing and the
/// asymmetric transforms. Alternate routes become extra data-side vectors
/// under the same ride id; queries use the best route.
pub fn encode_pool(rides: &[Ride], cfg: &LshConfig) -> Result<EncodedPool> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::invalid(errs.join("; ")));
    }
    let fh_seed = derive_seed(cfg.seed, "feature-hash");
    let per_ride: Vec<(Vec<(usize, DenseVector)>, Option<DenseVector>)> = rides
        .par_iter()
        .map(|r| -> Result<_> {
            let mut data = Vec::new();
            for (i, route) in r.routes.iter().enumerate() {
                let set = st_edge_set(
                    route,
                    r.request_time,
                    cfg.space_precision,
                    cfg.time_interval_s,
                )?;
                if !set.is_empty() {
                    data.push((
                        i,
                        feature_hash(&preprocessing_vector(&set), cfg.dim, fh_seed)?,
                    ));
                }
            }
            let set = st_edge_set(
                r.best_route(),
                r.request_time,
                cfg.space_precision,
                cfg.time_interval_s,
            )?;
            let q = if set.is_empty() {
                None
            } else {
                Some(feature_hash(&query_vector(&set), cfg.dim, fh_seed)?)
            };
            Ok((data, q))
        })
        .collect::<Result<_>>()?;

    let mut owners = Vec::new();
    let mut raw = Vec::new();
    let mut queries = Vec::with_capacity(rides.len());
    let mut degenerate = Vec::new();
    for (r, (data, q)) in rides.iter().zip(per_ride) {
        for (route, v) in data {
            if !v.is_zero() {
                owners.push((r.id, route));
                raw.push(v);
            }
        }
        match q {
            Some(q) if !q.is_zero() => queries.push(Some(q)),
            _ => {
                degenerate.push(r.id);
                queries.push(None);
            }
        }
    }
    if raw.is_empty() {
        return Ok(EncodedPool {
            items: Vec::new(),
            queries,
            degenerate,
        });
    }
    if cfg.centering {
        crate::represent::center(&mut raw);
    }
    let (scaled, _) = normalize_dataset(&raw, cfg.norm_bound)?;
    let items = owners
        .into_iter()
        .zip(scaled)
        .map(|((ride, route), v)| {
            Ok(IndexItem {
                ride,
                route,
                vector: transform_P(&v, cfg.m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = queries
        .into_iter()
        .map(|q| {
            q.map(|q| transform_Q(&unit_normalize(&q)?, cfg.m))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedPool {
        items,
        queries,
        degenerate,
    })
}

/// Top-k potential co-riders for every ride in the pool.
pub fn find_potential_matches(rides: &[Ride], cfg: &LshConfig) -> Result<PotentialMatches> {
    let pool = encode_pool(rides, cfg)?;
    let mut out = PotentialMatches {
        degenerate: pool.degenerate.clone(),
        ..Default::default()
    };
    if pool.items.is_empty() {
        out.lists = rides.iter().map(|r| (r.id, Vec::new())).collect();
        out.candidates = vec![0; rides.len()];
        return Ok(out);
    }
    let params = IndexParams {
        tables: cfg.tables,
        hash_bits: cfg.hash_bits,
        cp_dim: cfg.cp_dim,
        seed: derive_seed(cfg.seed, "lsh-index"),
    };
    let index = LshIndex::build(&pool.items, &params)?;
    let results: Vec<QueryResult> = rides
        .par_iter()
        .zip(&pool.queries)
        .map(|(r, q)| match q {
            Some(q) => index.query(q, cfg.k, cfg.probes, Some(r.id)),
            None => Ok(QueryResult::default()),
        })
        .collect::<Result<_>>()?;
    for (r, res) in rides.iter().zip(results) {
        out.candidates.push(res.candidates);
        out.lists.insert(r.id, res.matches);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{build_grid_network, route_nodes};
    use proptest::prelude::*;
    use rand::Rng;

    fn e(dim: usize, i: usize, s: f64) -> DenseVector {
        let mut v = DenseVector::zeros(dim);
        v.0[i] = s;
        v
    }

    #[test]
    fn identity_seam() {
        let h = CpHashFunction::identity(4);
        assert_eq!(cp_hash(&h, &e(4, 0, 1.0)).unwrap(), 0);
        assert_eq!(cp_hash(&h, &e(4, 0, -1.0)).unwrap(), 1);
        assert_eq!(cp_hash(&h, &e(4, 3, -2.0)).unwrap(), 7);
        assert_eq!(
            cp_hash(&h, &DenseVector(vec![1.0, -1.0, 0.5, 0.0])).unwrap(),
            0
        );
        assert!(matches!(
            cp_hash(&h, &DenseVector::zeros(4)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            cp_hash(&h, &DenseVector::zeros(3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rotation_is_orthonormal_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = CpHashFunction::new(64, 64, &mut rng).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                let d: f64 = h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-6, "{i},{j}: {d}");
            }
        }
        let again = CpHashFunction::new(64, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(h.rows, again.rows);
        assert!(CpHashFunction::new(4, 5, &mut rng).is_err());
    }

    #[test]
    fn packed_projection_matches_rows() {
        let a = AmplifiedHash::new(20, 3, 4, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DenseVector((0..20).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = a.project(&nonzeros(&x));
        let expect: Vec<f64> = a
            .functions()
            .iter()
            .flat_map(|f| f.rotate(x.as_slice()))
            .collect();
        for (p, q) in y.iter().zip(&expect) {
            assert!((p - q).abs() < 1e-12);
        }
        let verts = a.vertices(&y);
        for (f, v) in a.functions().iter().zip(verts) {
            assert_eq!(cp_hash(f, &x).unwrap(), v);
        }
    }

    #[test]
    fn probes_start_home_and_are_distinct() {
        let a = AmplifiedHash::new(16, 5, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DenseVector((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = a.project(&nonzeros(&x));
        let keys = a.probe_keys(&y, 8);
        assert_eq!(keys.len(), 8);
        assert_eq!(keys[0], a.key(&x));
        let mut k2 = keys.clone();
        k2.sort_unstable();
        k2.dedup();
        assert_eq!(k2.len(), 8);
        assert_eq!(a.probe_keys(&y, 1), vec![keys[0]]);
    }

    #[test]
    fn first_extra_probe_flips_the_smallest_margin() {
        let a = AmplifiedHash::new(8, 4, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DenseVector((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = a.project(&nonzeros(&x));
        let base = a.vertices(&y);
        let flip = (0..4)
            .min_by(|&i, &j| y[i].abs().total_cmp(&y[j].abs()))
            .unwrap();
        let mut v = base.clone();
        v[flip] ^= 1;
        assert_eq!(a.probe_keys(&y, 2)[1], a.key_of(v.into_iter()));
    }

    /// Every perturbation set of at most two functions, ordered by cost,
    /// computed without the heap.
    #[test]
    fn probe_order_matches_enumeration() {
        let a = AmplifiedHash::new(6, 5, 1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let x = DenseVector((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let y = a.project(&nonzeros(&x));
            let base = a.vertices(&y);
            let mut sets: Vec<(f64, u32)> = (0u32..32)
                .map(|mask| {
                    let cost: f64 = (0..5)
                        .filter(|b| mask >> b & 1 == 1)
                        .map(|b| 2.0 * y[b].abs())
                        .sum();
                    (cost, mask)
                })
                .collect();
            sets.sort_by(|p, q| p.0.total_cmp(&q.0));
            let keys = a.probe_keys(&y, 6);
            for (i, &(_, mask)) in sets.iter().take(6).enumerate() {
                let v: Vec<u32> = base
                    .iter()
                    .enumerate()
                    .map(|(f, &b)| if mask >> f & 1 == 1 { b ^ 1 } else { b })
                    .collect();
                assert_eq!(keys[i], a.key_of(v.into_iter()), "probe {i}");
            }
        }
    }

    fn items(vs: Vec<DenseVector>) -> Vec<IndexItem> {
        vs.into_iter()
            .enumerate()
            .map(|(i, v)| IndexItem {
                ride: i as RideId,
                route: 0,
                vector: v,
            })
            .collect()
    }

    #[test]
    fn single_vector_in_every_table() {
        let idx = build_index(&items(vec![e(8, 2, 0.5)]), 3, 4, 1).unwrap();
        let total: usize = idx
            .tables()
            .iter()
            .flat_map(|t| t.values())
            .map(Vec::len)
            .sum();
        assert_eq!(total, 3);
        assert!(matches!(
            build_index(&[], 3, 4, 1),
            Err(Error::DegenerateInput(_))
        ));
        assert!(build_index(&items(vec![e(8, 2, 0.5)]), 0, 4, 1).is_err());
    }

    #[test]
    fn identical_vectors_collide_and_rank_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut vs: Vec<DenseVector> = (0..200)
            .map(|_| DenseVector((0..32).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        vs.push(vs[17].clone());
        let idx = LshIndex::build(
            &items(vs.clone()),
            &IndexParams {
                tables: 10,
                hash_bits: 6,
                cp_dim: 4,
                seed: 5,
            },
        )
        .unwrap();
        for t in idx.tables() {
            assert!(t.values().any(|b| b.contains(&17) && b.contains(&200)));
        }
        let res = idx.query(&vs[17], 3, 1, Some(17)).unwrap();
        assert_eq!(res.matches[0].0, 200);
        assert!(res.candidates >= 2);
    }

    #[test]
    fn query_scores_are_exact_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vs: Vec<DenseVector> = (0..300)
            .map(|_| DenseVector((0..24).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let idx = LshIndex::build(
            &items(vs.clone()),
            &IndexParams {
                tables: 8,
                hash_bits: 2,
                cp_dim: 2,
                seed: 1,
            },
        )
        .unwrap();
        let q = DenseVector((0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
        let res = idx.query(&q, 10, 3, None).unwrap();
        assert!(!res.matches.is_empty());
        for w in res.matches.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for &(id, s) in &res.matches {
            assert!((s - q.dot(&vs[id as usize])).abs() < 1e-12);
        }
        let full = idx.exhaustive(&q, 10, None);
        assert!(res
            .matches
            .iter()
            .zip(&full)
            .all(|(a, b)| a.1 <= b.1 + 1e-12));
        assert!(idx.query(&q, 0, 1, None).is_err());
        assert!(idx.query(&q, 1, 0, None).is_err());
    }

    #[test]
    fn more_probes_never_lose_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vs: Vec<DenseVector> = (0..500)
            .map(|_| DenseVector((0..16).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let idx = LshIndex::build(
            &items(vs),
            &IndexParams {
                tables: 4,
                hash_bits: 6,
                cp_dim: 2,
                seed: 3,
            },
        )
        .unwrap();
        let q = DenseVector((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut last = 0;
        for p in 1..8 {
            let c = idx.query(&q, 10, p, None).unwrap().candidates;
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn duplicate_routes_keep_the_best_score() {
        let its = vec![
            IndexItem {
                ride: 1,
                route: 0,
                vector: DenseVector(vec![0.1, 0.0]),
            },
            IndexItem {
                ride: 1,
                route: 1,
                vector: DenseVector(vec![0.4, 0.0]),
            },
            IndexItem {
                ride: 2,
                route: 0,
                vector: DenseVector(vec![0.2, 0.0]),
            },
        ];
        let idx = LshIndex::build(
            &its,
            &IndexParams {
                tables: 2,
                hash_bits: 1,
                cp_dim: 1,
                seed: 0,
            },
        )
        .unwrap();
        let res = idx.query(&DenseVector(vec![1.0, 0.0]), 5, 4, None).unwrap();
        assert_eq!(res.matches, vec![(1, 0.4), (2, 0.2)]);
        assert_eq!(res.candidates, 3);
    }

    #[test]
    fn suggest_params_examples() {
        assert_eq!(suggest_params(20000, 10, 0.1, 0.5).unwrap(), (512, 15));
        assert_eq!(suggest_params(1024, 10, 0.1, 0.5).unwrap().1, 10);
        assert_eq!(suggest_params(1024, 1, 0.999_999, 0.5).unwrap().0, 8);
        assert_eq!(suggest_params(2, 10, 0.1, 0.5).unwrap().1, 4);
        // n = 1000: 1000^0.5 * ln(100) = 145.6...
        assert_eq!(suggest_params(1000, 10, 0.1, 0.5).unwrap(), (146, 10));
        assert!(suggest_params(1, 10, 0.1, 0.5).is_err());
        assert!(suggest_params(10, 10, 1.0, 0.5).is_err());
        assert!(suggest_params(10, 10, 0.1, 0.0).is_err());
    }

    fn line_rides(n: usize) -> Vec<Ride> {
        let g = build_grid_network(8, 8, 200.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        (0..n)
            .map(|i| {
                let (a, b) = loop {
                    let a = rng.random_range(0..64);
                    let b = rng.random_range(0..64);
                    if a != b {
                        break (a, b);
                    }
                };
                let routes = route_nodes(&g, a, b, 2).unwrap();
                Ride::new(
                    i as RideId,
                    g.node(a),
                    g.node(b),
                    1_000_000.0 + rng.random_range(0..600) as f64,
                    routes,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn two_identical_rides_list_each_other() {
        let mut rides = line_rides(1);
        let mut twin = rides[0].clone();
        twin.id = 1;
        rides.push(twin);
        let cfg = LshConfig {
            tables: 10,
            ..LshConfig::default()
        };
        let pm = find_potential_matches(&rides, &cfg).unwrap();
        assert_eq!(pm.lists[&0][0].0, 1);
        assert_eq!(pm.lists[&1][0].0, 0);
        assert!(pm.degenerate.is_empty());
    }

    #[test]
    fn pipeline_is_deterministic_and_bounded() {
        let rides = line_rides(120);
        let cfg = LshConfig {
            seed: 4,
            ..LshConfig::default()
        };
        let a = find_potential_matches(&rides, &cfg).unwrap();
        let b = find_potential_matches(&rides, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lists.len(), rides.len());
        for (id, list) in &a.lists {
            assert!(list.len() <= cfg.k);
            assert!(list.iter().all(|(o, _)| o != id));
        }
        let bad = LshConfig {
            dim: 100,
            probes: 0,
            ..LshConfig::default()
        };
        assert_eq!(bad.validate().len(), 2);
        assert!(find_potential_matches(&rides, &bad).is_err());
    }

    #[test]
    fn scores_equal_transformed_inner_products() {
        let rides = line_rides(60);
        let cfg = LshConfig::default();
        let pool = encode_pool(&rides, &cfg).unwrap();
        let pm = find_potential_matches(&rides, &cfg).unwrap();
        for (r, q) in rides.iter().zip(&pool.queries) {
            let Some(q) = q else { continue };
            for &(id, s) in &pm.lists[&r.id] {
                assert!(pool
                    .items
                    .iter()
                    .filter(|it| it.ride == id)
                    .any(|it| (q.dot(&it.vector) - s).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn single_cell_rides_are_degenerate() {
        let g = build_grid_network(2, 2, 5.0, 1).unwrap();
        let routes = route_nodes(&g, 0, 3, 1).unwrap();
        let rides = vec![
            Ride::new(0, g.node(0), g.node(3), 0.0, routes.clone()).unwrap(),
            Ride::new(1, g.node(0), g.node(3), 0.0, routes).unwrap(),
        ];
        let pm = find_potential_matches(&rides, &LshConfig::default()).unwrap();
        assert_eq!(pm.degenerate, vec![0, 1]);
        assert!(pm.lists.values().all(Vec::is_empty));
    }

    proptest! {
        #[test]
        fn antipodal_vectors_never_collide(seed in 0u64..500, xs in prop::collection::vec(-1.0f64..1.0, 12)) {
            let x = DenseVector(xs);
            prop_assume!(!x.is_zero());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = CpHashFunction::new(12, 12, &mut rng).unwrap();
            let neg = DenseVector(x.0.iter().map(|v| -v).collect());
            let a = cp_hash(&h, &x).unwrap();
            let b = cp_hash(&h, &neg).unwrap();
            prop_assert!(a < 24 && b < 24);
            prop_assert_eq!(a ^ 1, b);
        }
    }
}
