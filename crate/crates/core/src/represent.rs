//! Ride → vector pipeline.
//!
//! A route becomes a set of directed space-time edges: each route point is
//! mapped to a (geohash cell, time bucket) node using the arrival time had
//! the ride been served without delay, consecutive repeats collapse, and each
//! node transition becomes an edge weighted by the travel time spent on it.
//! The data-side vector carries those costs, the query-side vector carries
//! ones, so their inner product is the cost of the shared edges.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::{geohash_encode, time_bucket, CellId, TimeBucket};
use crate::hashing::{combine, mix64};
use crate::roadnet::Route;

/// Data-side norm bound before the asymmetric transform.
pub const DEFAULT_NORM_BOUND: f64 = 0.75;
/// Number of norm terms appended by the asymmetric transforms.
pub const DEFAULT_APPENDED_TERMS: usize = 2;
pub const DEFAULT_HASHED_DIM: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpaceTimeNode {
    pub cell: CellId,
    pub bucket: TimeBucket,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpaceTimeEdge {
    pub from: SpaceTimeNode,
    pub to: SpaceTimeNode,
}

impl SpaceTimeEdge {
    fn key(&self, seed: u64) -> u64 {
        let mut h = mix64(seed);
        for node in [self.from, self.to] {
            h = combine(h, node.cell.bits());
            h = combine(h, node.cell.precision() as u64);
            h = combine(h, node.bucket.0 as u64);
        }
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpaceTimeEdgeSet {
    entries: BTreeMap<SpaceTimeEdge, f64>,
}

impl SpaceTimeEdgeSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SpaceTimeEdge, &f64)> {
        self.entries.iter()
    }

    pub fn cost(&self, e: &SpaceTimeEdge) -> Option<f64> {
        self.entries.get(e).copied()
    }

    pub fn total_cost(&self) -> f64 {
        self.entries.values().sum()
    }
}

pub fn st_edge_set(
    route: &Route,
    request_time: f64,
    space_precision: usize,
    time_interval_s: f64,
) -> Result<SpaceTimeEdgeSet> {
    if route.points.is_empty() {
        return Err(Error::invalid("cannot discretize an empty route"));
    }
    let node_at = |i: usize, t: f64| -> Result<SpaceTimeNode> {
        Ok(SpaceTimeNode {
            cell: geohash_encode(route.points[i], space_precision)?,
            bucket: time_bucket(t, time_interval_s)?,
        })
    };
    let mut entries = BTreeMap::new();
    let mut t = request_time;
    let mut current = node_at(0, t)?;
    let mut pending = 0.0;
    for (i, &d) in route.segment_durations.iter().enumerate() {
        t += d;
        pending += d;
        let next = node_at(i + 1, t)?;
        if next != current {
            *entries
                .entry(SpaceTimeEdge {
                    from: current,
                    to: next,
                })
                .or_insert(0.0) += pending;
            pending = 0.0;
            current = next;
        }
    }
    Ok(SpaceTimeEdgeSet { entries })
}

/// Sparse vector indexed by space-time edges. Zero entries are never stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    entries: BTreeMap<SpaceTimeEdge, f64>,
}

impl SparseVector {
    pub fn from_entries(entries: impl IntoIterator<Item = (SpaceTimeEdge, f64)>) -> Self {
        SparseVector {
            entries: entries.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, e: &SpaceTimeEdge) -> f64 {
        self.entries.get(e).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SpaceTimeEdge, &f64)> {
        self.entries.iter()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.entries.iter().map(|(k, v)| v * large.get(k)).sum()
    }
}

pub fn preprocessing_vector(s: &SpaceTimeEdgeSet) -> SparseVector {
    SparseVector::from_entries(s.entries.iter().map(|(&e, &c)| (e, c)))
}

pub fn query_vector(s: &SpaceTimeEdgeSet) -> SparseVector {
    SparseVector::from_entries(s.entries.keys().map(|&e| (e, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn zeros(d: usize) -> Self {
        DenseVector(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Indices and values of the nonzero coordinates.
    pub fn nonzeros(&self) -> Vec<(usize, f64)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i, x))
            .collect()
    }
}

/// Vectors that support the global dataset rescaling.
pub trait Scalable: Clone {
    fn norm(&self) -> f64;
    fn scaled(&self, factor: f64) -> Self;
}

impl Scalable for SparseVector {
    fn norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scaled(&self, factor: f64) -> Self {
        SparseVector::from_entries(self.entries.iter().map(|(&k, &v)| (k, v * factor)))
    }
}

impl Scalable for DenseVector {
    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn scaled(&self, factor: f64) -> Self {
        DenseVector(self.0.iter().map(|x| x * factor).collect())
    }
}

/// Scales every vector by one factor so that the largest norm becomes
/// `bound`. Returns the scaled vectors and the factor.
pub fn normalize_dataset<V: Scalable>(vectors: &[V], bound: f64) -> Result<(Vec<V>, f64)> {
    if !(bound > 0.0) {
        return Err(Error::invalid(format!(
            "norm bound must be positive, got {bound}"
        )));
    }
    let max_norm = vectors.iter().map(Scalable::norm).fold(0.0, f64::max);
    if !(max_norm > 0.0) || !max_norm.is_finite() {
        return Err(Error::degenerate("dataset has no nonzero vector"));
    }
    let factor = bound / max_norm;
    Ok((vectors.iter().map(|v| v.scaled(factor)).collect(), factor))
}

pub fn unit_normalize(x: &DenseVector) -> Result<DenseVector> {
    let n = x.norm();
    if !(n > 0.0) {
        return Err(Error::degenerate("zero vector cannot be unit-normalized"));
    }
    Ok(x.scaled(1.0 / n))
}

/// Signed feature hashing of a sparse vector into `d` dimensions. The
/// inner product is preserved in expectation over seeds.
pub fn feature_hash(v: &SparseVector, d: usize, seed: u64) -> Result<DenseVector> {
    if d < 2 || !d.is_power_of_two() {
        return Err(Error::invalid(format!(
            "hashed dimension {d} must be a power of two >= 2"
        )));
    }
    let mut out = vec![0.0; d];
    for (e, &x) in v.iter() {
        let h = e.key(seed);
        let idx = (h as usize) & (d - 1);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[idx] += sign * x;
    }
    Ok(DenseVector(out))
}

/// Subtracts the per-coordinate mean of `vectors` from each of them.
pub fn center(vectors: &mut [DenseVector]) {
    let Some(d) = vectors.first().map(DenseVector::len) else {
        return;
    };
    let mut mean = vec![0.0; d];
    for v in vectors.iter() {
        for (m, x) in mean.iter_mut().zip(&v.0) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    for v in vectors.iter_mut() {
        for (x, m) in v.0.iter_mut().zip(&mean) {
            *x -= m / n;
        }
    }
}

/// Data-side transform: appends `1/2 - ||x||^(2^i)` for `i = 1..=m`.
#[allow(non_snake_case)]
pub fn transform_P(x: &DenseVector, m: usize) -> Result<DenseVector> {
    let norm = x.norm();
    if !(norm < 1.0) {
        return Err(Error::invalid(format!(
            "data vector norm {norm} must be below 1; normalize the dataset first"
        )));
    }
    let mut out = Vec::with_capacity(x.len() + m);
    out.extend_from_slice(&x.0);
    let mut power = norm * norm;
    for _ in 0..m {
        out.push(0.5 - power);
        power *= power;
    }
    Ok(DenseVector(out))
}

/// Query-side transform: appends `m` zeros to a unit-normalized query.
#[allow(non_snake_case)]
pub fn transform_Q(x: &DenseVector, m: usize) -> Result<DenseVector> {
    if x.is_zero() {
        return Err(Error::degenerate(
            "zero query vector cannot be unit-normalized",
        ));
    }
    let mut out = Vec::with_capacity(x.len() + m);
    out.extend_from_slice(&x.0);
    out.resize(x.len() + m, 0.0);
    Ok(DenseVector(out))
}
