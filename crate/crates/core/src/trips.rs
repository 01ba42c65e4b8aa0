//! Ride pools: CSV ingestion in the NYC yellow-taxi schema, a synthetic
//! commute generator and uniform subsampling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::roadnet::{batch_route_alternates, NodeId, Route, Router, RoutingLedger};

pub type RideId = u32;

pub const PICKUP_DATETIME: &str = "tpep_pickup_datetime";
pub const PICKUP_LON: &str = "pickup_longitude";
pub const PICKUP_LAT: &str = "pickup_latitude";
pub const DROPOFF_LON: &str = "dropoff_longitude";
pub const DROPOFF_LAT: &str = "dropoff_latitude";

const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// 2016-06-08 08:00 and 09:00 EDT as Unix seconds.
pub const MORNING_WINDOW: (f64, f64) = (1_465_387_200.0, 1_465_390_800.0);
/// 2016-06-08 18:00 and 19:00 EDT as Unix seconds.
pub const EVENING_WINDOW: (f64, f64) = (1_465_423_200.0, 1_465_426_800.0);
/// New York summer time.
pub const DEFAULT_UTC_OFFSET_S: i64 = -4 * 3600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ride {
    pub id: RideId,
    pub pickup: GeoPoint,
    pub dropoff: GeoPoint,
    /// Unix seconds.
    pub request_time: f64,
    /// Best route first, then alternates by ascending duration.
    pub routes: Vec<Route>,
    /// Duration of the best route in seconds.
    pub cost: f64,
}

impl Ride {
    pub fn new(
        id: RideId,
        pickup: GeoPoint,
        dropoff: GeoPoint,
        request_time: f64,
        routes: Vec<Route>,
    ) -> Result<Self> {
        let Some(best) = routes.first() else {
            return Err(Error::invalid(format!("ride {id} has no route")));
        };
        if best.origin() == best.destination() {
            return Err(Error::degenerate(format!(
                "ride {id} starts and ends at the same node"
            )));
        }
        let cost = best.total_duration;
        Ok(Ride {
            id,
            pickup,
            dropoff,
            request_time,
            routes,
            cost,
        })
    }

    pub fn best_route(&self) -> &Route {
        &self.routes[0]
    }

    pub fn pickup_node(&self) -> NodeId {
        self.routes[0].origin()
    }

    pub fn dropoff_node(&self) -> NodeId {
        self.routes[0].destination()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub rides: Vec<Ride>,
    pub label: String,
    pub load_fraction: f64,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.rides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rides.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.rides.iter().map(|r| r.cost).sum()
    }
}

/// Geographic filter rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat)
            && (self.min_lon..=self.max_lon).contains(&p.lon)
    }
}

impl FromStr for BBox {
    type Err = Error;

    /// `minlat,minlon,maxlat,maxlon`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bbox {s:?}: {e}")))?;
        let [min_lat, min_lon, max_lat, max_lon] = v[..] else {
            return Err(Error::invalid(format!(
                "bbox {s:?} needs four comma-separated numbers"
            )));
        };
        if min_lat > max_lat || min_lon > max_lon {
            return Err(Error::invalid(format!("bbox {s:?} has min above max")));
        }
        Ok(BBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvOptions {
    pub bbox: BBox,
    /// Half-open `[start, end)` in Unix seconds.
    pub window: (f64, f64),
    /// Offset of the file's wall-clock times from UTC, in seconds.
    pub utc_offset_s: i64,
    pub alternates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: usize,
    pub unparsable: usize,
    pub filtered: usize,
    pub unroutable: usize,
}

pub fn parse_local_datetime(s: &str, utc_offset_s: i64) -> Result<f64> {
    let dt = NaiveDateTime::parse_from_str(s.trim(), DATETIME_FORMAT)
        .map_err(|e| Error::Format(format!("datetime {s:?}: {e}")))?;
    Ok((dt.and_utc().timestamp() - utc_offset_s) as f64)
}

pub fn format_local_datetime(t: f64, utc_offset_s: i64) -> String {
    let secs = t.floor() as i64 + utc_offset_s;
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|dt| dt.naive_utc().format(DATETIME_FORMAT).to_string())
        .unwrap_or_default()
}

/// Reads taxi trips, keeps those inside `bbox` and `window`, and routes each
/// kept trip once (charged to `ledger` in batches).
pub fn load_trips_csv(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
    router: &dyn Router,
    ledger: &RoutingLedger,
) -> Result<(Workload, IngestStats)> {
    let file = std::fs::File::open(path.as_ref())?;
    let label = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trips".into());
    read_trips(file, label, opts, router, ledger)
}

pub fn read_trips<R: std::io::Read>(
    reader: R,
    label: String,
    opts: &CsvOptions,
    router: &dyn Router,
    ledger: &RoutingLedger,
) -> Result<(Workload, IngestStats)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing required column {name}")))
    };
    let cols = [
        column(PICKUP_DATETIME)?,
        column(PICKUP_LON)?,
        column(PICKUP_LAT)?,
        column(DROPOFF_LON)?,
        column(DROPOFF_LAT)?,
    ];
    let net = router.network();
    let mut stats = IngestStats::default();
    let mut kept: Vec<(GeoPoint, GeoPoint, f64)> = Vec::new();
    for record in rdr.records() {
        stats.rows += 1;
        let Ok(record) = record else {
            stats.unparsable += 1;
            continue;
        };
        let parsed = (|| -> Option<(f64, [f64; 4])> {
            let t = parse_local_datetime(record.get(cols[0])?, opts.utc_offset_s).ok()?;
            let mut xs = [0.0; 4];
            for (x, &c) in xs.iter_mut().zip(&cols[1..]) {
                *x = record.get(c)?.parse().ok()?;
            }
            Some((t, xs))
        })();
        let Some((t, [plon, plat, dlon, dlat])) = parsed else {
            stats.unparsable += 1;
            continue;
        };
        let points = (GeoPoint::new(plat, plon), GeoPoint::new(dlat, dlon));
        let (Ok(pickup), Ok(dropoff)) = points else {
            stats.unparsable += 1;
            continue;
        };
        let zero = |p: GeoPoint| p.lat == 0.0 || p.lon == 0.0;
        if zero(pickup)
            || zero(dropoff)
            || !opts.bbox.contains(pickup)
            || !opts.bbox.contains(dropoff)
            || !(opts.window.0..opts.window.1).contains(&t)
            || net.nearest_node(pickup) == net.nearest_node(dropoff)
        {
            stats.filtered += 1;
            continue;
        }
        kept.push((pickup, dropoff, t));
    }
    let requests: Vec<_> = kept.iter().map(|&(p, d, _)| (p, d)).collect();
    let routed = batch_route_alternates(router, &requests, opts.alternates.max(1), ledger);
    let mut rides = Vec::with_capacity(kept.len());
    for ((pickup, dropoff, t), routes) in kept.into_iter().zip(routed) {
        match routes.and_then(|r| Ride::new(rides.len() as RideId, pickup, dropoff, t, r)) {
            Ok(ride) => rides.push(ride),
            Err(_) => stats.unroutable += 1,
        }
    }
    Ok((
        Workload {
            rides,
            label,
            load_fraction: 1.0,
        },
        stats,
    ))
}

/// Writes rides in the taxi CSV schema (wall-clock times at `utc_offset_s`).
pub fn write_trips_csv<W: std::io::Write>(
    rides: &[Ride],
    writer: W,
    utc_offset_s: i64,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        PICKUP_DATETIME,
        "tpep_dropoff_datetime",
        "passenger_count",
        "trip_distance",
        PICKUP_LON,
        PICKUP_LAT,
        DROPOFF_LON,
        DROPOFF_LAT,
    ])?;
    for r in rides {
        let miles = crate::geo::haversine_km(r.pickup, r.dropoff) / 1.609_344;
        w.write_record([
            format_local_datetime(r.request_time, utc_offset_s),
            format_local_datetime(r.request_time + r.cost, utc_offset_s),
            "1".to_string(),
            format!("{miles:.2}"),
            format!("{:.6}", r.pickup.lon),
            format!("{:.6}", r.pickup.lat),
            format!("{:.6}", r.dropoff.lon),
            format!("{:.6}", r.dropoff.lat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommuteMode {
    /// Outlying hotspots towards the downtown core.
    Morning,
    /// Downtown core back out to the hotspots.
    Evening,
}

impl CommuteMode {
    /// Rush-hour request window for the mode.
    pub fn window(self) -> (f64, f64) {
        match self {
            CommuteMode::Morning => MORNING_WINDOW,
            CommuteMode::Evening => EVENING_WINDOW,
        }
    }
}

impl FromStr for CommuteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morning" => Ok(CommuteMode::Morning),
            "evening" => Ok(CommuteMode::Evening),
            other => Err(Error::invalid(format!("unknown commute mode {other:?}"))),
        }
    }
}

impl fmt::Display for CommuteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommuteMode::Morning => "morning",
            CommuteMode::Evening => "evening",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub mode: CommuteMode,
    pub n: usize,
    pub hotspot_count: usize,
    /// Standard deviation of pickups around a hotspot, meters.
    pub spread_m: f64,
    /// Standard deviation of destinations around the core, meters.
    pub core_spread_m: f64,
    pub window: (f64, f64),
    pub seed: u64,
    pub alternates: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            mode: CommuteMode::Morning,
            n: 500,
            hotspot_count: 6,
            spread_m: 400.0,
            core_spread_m: 500.0,
            window: MORNING_WINDOW,
            seed: 1,
            alternates: 2,
        }
    }
}

/// Generates a commute-shaped ride pool on `router`'s network. Every ride
/// costs one routing request.
pub fn synth_commute(
    router: &dyn Router,
    spec: &SynthSpec,
    ledger: &RoutingLedger,
) -> Result<Workload> {
    if spec.n < 1 {
        return Err(Error::invalid("synthetic workload needs at least one ride"));
    }
    if spec.hotspot_count < 1 {
        return Err(Error::invalid(
            "synthetic workload needs at least one hotspot",
        ));
    }
    if !(spec.window.1 > spec.window.0) {
        return Err(Error::invalid("synthetic window must be non-empty"));
    }
    let net = router.network();
    let (lat0, lon0, lat1, lon1) = net.bounds();
    let clamp = |p: GeoPoint| GeoPoint {
        lat: p.lat.clamp(lat0, lat1),
        lon: p.lon.clamp(lon0, lon1),
    };
    let core = GeoPoint {
        lat: (lat0 + lat1) / 2.0,
        lon: (lon0 + lon1) / 2.0,
    };
    let half_extent_m = {
        let ns = (lat1 - lat0) * crate::geo::METERS_PER_DEGREE;
        let ew = crate::geo::haversine_km(
            GeoPoint {
                lat: core.lat,
                lon: lon0,
            },
            GeoPoint {
                lat: core.lat,
                lon: lon1,
            },
        ) * 1000.0;
        ns.min(ew) / 2.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hotspots: Vec<GeoPoint> = (0..spec.hotspot_count)
        .map(|_| loop {
            let p = GeoPoint {
                lat: rng.random_range(lat0..=lat1),
                lon: rng.random_range(lon0..=lon1),
            };
            if crate::geo::haversine_km(p, core) * 1000.0 >= 0.5 * half_extent_m {
                break p;
            }
        })
        .collect();
    let near_home =
        Normal::new(0.0, spec.spread_m.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let near_core =
        Normal::new(0.0, spec.core_spread_m.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;

    let mut rides = Vec::with_capacity(spec.n);
    while rides.len() < spec.n {
        let want = spec.n - rides.len();
        let mut batch = Vec::with_capacity(want);
        while batch.len() < want {
            let hotspot = hotspots[rng.random_range(0..hotspots.len())];
            let home =
                clamp(hotspot.offset_m(near_home.sample(&mut rng), near_home.sample(&mut rng)));
            let work = clamp(core.offset_m(near_core.sample(&mut rng), near_core.sample(&mut rng)));
            let t = rng.random_range(spec.window.0..spec.window.1).floor();
            if net.nearest_node(home) == net.nearest_node(work) {
                continue;
            }
            let (pickup, dropoff) = match spec.mode {
                CommuteMode::Morning => (home, work),
                CommuteMode::Evening => (work, home),
            };
            batch.push((pickup, dropoff, t));
        }
        let requests: Vec<_> = batch.iter().map(|&(p, d, _)| (p, d)).collect();
        let routed = batch_route_alternates(router, &requests, spec.alternates.max(1), ledger);
        for ((pickup, dropoff, t), routes) in batch.into_iter().zip(routed) {
            if let Ok(ride) =
                routes.and_then(|r| Ride::new(rides.len() as RideId, pickup, dropoff, t, r))
            {
                rides.push(ride);
            }
        }
    }
    Ok(Workload {
        rides,
        label: format!("synth-{}", spec.mode),
        load_fraction: 1.0,
    })
}

/// Uniform sample without replacement of `round(rate * n)` rides (halves
/// round up), preserving the original order.
pub fn subsample(w: &Workload, rate: f64, seed: u64) -> Result<Workload> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!(
            "subsampling rate {rate} not in (0, 1]"
        )));
    }
    let n = w.rides.len();
    let m = ((rate * n as f64) + 0.5).floor() as usize;
    let rides = if m >= n {
        w.rides.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, n, m).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| w.rides[i].clone()).collect()
    };
    Ok(Workload {
        rides,
        label: w.label.clone(),
        load_fraction: w.load_fraction * rate,
    })
}
