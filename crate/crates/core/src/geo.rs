//! Geodesic primitives: coordinates, great-circle distance, geohash cells and
//! time buckets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean earth radius used for every haversine computation.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Meters per degree of latitude on the reference sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_KM * 1000.0 * std::f64::consts::PI / 180.0;

pub const GEOHASH_MAX_PRECISION: usize = 12;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// A WGS84-style coordinate in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!(
                "coordinate out of range ({lat}, {lon})"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn is_valid(&self) -> bool {
        GeoPoint::new(self.lat, self.lon).is_ok()
    }

    /// Point displaced by `north_m` / `east_m` meters using a local
    /// equirectangular approximation.
    pub fn offset_m(&self, north_m: f64, east_m: f64) -> GeoPoint {
        let lat = self.lat + north_m / METERS_PER_DEGREE;
        let lon = self.lon + east_m / (METERS_PER_DEGREE * self.lat.to_radians().cos());
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: lon.clamp(-180.0, 180.0),
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A geohash cell, stored as its packed interleaved bits.
///
/// The `bits` field holds `5 * precision` bits, most significant first, so the
/// derived ordering matches lexicographic ordering of codes of equal length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    bits: u64,
    precision: u8,
}

impl CellId {
    pub fn precision(&self) -> usize {
        self.precision as usize
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn code(&self) -> String {
        let p = self.precision as usize;
        (0..p)
            .map(|i| {
                let shift = 5 * (p - 1 - i);
                BASE32[((self.bits >> shift) & 0x1f) as usize] as char
            })
            .collect()
    }

    pub fn parse(code: &str) -> Result<Self> {
        if code.is_empty() || code.len() > GEOHASH_MAX_PRECISION {
            return Err(Error::invalid(format!(
                "geohash length {} out of [1, 12]",
                code.len()
            )));
        }
        let mut bits = 0u64;
        for c in code.bytes() {
            let v = BASE32.iter().position(|&b| b == c).ok_or_else(|| {
                Error::invalid(format!("invalid geohash character {:?}", c as char))
            })?;
            bits = (bits << 5) | v as u64;
        }
        Ok(CellId {
            bits,
            precision: code.len() as u8,
        })
    }

    /// Bounding box as (min lat, min lon, max lat, max lon).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (mut lat, mut lon) = ((-90.0, 90.0), (-180.0, 180.0));
        let nbits = 5 * self.precision as usize;
        for i in 0..nbits {
            let bit = (self.bits >> (nbits - 1 - i)) & 1 == 1;
            let range: &mut (f64, f64) = if i % 2 == 0 { &mut lon } else { &mut lat };
            let mid = (range.0 + range.1) / 2.0;
            if bit {
                range.0 = mid;
            } else {
                range.1 = mid;
            }
        }
        (lat.0, lon.0, lat.1, lon.1)
    }

    pub fn center(&self) -> GeoPoint {
        let (lat0, lon0, lat1, lon1) = self.bounds();
        GeoPoint {
            lat: (lat0 + lat1) / 2.0,
            lon: (lon0 + lon1) / 2.0,
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

/// Standard geohash: bits alternate longitude/latitude starting with
/// longitude, grouped five at a time into the base-32 alphabet.
pub fn geohash_encode(p: GeoPoint, precision: usize) -> Result<CellId> {
    if !(1..=GEOHASH_MAX_PRECISION).contains(&precision) {
        return Err(Error::invalid(format!(
            "geohash precision {precision} out of [1, 12]"
        )));
    }
    let (mut lat, mut lon) = ((-90.0f64, 90.0f64), (-180.0f64, 180.0f64));
    let mut bits = 0u64;
    for i in 0..5 * precision {
        let (range, value) = if i % 2 == 0 {
            (&mut lon, p.lon)
        } else {
            (&mut lat, p.lat)
        };
        let mid = (range.0 + range.1) / 2.0;
        bits <<= 1;
        if value >= mid {
            bits |= 1;
            range.0 = mid;
        } else {
            range.1 = mid;
        }
    }
    Ok(CellId {
        bits,
        precision: precision as u8,
    })
}

/// Index of a fixed-length time interval aligned to the Unix epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeBucket(pub i64);

pub fn time_bucket(t: f64, interval_s: f64) -> Result<TimeBucket> {
    if !(interval_s > 0.0) || !interval_s.is_finite() {
        return Err(Error::invalid(format!(
            "time interval must be positive, got {interval_s}"
        )));
    }
    Ok(TimeBucket((t / interval_s).floor() as i64))
}
