//! Distance and centroid primitives on WGS-84 latitude/longitude.
//!
//! All coordinates are degrees. Longitudes are kept in the half-open range
//! `[-180, 180)`; every constructor normalizes into it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IUGG mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("centroid of an empty point set")]
    EmptyInput,
    #[error("points span {0:.3} degrees of longitude, more than half the globe")]
    AntimeridianSpread(f64),
}

/// A point on the sphere, `lat` in `[-90, 90]`, `lon` in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Validates ranges and normalizes `lon = 180` to `-180`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::LongitudeOutOfRange(lon));
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    /// Like [`GeoPoint::new`] but wraps any finite longitude into range.
    pub fn wrapped(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lon.is_finite() {
            return Err(GeoError::NonFinite);
        }
        Self::new(lat, normalize_lon(lon))
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by travelling `distance_m` along a great circle at
    /// `bearing_deg` (clockwise from north).
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPoint {
        let phi1 = self.lat.to_radians();
        let lambda1 = self.lon.to_radians();
        let theta = bearing_deg.to_radians();
        let delta = distance_m / EARTH_RADIUS_M;

        let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos();
        let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
        let lambda2 = lambda1 + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);

        GeoPoint {
            lat: phi2.to_degrees().clamp(-90.0, 90.0),
            lon: normalize_lon(lambda2.to_degrees()),
        }
    }

    /// Shift longitude by `delta_deg`, wrapping.
    pub fn shifted_lon(&self, delta_deg: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: normalize_lon(self.lon + delta_deg),
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Wrap any finite longitude into `[-180, 180)`. Values already in range are
/// returned bit-for-bit unchanged.
pub fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360.0
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Minimal signed longitude difference `b - a`, in `[-180, 180)`.
pub fn lon_delta(a: f64, b: f64) -> f64 {
    normalize_lon(b - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Local equirectangular projection, meters.
    #[default]
    EquirectM,
    /// Great-circle distance, meters.
    HaversineM,
    /// Plain Euclidean distance in degree space (wrapped longitude).
    DegreesEuclid,
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::EquirectM => "equirect_m",
            DistanceMetric::HaversineM => "haversine_m",
            DistanceMetric::DegreesEuclid => "degrees_euclid",
        }
    }

    pub fn distance(&self, a: &GeoPoint, b: &GeoPoint) -> f64 {
        distance(a, b, *self)
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn distance(a: &GeoPoint, b: &GeoPoint, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::EquirectM => equirect_m(a, b),
        DistanceMetric::HaversineM => haversine_m(a, b),
        DistanceMetric::DegreesEuclid => degrees_euclid(a, b),
    }
}

pub fn equirect_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    // |wrap(b - a)| == |wrap(a - b)| except at exactly 180, where both give -180
    let dlon = lon_delta(a.lon, b.lon).abs().to_radians();
    let dlat = (b.lat - a.lat).abs().to_radians();
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let dx = EARTH_RADIUS_M * dlon * mean_lat.cos();
    let dy = EARTH_RADIUS_M * dlat;
    dx.hypot(dy)
}

pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).abs().to_radians();
    let dlambda = lon_delta(a.lon, b.lon).abs().to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn degrees_euclid(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let dlon = lon_delta(a.lon, b.lon).abs();
    let dlat = (b.lat - a.lat).abs();
    dlon.hypot(dlat)
}

/// Mean latitude and mean longitude, with longitudes unwrapped relative to
/// the first point before averaging.
pub fn centroid<'a, I>(points: I) -> Result<GeoPoint, GeoError>
where
    I: IntoIterator<Item = &'a GeoPoint>,
{
    let mut iter = points.into_iter();
    let first = iter.next().ok_or(GeoError::EmptyInput)?;
    let anchor = first.lon;

    let mut count = 1usize;
    let mut lat_sum = first.lat;
    let mut lon_sum = anchor;
    let (mut lon_min, mut lon_max) = (anchor, anchor);
    for p in iter {
        let lon = anchor + lon_delta(anchor, p.lon);
        lat_sum += p.lat;
        lon_sum += lon;
        lon_min = lon_min.min(lon);
        lon_max = lon_max.max(lon);
        count += 1;
    }
    if lon_max - lon_min > 180.0 {
        return Err(GeoError::AntimeridianSpread(lon_max - lon_min));
    }
    let n = count as f64;
    Ok(GeoPoint {
        lat: lat_sum / n,
        lon: normalize_lon(lon_sum / n),
    })
}

/// Convert a local east/north offset (meters) around `origin` to a point,
/// inverting the equirectangular projection at the origin's latitude.
pub fn offset_m(origin: &GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let lat = origin.lat + (north_m / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (east_m / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint {
        lat: lat.clamp(-90.0, 90.0),
        lon: normalize_lon(lon),
    }
}
