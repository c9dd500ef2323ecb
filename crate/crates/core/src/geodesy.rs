//! Spherical-earth conversions between an observer position, a polar
//! observation (range + bearing) and a target latitude/longitude.
//!
//! Angles are degrees at the API boundary and radians internally. Bearings
//! are measured clockwise from true north; distances are nautical miles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius (6371 km) expressed in nautical miles.
pub const DEFAULT_EARTH_RADIUS_NM: f64 = 3440.065;

/// One nautical mile in meters (exact by definition).
pub const METERS_PER_NM: f64 = 1852.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not finite")]
    InvalidLongitude(f64),
    #[error("distance {0} NM must be finite and non-negative")]
    InvalidDistance(f64),
    #[error("bearing {0} must be finite")]
    InvalidBearing(f64),
    #[error("earth radius {0} NM must be finite and positive")]
    InvalidRadius(f64),
    #[error("distance {distance_nm} NM reaches the antipode (limit {limit_nm} NM)")]
    Antipodal { distance_nm: f64, limit_nm: f64 },
    #[error("points are antipodal; initial bearing is undefined")]
    AntipodalPoints,
}

/// A geographic position on the sphere, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    /// Validates the latitude and normalizes the longitude into (-180, 180].
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::InvalidLatitude(lat_deg));
        }
        let lon_deg = normalize_lon(lon_deg)?;
        Ok(Self { lat_deg, lon_deg })
    }

    /// Checks the invariants of a point built by struct literal or deserialized.
    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.lat_deg.is_finite() || !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(GeoError::InvalidLatitude(self.lat_deg));
        }
        if !self.lon_deg.is_finite() || self.lon_deg <= -180.0 || self.lon_deg > 180.0 {
            return Err(GeoError::InvalidLongitude(self.lon_deg));
        }
        Ok(())
    }
}

/// A polar observation from an observer: distance in nautical miles and
/// bearing in degrees clockwise from true north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBearing {
    pub distance_nm: f64,
    pub bearing_deg: f64,
}

impl RangeBearing {
    /// Validates the distance and wraps the bearing into [0, 360).
    pub fn new(distance_nm: f64, bearing_deg: f64) -> Result<Self, GeoError> {
        if !distance_nm.is_finite() || distance_nm < 0.0 {
            return Err(GeoError::InvalidDistance(distance_nm));
        }
        if !bearing_deg.is_finite() {
            return Err(GeoError::InvalidBearing(bearing_deg));
        }
        Ok(Self {
            distance_nm,
            bearing_deg: wrap_bearing(bearing_deg),
        })
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.distance_nm.is_finite() || self.distance_nm < 0.0 {
            return Err(GeoError::InvalidDistance(self.distance_nm));
        }
        if !self.bearing_deg.is_finite() || !(0.0..360.0).contains(&self.bearing_deg) {
            return Err(GeoError::InvalidBearing(self.bearing_deg));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    pub radius_nm: f64,
}

impl EarthModel {
    pub fn new(radius_nm: f64) -> Result<Self, GeoError> {
        let earth = Self { radius_nm };
        earth.validate()?;
        Ok(earth)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.radius_nm.is_finite() || self.radius_nm <= 0.0 {
            return Err(GeoError::InvalidRadius(self.radius_nm));
        }
        Ok(())
    }

    /// Half the circumference: the largest distance with a unique destination.
    pub fn antipodal_distance_nm(&self) -> f64 {
        PI * self.radius_nm
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            radius_nm: DEFAULT_EARTH_RADIUS_NM,
        }
    }
}

/// Wraps a longitude into (-180, 180].
pub fn normalize_lon(lon_deg: f64) -> Result<f64, GeoError> {
    if !lon_deg.is_finite() {
        return Err(GeoError::InvalidLongitude(lon_deg));
    }
    let mut lon = lon_deg.rem_euclid(360.0);
    if lon > 180.0 {
        lon -= 360.0;
    }
    // rem_euclid may round up to exactly 360 for tiny negative inputs
    if lon <= -180.0 {
        lon += 360.0;
    }
    if lon == -0.0 {
        lon = 0.0;
    }
    Ok(lon)
}

/// Wraps any finite angle into [0, 360).
pub fn wrap_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    if b >= 360.0 {
        0.0
    } else {
        b + 0.0
    }
}

/// Wraps an angular difference into (-180, 180].
pub fn wrap_signed_deg(deg: f64) -> f64 {
    let mut d = deg.rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    if d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Great-circle destination reached from `origin` after travelling
/// `obs.distance_nm` along initial bearing `obs.bearing_deg`.
pub fn destination_point(
    origin: GeoPoint,
    obs: RangeBearing,
    earth: EarthModel,
) -> Result<GeoPoint, GeoError> {
    origin.validate()?;
    if !obs.distance_nm.is_finite() || obs.distance_nm < 0.0 {
        return Err(GeoError::InvalidDistance(obs.distance_nm));
    }
    if !obs.bearing_deg.is_finite() {
        return Err(GeoError::InvalidBearing(obs.bearing_deg));
    }
    earth.validate()?;
    let limit_nm = earth.antipodal_distance_nm();
    if obs.distance_nm >= limit_nm {
        return Err(GeoError::Antipodal {
            distance_nm: obs.distance_nm,
            limit_nm,
        });
    }
    if obs.distance_nm == 0.0 {
        return Ok(origin);
    }

    let lat1 = origin.lat_deg.to_radians();
    let lon1 = origin.lon_deg.to_radians();
    let theta = obs.bearing_deg.to_radians();
    let delta = obs.distance_nm / earth.radius_nm;

    let (sin_lat1, cos_lat1) = lat1.sin_cos();
    let (sin_delta, cos_delta) = delta.sin_cos();
    let sin_lat2 = (sin_lat1 * cos_delta + cos_lat1 * sin_delta * theta.cos()).clamp(-1.0, 1.0);
    let lat2 = sin_lat2.asin();
    let lon2 = lon1 + (theta.sin() * sin_delta * cos_lat1).atan2(cos_delta - sin_lat1 * sin_lat2);

    GeoPoint::new(lat2.to_degrees().clamp(-90.0, 90.0), lon2.to_degrees())
}

/// Haversine distance and initial great-circle bearing from `origin` to
/// `target`. Coincident points report bearing 0.
pub fn inverse_problem(
    origin: GeoPoint,
    target: GeoPoint,
    earth: EarthModel,
) -> Result<RangeBearing, GeoError> {
    origin.validate()?;
    target.validate()?;
    earth.validate()?;

    let lat1 = origin.lat_deg.to_radians();
    let lat2 = target.lat_deg.to_radians();
    let dlat = lat2 - lat1;
    let dlon = (target.lon_deg - origin.lon_deg).to_radians();

    let h = ((dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2))
        .clamp(0.0, 1.0);
    let central = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    if h == 0.0 {
        return Ok(RangeBearing {
            distance_nm: 0.0,
            bearing_deg: 0.0,
        });
    }

    if 1.0 - h <= 1e-14 {
        return Err(GeoError::AntipodalPoints);
    }

    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    Ok(RangeBearing {
        distance_nm: central * earth.radius_nm,
        bearing_deg: wrap_bearing(y.atan2(x).to_degrees()),
    })
}

/// Great-circle separation in meters.
pub fn distance_m(a: GeoPoint, b: GeoPoint, earth: EarthModel) -> Result<f64, GeoError> {
    match inverse_problem(a, b, earth) {
        Ok(rb) => Ok(rb.distance_nm * METERS_PER_NM),
        Err(GeoError::AntipodalPoints) => Ok(earth.antipodal_distance_nm() * METERS_PER_NM),
        Err(e) => Err(e),
    }
}
