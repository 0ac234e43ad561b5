//! Admission policy: geofence polygon, daily time window, device status.
//! Boundary points count as inside the geofence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::seconds_of_day;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyLoadError {
    #[error("geofence needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("geofence polygon is self-intersecting")]
    SelfIntersecting,
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },
    #[error("time window start equals end")]
    EmptyTimeWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub lat: f64,
    pub lon: f64,
    pub at: u64,
}

impl GeoFix {
    pub fn new(lat: f64, lon: f64, at: u64) -> Result<Self, PolicyLoadError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(PolicyLoadError::CoordinateOutOfRange { lat, lon });
        }
        Ok(Self { lat, lon, at })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    /// Ordered (lat, lon) vertices.
    pub vertices: Vec<(f64, f64)>,
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    orient(a, b, p).abs() < 1e-12
        && p.0 >= a.0.min(b.0) - 1e-12
        && p.0 <= a.0.max(b.0) + 1e-12
        && p.1 >= a.1.min(b.1) - 1e-12
        && p.1 <= a.1.max(b.1) + 1e-12
}

fn segments_properly_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl Polygon {
    pub fn validate(&self) -> Result<(), PolicyLoadError> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(PolicyLoadError::TooFewVertices(n));
        }
        for (lat, lon) in &self.vertices {
            if !(-90.0..=90.0).contains(lat) || !(-180.0..=180.0).contains(lon) {
                return Err(PolicyLoadError::CoordinateOutOfRange { lat: *lat, lon: *lon });
            }
        }
        // non-adjacent edge pairs must not cross
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_properly_intersect(a, b, c, d) {
                    return Err(PolicyLoadError::SelfIntersecting);
                }
            }
        }
        Ok(())
    }

    /// Ray casting with an explicit boundary check; edges count as inside.
    pub fn contains(&self, point: (f64, f64)) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            if on_segment(self.vertices[i], self.vertices[(i + 1) % n], point) {
                return true;
            }
        }
        let mut inside = false;
        let (px, py) = point;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Grow the polygon so `fix` becomes interior: append a small square
    /// around the approved point as extra vertices is geometrically messy, so
    /// instead record approved points checked alongside the polygon.
    pub fn buffer_distance_deg() -> f64 {
        // 100 m expressed in degrees of latitude
        100.0 / 111_320.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    /// Daily window bounds in UTC seconds-of-day.
    pub start: u64,
    pub end: u64,
    /// Window wraps midnight (start > end is only legal with this set).
    pub wraps_midnight: bool,
}

impl TimeWindow {
    pub const ALL_DAY: TimeWindow = TimeWindow { start: 0, end: 86_399, wraps_midnight: false };

    pub fn contains(&self, t_ms: u64) -> bool {
        let s = seconds_of_day(t_ms);
        if self.wraps_midnight {
            s >= self.start || s <= self.end
        } else {
            s >= self.start && s <= self.end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePolicy {
    pub geofence: Polygon,
    /// Operator-approved positions outside the original polygon, each buffered
    /// by 100 m.
    #[serde(default)]
    pub approved_points: Vec<(f64, f64)>,
    pub time_window: TimeWindow,
    pub bound_pcrs: Vec<u8>,
}

impl DevicePolicy {
    pub fn validate(&self) -> Result<(), PolicyLoadError> {
        self.geofence.validate()?;
        if !self.time_window.wraps_midnight && self.time_window.start >= self.time_window.end {
            return Err(PolicyLoadError::EmptyTimeWindow);
        }
        Ok(())
    }

    pub fn location_allowed(&self, fix: &GeoFix) -> bool {
        if self.geofence.contains((fix.lat, fix.lon)) {
            return true;
        }
        let r = Polygon::buffer_distance_deg();
        self.approved_points
            .iter()
            .any(|(lat, lon)| (fix.lat - lat).hypot(fix.lon - lon) <= r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFailure {
    Status,
    Geofence,
    TimeWindow,
}
