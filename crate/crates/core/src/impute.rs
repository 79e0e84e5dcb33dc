//! Trajectory densification with per-channel Hermite splines.
//!
//! Latitude, longitude and speed are each interpolated against time. Every
//! knot interval is then subdivided at equal arc-length steps, so the output
//! spacing is close to the requested resolution and each original sample is
//! kept verbatim at its own timestamp.

use thiserror::Error;

use crate::fcd::{GpsPoint, Trip};
use crate::geo::{haversine_m, LatLon};
use crate::spline::{Channel, HermiteSpline, SplineError, SplineSegment};

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("resolution must be a positive finite number of meters, got {0}")]
    InvalidResolution(f64),
    #[error("multiplication factor must be >= 1")]
    InvalidFactor,
    #[error("trip {trip_id} has {points} point(s), need at least 2")]
    TooFewPoints { trip_id: String, points: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// How densely to resample each trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Densify {
    /// Target spacing in meters between consecutive output points.
    Resolution(f64),
    /// Fixed number of output steps per original knot interval.
    Factor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_kmh: f64,
}

impl TrajectoryPoint {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedTrajectory {
    pub trip_id: String,
    pub points: Vec<TrajectoryPoint>,
    /// Requested spacing; zero when densified by a fixed factor.
    pub resolution_m: f64,
}

impl ImputedTrajectory {
    /// Cumulative haversine distance at every point, starting at 0.
    pub fn cumulative_distance_m(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += haversine_m(w[0].position(), w[1].position());
            out.push(acc);
        }
        out
    }

    pub fn path_length_m(&self) -> f64 {
        self.cumulative_distance_m().last().copied().unwrap_or(0.0)
    }

    /// Converts back into a trip so it can be written as FCD-CSV or GPX.
    pub fn to_trip(&self) -> Trip {
        let points = self
            .points
            .iter()
            .map(|p| GpsPoint {
                timestamp: p.timestamp,
                lat: p.lat,
                lon: p.lon,
                speed_kmh: p.speed_kmh.max(0.0),
                trip_id: self.trip_id.clone(),
            })
            .collect();
        Trip::new(self.trip_id.clone(), points).expect("imputed trajectories have increasing timestamps")
    }
}

/// Splines for the three channels of one trip.
#[derive(Debug, Clone)]
pub struct TripSplines {
    pub lat: HermiteSpline,
    pub lon: HermiteSpline,
    pub speed: HermiteSpline,
}

impl TripSplines {
    pub fn fit(trip: &Trip) -> Result<Self, ImputeError> {
        let pts = trip.points();
        if pts.len() < 2 {
            return Err(ImputeError::TooFewPoints {
                trip_id: trip.id().to_string(),
                points: pts.len(),
            });
        }
        let t: Vec<f64> = pts.iter().map(|p| p.timestamp).collect();
        let channel = |f: fn(&GpsPoint) -> f64, ch: Channel| -> Result<HermiteSpline, SplineError> {
            let v: Vec<f64> = pts.iter().map(f).collect();
            Ok(HermiteSpline::fit(&t, &v)?.with_channel(ch))
        };
        Ok(Self {
            lat: channel(|p| p.lat, Channel::Lat)?,
            lon: channel(|p| p.lon, Channel::Lon)?,
            speed: channel(|p| p.speed_kmh, Channel::Speed)?,
        })
    }
}

struct Interval<'a> {
    lat: &'a SplineSegment,
    lon: &'a SplineSegment,
    speed: &'a SplineSegment,
}

impl Interval<'_> {
    fn position(&self, t: f64) -> LatLon {
        LatLon::new(self.lat.value(t), self.lon.value(t))
    }

    fn point(&self, t: f64) -> TrajectoryPoint {
        TrajectoryPoint {
            timestamp: t,
            lat: self.lat.value(t),
            lon: self.lon.value(t),
            speed_kmh: self.speed.value(t).max(0.0),
        }
    }
}

/// Densifies a trip to roughly `resolution_m` meters between consecutive points.
pub fn impute_trip(trip: &Trip, resolution_m: f64) -> Result<ImputedTrajectory, ImputeError> {
    impute_trip_with(trip, Densify::Resolution(resolution_m))
}

pub fn impute_trip_with(trip: &Trip, mode: Densify) -> Result<ImputedTrajectory, ImputeError> {
    match mode {
        Densify::Resolution(r) if !(r.is_finite() && r > 0.0) => {
            return Err(ImputeError::InvalidResolution(r))
        }
        Densify::Factor(0) => return Err(ImputeError::InvalidFactor),
        _ => {}
    }
    let splines = TripSplines::fit(trip)?;
    let knots = trip.points();

    let mut out = Vec::new();
    out.push(sample_point(&knots[0]));
    for i in 0..knots.len() - 1 {
        let iv = Interval {
            lat: &splines.lat.segments()[i],
            lon: &splines.lon.segments()[i],
            speed: &splines.speed.segments()[i],
        };
        subdivide(&iv, mode, &mut out);
        out.push(sample_point(&knots[i + 1]));
    }

    Ok(ImputedTrajectory {
        trip_id: trip.id().to_string(),
        points: out,
        resolution_m: match mode {
            Densify::Resolution(r) => r,
            Densify::Factor(_) => 0.0,
        },
    })
}

fn sample_point(p: &GpsPoint) -> TrajectoryPoint {
    TrajectoryPoint {
        timestamp: p.timestamp,
        lat: p.lat,
        lon: p.lon,
        speed_kmh: p.speed_kmh,
    }
}

/// Pushes the interior points of one knot interval (both knots excluded).
fn subdivide(iv: &Interval<'_>, mode: Densify, out: &mut Vec<TrajectoryPoint>) {
    let (t0, t1) = (iv.lat.t0, iv.lat.t1);
    let chord = haversine_m(iv.position(t0), iv.position(t1));

    // fine arc-length table over the interval
    let samples = match mode {
        Densify::Resolution(r) => ((4.0 * chord / r).ceil() as usize).clamp(16, 1 << 20),
        Densify::Factor(k) => (4 * k).max(16),
    };
    let mut times = Vec::with_capacity(samples + 1);
    let mut arc = Vec::with_capacity(samples + 1);
    let mut prev = iv.position(t0);
    let mut acc = 0.0;
    for j in 0..=samples {
        let t = if j == samples {
            t1
        } else {
            t0 + (t1 - t0) * j as f64 / samples as f64
        };
        let p = iv.position(t);
        acc += haversine_m(prev, p);
        prev = p;
        times.push(t);
        arc.push(acc);
    }
    let length = acc;

    let steps = match mode {
        Densify::Resolution(r) => ((length / r).round() as usize).max(1),
        Densify::Factor(k) => k,
    };
    if length <= 0.0 {
        if let Densify::Factor(k) = mode {
            // stationary interval: fall back to equal time steps
            for j in 1..k {
                out.push(iv.point(t0 + (t1 - t0) * j as f64 / k as f64));
            }
        }
        return;
    }

    let mut cursor = 1;
    for j in 1..steps {
        let target = length * j as f64 / steps as f64;
        while cursor < arc.len() - 1 && arc[cursor] < target {
            cursor += 1;
        }
        let (s0, s1) = (arc[cursor - 1], arc[cursor]);
        let frac = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        let t = times[cursor - 1] + frac * (times[cursor] - times[cursor - 1]);
        let last_t = out.last().map_or(f64::NEG_INFINITY, |p| p.timestamp);
        if t > last_t && t < t1 {
            out.push(iv.point(t));
        }
    }
}
