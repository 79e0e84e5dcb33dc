//! Deterministic synthetic floating-car trips.
//!
//! Trips follow a meandering curve between an origin and a destination:
//! the straight line plus a lateral offset built from sine harmonics that
//! vanish at both ends. The offset amplitude is solved so the curve has the
//! requested length. Knots are placed at irregular arc positions to mimic
//! the patchy sampling of real probe data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fcd::{GpsPoint, Trip};
use crate::geo::{destination_point, LatLon, EARTH_RADIUS_M};

pub const VIENNA_AIRPORT: LatLon = LatLon::new(48.1103, 16.5697);
pub const TATTENDORF: LatLon = LatLon::new(47.9500, 16.3050);
pub const LINZ: LatLon = LatLon::new(48.3064, 14.2858);

#[derive(Debug, Clone)]
pub struct TripFixture {
    pub id: String,
    pub origin: LatLon,
    pub destination: LatLon,
    pub n_points: usize,
    pub length_m: f64,
    pub mean_speed_kmh: f64,
    pub start_time: f64,
    pub seed: u64,
}

const HARMONICS: usize = 6;
const DENSE: usize = 4_000;

struct Curve {
    origin: LatLon,
    // local east/north meters of the destination
    dx: f64,
    dy: f64,
    coeffs: [f64; HARMONICS],
}

impl Curve {
    fn offset(&self, u: f64, amplitude: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (std::f64::consts::PI * (k + 1) as f64 * u).sin())
            .sum::<f64>()
            * amplitude
    }

    fn local(&self, u: f64, amplitude: f64) -> (f64, f64) {
        let len = self.dx.hypot(self.dy);
        let (nx, ny) = (-self.dy / len, self.dx / len);
        let off = self.offset(u, amplitude);
        (u * self.dx + off * nx, u * self.dy + off * ny)
    }

    fn to_geo(&self, (x, y): (f64, f64)) -> LatLon {
        let lat = self.origin.lat + (y / EARTH_RADIUS_M).to_degrees();
        let lon = self.origin.lon + (x / (EARTH_RADIUS_M * self.origin.lat.to_radians().cos())).to_degrees();
        LatLon::new(lat, lon)
    }

    fn length(&self, amplitude: f64) -> f64 {
        let mut prev = self.local(0.0, amplitude);
        let mut acc = 0.0;
        for j in 1..=DENSE {
            let p = self.local(j as f64 / DENSE as f64, amplitude);
            acc += (p.0 - prev.0).hypot(p.1 - prev.1);
            prev = p;
        }
        acc
    }
}

impl TripFixture {
    pub fn generate(&self) -> Trip {
        assert!(self.n_points >= 2, "fixture needs at least two points");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let lat0 = self.origin.lat.to_radians().cos();
        let dy = (self.destination.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M;
        let dx = (self.destination.lon - self.origin.lon).to_radians() * EARTH_RADIUS_M * lat0;
        let mut coeffs = [0.0; HARMONICS];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = rng.random_range(-1.0..1.0) / (k + 1) as f64;
        }
        let curve = Curve {
            origin: self.origin,
            dx,
            dy,
            coeffs,
        };

        // curve length grows monotonically with the amplitude
        let straight = dx.hypot(dy);
        let amplitude = if self.length_m <= straight {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, straight.max(1.0));
            while curve.length(hi) < self.length_m {
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if curve.length(mid) < self.length_m {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };

        // arc-length table so knots can be placed by distance
        let mut arc = Vec::with_capacity(DENSE + 1);
        let mut prev = curve.local(0.0, amplitude);
        let mut acc = 0.0;
        arc.push(0.0);
        for j in 1..=DENSE {
            let p = curve.local(j as f64 / DENSE as f64, amplitude);
            acc += (p.0 - prev.0).hypot(p.1 - prev.1);
            arc.push(acc);
            prev = p;
        }
        let total = acc;
        let u_at = |s: f64| -> f64 {
            let i = arc.partition_point(|&a| a < s).clamp(1, DENSE);
            let (a0, a1) = (arc[i - 1], arc[i]);
            let f = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
            (i - 1) as f64 / DENSE as f64 + f / DENSE as f64
        };

        let gaps: Vec<f64> = (0..self.n_points - 1).map(|_| rng.random_range(0.3..1.7)).collect();
        let gap_sum: f64 = gaps.iter().sum();
        let phase = rng.random_range(0.0..std::f64::consts::TAU);

        let speed_at = |u: f64, rng: &mut ChaCha8Rng| -> f64 {
            let wave = 1.0 + 0.25 * (std::f64::consts::TAU * 2.0 * u + phase).sin();
            (self.mean_speed_kmh * wave * rng.random_range(0.9..1.1)).clamp(5.0, 130.0)
        };

        let mut points = Vec::with_capacity(self.n_points);
        let mut s = 0.0;
        let mut t = self.start_time;
        let mut speed = speed_at(0.0, &mut rng);
        for i in 0..self.n_points {
            let u = if i == 0 {
                0.0
            } else if i == self.n_points - 1 {
                1.0
            } else {
                u_at(s)
            };
            let pos = if i == 0 {
                self.origin
            } else if i == self.n_points - 1 {
                self.destination
            } else {
                curve.to_geo(curve.local(u, amplitude))
            };
            points.push(GpsPoint {
                timestamp: t,
                lat: pos.lat,
                lon: pos.lon,
                speed_kmh: speed,
                trip_id: self.id.clone(),
            });
            if let Some(&gap) = gaps.get(i) {
                let ds = total * gap / gap_sum;
                let next = speed_at(u_at(s + ds), &mut rng);
                let mean_mps = 0.5 * (speed + next) / 3.6;
                // whole milliseconds keep CSV round-trips exact
                t += ((ds / mean_mps) * 1e3).round().max(1.0) / 1e3;
                s += ds;
                speed = next;
            }
        }
        Trip::new(self.id.clone(), points).expect("fixture trips are well formed")
    }
}

/// Three trips between the Vienna airport and Tattendorf (about 44 km each).
pub fn rvt_trips(seed: u64) -> Vec<Trip> {
    route_trips(
        "R.VT",
        VIENNA_AIRPORT,
        TATTENDORF,
        &[44_300.0, 43_400.0, 43_100.0],
        1_500.0,
        seed,
    )
}

/// Three trips between Tattendorf and Linz (about 210 km each).
pub fn rtl_trips(seed: u64) -> Vec<Trip> {
    route_trips(
        "R.TL",
        TATTENDORF,
        LINZ,
        &[212_000.0, 209_000.0, 208_000.0],
        6_000.0,
        seed,
    )
}

fn route_trips(route: &str, origin: LatLon, destination: LatLon, lengths: &[f64], jitter_m: f64, seed: u64) -> Vec<Trip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .enumerate()
        .map(|(i, &length_m)| {
            let o = destination_point(origin, rng.random_range(0.0..360.0), rng.random_range(0.0..jitter_m));
            let d = destination_point(destination, rng.random_range(0.0..360.0), rng.random_range(0.0..jitter_m));
            let label = format!("T{i}_{route}");
            TripFixture {
                id: label.clone(),
                origin: o,
                destination: d,
                n_points: 300,
                length_m,
                mean_speed_kmh: 52.0,
                start_time: 1_614_585_600.0 + 3_600.0 * i as f64,
                seed: rng.random(),
            }
            .generate()
            .with_label(label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_m;

    #[test]
    fn fixture_hits_endpoints_and_length() {
        let trips = rvt_trips(7);
        assert_eq!(trips.len(), 3);
        for t in &trips {
            assert_eq!(t.points().len(), 300);
            assert!(haversine_m(t.first().position(), VIENNA_AIRPORT) <= 1_500.0);
            assert!(haversine_m(t.last().position(), TATTENDORF) <= 1_500.0);
        }
        // knots cut corners while the flat-earth curve differs slightly from haversine length
        let len = trips[0].path_length_m();
        assert!((42_000.0..=45_000.0).contains(&len), "{len}");
    }

    #[test]
    fn fixture_is_deterministic() {
        assert_eq!(rvt_trips(3), rvt_trips(3));
        assert_ne!(rvt_trips(3), rvt_trips(4));
    }
}
