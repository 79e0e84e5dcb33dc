//! Floating-car data: parsing, trip grouping and origin/destination extraction.
//!
//! The canonical on-disk form is FCD-CSV with the header
//! `timestamp,lat,lon,speed_kmh,trip_id`. Rows are grouped by trip id in
//! order of first appearance and each group is sorted by timestamp.

use std::io::{Read, Write};

use indexmap::IndexMap;
use thiserror::Error;

use crate::geo::{haversine_m, LatLon};

pub const FCD_HEADER: [&str; 5] = ["timestamp", "lat", "lon", "speed_kmh", "trip_id"];

#[derive(Debug, Error)]
pub enum FcdError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("trip {trip_id}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { trip_id: String, timestamp: f64 },
    #[error("trip {trip_id}: {reason}")]
    InvalidTrip { trip_id: String, reason: String },
    #[error("invalid route query: {0}")]
    InvalidQuery(String),
    #[error("gpx: {0}")]
    Gpx(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One floating-car sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsPoint {
    /// Seconds since the UNIX epoch.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub speed_kmh: f64,
    pub trip_id: String,
}

impl GpsPoint {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    fn check(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() {
            return Err(format!("non-finite timestamp {}", self.timestamp));
        }
        if !self.position().is_valid() {
            return Err(format!("lat/lon out of range: {}, {}", self.lat, self.lon));
        }
        if !self.speed_kmh.is_finite() || self.speed_kmh < 0.0 {
            return Err(format!("invalid speed {}", self.speed_kmh));
        }
        Ok(())
    }
}

/// A single vehicle trip: at least two samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    id: String,
    points: Vec<GpsPoint>,
    pub label: Option<String>,
}

impl Trip {
    /// Builds a trip, sorting samples by timestamp.
    pub fn new(id: impl Into<String>, mut points: Vec<GpsPoint>) -> Result<Self, FcdError> {
        let id = id.into();
        let invalid = |reason: String| FcdError::InvalidTrip {
            trip_id: id.clone(),
            reason,
        };
        if points.len() < 2 {
            return Err(invalid(format!("{} point(s), need at least 2", points.len())));
        }
        for p in &points {
            p.check().map_err(&invalid)?;
            if p.trip_id != id {
                return Err(invalid(format!("point carries trip id {:?}", p.trip_id)));
            }
        }
        points.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        if let Some(w) = points.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            return Err(FcdError::DuplicateTimestamp {
                trip_id: id,
                timestamp: w[0].timestamp,
            });
        }
        Ok(Self {
            id,
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[GpsPoint] {
        &self.points
    }

    pub fn first(&self) -> &GpsPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &GpsPoint {
        &self.points[self.points.len() - 1]
    }

    /// Sum of haversine distances between consecutive samples.
    pub fn path_length_m(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| haversine_m(w[0].position(), w[1].position()))
            .sum()
    }
}

/// Circles around an origin and a destination that trip endpoints must fall into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteQuery {
    pub origin: LatLon,
    pub destination: LatLon,
    radius_m: f64,
}

impl RouteQuery {
    pub fn new(origin: LatLon, destination: LatLon, radius_m: f64) -> Result<Self, FcdError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(FcdError::InvalidQuery(format!("radius must be > 0, got {radius_m}")));
        }
        if !origin.is_valid() || !destination.is_valid() {
            return Err(FcdError::InvalidQuery("origin/destination out of range".into()));
        }
        Ok(Self {
            origin,
            destination,
            radius_m,
        })
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn matches(&self, trip: &Trip) -> bool {
        haversine_m(trip.first().position(), self.origin) <= self.radius_m
            && haversine_m(trip.last().position(), self.destination) <= self.radius_m
    }
}

/// Result of [`parse_fcd`]: valid trips plus the number of trip ids dropped for having fewer than two rows.
#[derive(Debug, Clone, Default)]
pub struct ParsedFcd {
    pub trips: Vec<Trip>,
    pub dropped: usize,
}

pub fn parse_fcd<R: Read>(input: R) -> Result<ParsedFcd, FcdError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let header = reader.headers()?.clone();
    if header.iter().ne(FCD_HEADER.iter().copied()) {
        return Err(FcdError::Malformed {
            line: 1,
            reason: format!("expected header {:?}, got {:?}", FCD_HEADER.join(","), header),
        });
    }

    let mut groups: IndexMap<String, Vec<GpsPoint>> = IndexMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| FcdError::Malformed { line, reason };
        if record.len() != FCD_HEADER.len() {
            return Err(malformed(format!("expected 5 fields, got {}", record.len())));
        }
        let num = |idx: usize| -> Result<f64, FcdError> {
            let raw = &record[idx];
            raw.parse::<f64>()
                .map_err(|_| malformed(format!("{}: not a number: {raw:?}", FCD_HEADER[idx])))
        };
        let point = GpsPoint {
            timestamp: num(0)?,
            lat: num(1)?,
            lon: num(2)?,
            speed_kmh: num(3)?,
            trip_id: record[4].to_string(),
        };
        if point.trip_id.is_empty() {
            return Err(malformed("empty trip_id".into()));
        }
        point.check().map_err(malformed)?;
        groups.entry(point.trip_id.clone()).or_default().push(point);
    }

    let mut parsed = ParsedFcd::default();
    for (id, points) in groups {
        if points.len() < 2 {
            parsed.dropped += 1;
            continue;
        }
        parsed.trips.push(Trip::new(id, points)?);
    }
    Ok(parsed)
}

pub fn serialize_fcd<W: Write>(trips: &[Trip], out: W) -> Result<(), FcdError> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(FCD_HEADER)?;
    for trip in trips {
        for p in trip.points() {
            writer.write_record([
                p.timestamp.to_string(),
                p.lat.to_string(),
                p.lon.to_string(),
                p.speed_kmh.to_string(),
                p.trip_id.clone(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Keeps the trips that start within the origin circle and end within the destination circle.
pub fn extract_route_trips(trips: &[Trip], query: &RouteQuery) -> Vec<Trip> {
    trips.iter().filter(|t| query.matches(t)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination_point;
    use proptest::prelude::*;

    fn pt(trip: &str, t: f64, lat: f64, lon: f64) -> GpsPoint {
        GpsPoint {
            timestamp: t,
            lat,
            lon,
            speed_kmh: 50.0,
            trip_id: trip.into(),
        }
    }

    #[test]
    fn two_rows_make_one_trip() {
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n0,48.1,16.5,40,A\n10,48.2,16.6,45,A\n";
        let parsed = parse_fcd(csv.as_bytes()).unwrap();
        assert_eq!(parsed.trips.len(), 1);
        assert_eq!(parsed.trips[0].points().len(), 2);
        assert_eq!(parsed.dropped, 0);
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_fcd("timestamp,lat,lon,speed_kmh,trip_id\n".as_bytes()).unwrap();
        assert!(parsed.trips.is_empty());
        assert_eq!(parsed.dropped, 0);
    }

    #[test]
    fn groups_sorts_and_drops_singletons() {
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n\
                   20,48.0,16.0,1,A\n\
                   0,48.0,16.0,1,B\n\
                   0,48.0,16.0,1,A\n\
                   5,48.0,16.0,1,C\n\
                   10,48.0,16.0,1,A\n\
                   7,48.0,16.0,1,B\n";
        let parsed = parse_fcd(csv.as_bytes()).unwrap();
        let ids: Vec<_> = parsed.trips.iter().map(|t| t.id()).collect();
        assert_eq!(ids, ["A", "B"]);
        assert_eq!(parsed.dropped, 1);
        let ts: Vec<_> = parsed.trips[0].points().iter().map(|p| p.timestamp).collect();
        assert_eq!(ts, [0.0, 10.0, 20.0]);
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n0,48,16,1,A\n1,abc,16,1,A\n";
        match parse_fcd(csv.as_bytes()) {
            Err(FcdError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n0,91,16,1,A\n";
        assert!(matches!(
            parse_fcd(csv.as_bytes()),
            Err(FcdError::Malformed { line: 2, .. })
        ));
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n0,48,16,-3,A\n";
        assert!(matches!(parse_fcd(csv.as_bytes()), Err(FcdError::Malformed { .. })));
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "t,lat,lon,speed,trip\n";
        assert!(matches!(
            parse_fcd(csv.as_bytes()),
            Err(FcdError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_timestamp_names_trip() {
        let csv = "timestamp,lat,lon,speed_kmh,trip_id\n0,48,16,1,X\n0,48.1,16,1,X\n";
        match parse_fcd(csv.as_bytes()) {
            Err(FcdError::DuplicateTimestamp { trip_id, .. }) => assert_eq!(trip_id, "X"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trip_needs_two_points() {
        assert!(Trip::new("A", vec![pt("A", 0.0, 48.0, 16.0)]).is_err());
    }

    #[test]
    fn route_query_rejects_nonpositive_radius() {
        let o = LatLon::new(48.0, 16.0);
        assert!(RouteQuery::new(o, o, 0.0).is_err());
        assert!(RouteQuery::new(o, o, -1.0).is_err());
    }

    fn trip_between(id: &str, a: LatLon, b: LatLon) -> Trip {
        Trip::new(id, vec![pt(id, 0.0, a.lat, a.lon), pt(id, 60.0, b.lat, b.lon)]).unwrap()
    }

    #[test]
    fn endpoints_at_targets_are_included() {
        let o = LatLon::new(48.11, 16.57);
        let d = LatLon::new(47.95, 16.31);
        let q = RouteQuery::new(o, d, 3_000.0).unwrap();
        assert_eq!(extract_route_trips(&[trip_between("A", o, d)], &q).len(), 1);
    }

    #[test]
    fn boundary_is_exclusive_beyond_radius() {
        let o = LatLon::new(48.11, 16.57);
        let d = LatLon::new(47.95, 16.31);
        let q = RouteQuery::new(o, d, 10_000.0).unwrap();
        let end = destination_point(d, 90.0, 10_001.0);
        assert!(extract_route_trips(&[trip_between("A", o, end)], &q).is_empty());
    }

    #[test]
    fn filter_matches_brute_force_distances() {
        let o = LatLon::new(48.11, 16.57);
        let d = LatLon::new(47.95, 16.31);
        let q = RouteQuery::new(o, d, 3_000.0).unwrap();
        // (origin offset, destination offset) in meters
        let offsets = [(1_000.0, 500.0), (2_900.0, 2_900.0), (3_100.0, 100.0), (0.0, 3_100.0), (2_999.0, 10.0)];
        let trips: Vec<Trip> = offsets
            .iter()
            .enumerate()
            .map(|(i, &(so, sd))| {
                trip_between(
                    &format!("T{i}"),
                    destination_point(o, 30.0 * i as f64, so),
                    destination_point(d, 77.0 * i as f64, sd),
                )
            })
            .collect();
        let got: Vec<_> = extract_route_trips(&trips, &q).iter().map(|t| t.id().to_string()).collect();
        assert_eq!(got, ["T0", "T1", "T4"]);
        for t in extract_route_trips(&trips, &q) {
            assert!(haversine_m(t.first().position(), o) <= 3_000.0);
            assert!(haversine_m(t.last().position(), d) <= 3_000.0);
        }
    }

    fn trip_set() -> impl Strategy<Value = Vec<Trip>> {
        prop::collection::vec(
            prop::collection::btree_map(0u32..10_000, (47.0f64..49.0, 15.0f64..17.0, 0.0f64..130.0), 2..8),
            0..5,
        )
        .prop_map(|groups| {
            groups
                .into_iter()
                .enumerate()
                .map(|(i, rows)| {
                    let id = format!("trip-{i}");
                    let points = rows
                        .into_iter()
                        .map(|(t, (lat, lon, speed))| GpsPoint {
                            timestamp: t as f64 * 0.5,
                            lat,
                            lon,
                            speed_kmh: speed,
                            trip_id: id.clone(),
                        })
                        .collect();
                    Trip::new(id, points).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(trips in trip_set()) {
            let mut buf = Vec::new();
            serialize_fcd(&trips, &mut buf).unwrap();
            let parsed = parse_fcd(buf.as_slice()).unwrap();
            prop_assert_eq!(parsed.dropped, 0);
            prop_assert_eq!(parsed.trips, trips);
        }

        #[test]
        fn extraction_is_order_preserving_subsequence(trips in trip_set(), radius in 1_000.0f64..200_000.0) {
            let q = RouteQuery::new(LatLon::new(48.0, 16.0), LatLon::new(48.5, 16.5), radius).unwrap();
            let out = extract_route_trips(&trips, &q);
            let mut it = trips.iter();
            for t in &out {
                prop_assert!(it.any(|x| x == t));
                prop_assert!(haversine_m(t.first().position(), q.origin) <= radius);
                prop_assert!(haversine_m(t.last().position(), q.destination) <= radius);
            }
        }
    }
}
