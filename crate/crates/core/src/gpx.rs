//! GPX 1.1 import and export.
//!
//! One `<trk>` per trip with `<name>` as the trip id. Speeds travel in
//! `<extensions><speed>` as m/s and are converted to km/h on import.

use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat};
use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::fcd::{FcdError, GpsPoint, Trip};

const MPS_TO_KMH: f64 = 3.6;

#[derive(Default)]
struct PendingPoint {
    lat: Option<f64>,
    lon: Option<f64>,
    time: Option<f64>,
    speed_mps: Option<f64>,
}

fn gpx_err(msg: impl Into<String>) -> FcdError {
    FcdError::Gpx(msg.into())
}

fn parse_time(raw: &str) -> Result<f64, FcdError> {
    let dt = DateTime::parse_from_rfc3339(raw.trim())
        .map_err(|e| gpx_err(format!("bad <time> {raw:?}: {e}")))?;
    Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

fn format_time(ts: f64) -> String {
    let secs = ts.floor();
    let nanos = ((ts - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(secs as i64, nanos)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_default()
}

fn coord_attr(e: &BytesStart<'_>, name: &[u8]) -> Result<f64, FcdError> {
    for attr in e.attributes() {
        let attr = attr.map_err(|e| gpx_err(e.to_string()))?;
        if attr.key.local_name().as_ref() == name {
            let value = attr.unescape_value().map_err(|e| gpx_err(e.to_string()))?;
            return value
                .trim()
                .parse()
                .map_err(|_| gpx_err(format!("trkpt attribute not numeric: {value:?}")));
        }
    }
    Err(gpx_err(format!(
        "trkpt missing {} attribute",
        String::from_utf8_lossy(name)
    )))
}

/// Reads every `<trk>` as one trip.
pub fn parse_gpx<R: BufRead>(input: R) -> Result<Vec<Trip>, FcdError> {
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut path: Vec<String> = Vec::new();

    let mut trips = Vec::new();
    let mut name: Option<String> = None;
    let mut points: Vec<PendingPoint> = Vec::new();
    let mut current: Option<PendingPoint> = None;

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| gpx_err(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(e) => {
                let local = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                match local.as_str() {
                    "trk" => {
                        name = None;
                        points.clear();
                    }
                    "trkpt" => {
                        current = Some(PendingPoint {
                            lat: Some(coord_attr(&e, b"lat")?),
                            lon: Some(coord_attr(&e, b"lon")?),
                            ..Default::default()
                        });
                    }
                    _ => {}
                }
                path.push(local);
            }
            Event::Empty(e) => {
                if e.local_name().as_ref() == b"trkpt" {
                    return Err(gpx_err("trkpt without <time>"));
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| gpx_err(e.to_string()))?;
                let leaf = path.last().map(String::as_str);
                let parent = path.len().checked_sub(2).map(|i| path[i].as_str());
                match (parent, leaf) {
                    (Some("trk"), Some("name")) => name = Some(text.trim().to_string()),
                    (Some("trkpt"), Some("time")) => {
                        if let Some(p) = current.as_mut() {
                            p.time = Some(parse_time(&text)?);
                        }
                    }
                    (_, Some("speed")) if path.iter().any(|s| s == "extensions") => {
                        if let Some(p) = current.as_mut() {
                            p.speed_mps = Some(
                                text.trim()
                                    .parse()
                                    .map_err(|_| gpx_err(format!("speed not numeric: {text:?}")))?,
                            );
                        }
                    }
                    _ => {}
                }
            }
            Event::End(_) => {
                match path.pop().as_deref() {
                    Some("trkpt") => {
                        if let Some(p) = current.take() {
                            points.push(p);
                        }
                    }
                    Some("trk") => {
                        let id = name.take().unwrap_or_else(|| format!("trk-{}", trips.len()));
                        let samples = points
                            .drain(..)
                            .map(|p| {
                                Ok(GpsPoint {
                                    timestamp: p.time.ok_or_else(|| gpx_err("trkpt without <time>"))?,
                                    lat: p.lat.unwrap_or(f64::NAN),
                                    lon: p.lon.unwrap_or(f64::NAN),
                                    speed_kmh: p.speed_mps.unwrap_or(0.0) * MPS_TO_KMH,
                                    trip_id: id.clone(),
                                })
                            })
                            .collect::<Result<Vec<_>, FcdError>>()?;
                        trips.push(Trip::new(id, samples)?);
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(trips)
}

pub fn write_gpx<W: Write>(trips: &[Trip], mut out: W) -> std::io::Result<()> {
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(
        out,
        r#"<gpx version="1.1" creator="fleetledger" xmlns="http://www.topografix.com/GPX/1/1">"#
    )?;
    for trip in trips {
        writeln!(out, "  <trk>")?;
        writeln!(out, "    <name>{}</name>", escape(trip.id()))?;
        writeln!(out, "    <trkseg>")?;
        for p in trip.points() {
            writeln!(out, r#"      <trkpt lat="{}" lon="{}">"#, p.lat, p.lon)?;
            writeln!(out, "        <time>{}</time>", format_time(p.timestamp))?;
            writeln!(
                out,
                "        <extensions><speed>{}</speed></extensions>",
                p.speed_kmh / MPS_TO_KMH
            )?;
            writeln!(out, "      </trkpt>")?;
        }
        writeln!(out, "    </trkseg>")?;
        writeln!(out, "  </trk>")?;
    }
    writeln!(out, "</gpx>")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"<?xml version="1.0"?>
<gpx version="1.1" xmlns="http://www.topografix.com/GPX/1/1">
  <trk><name>T0_R.VT</name><trkseg>
    <trkpt lat="48.11" lon="16.57"><time>2021-03-01T08:00:00Z</time>
      <extensions><speed>10</speed></extensions></trkpt>
    <trkpt lat="48.10" lon="16.55"><time>2021-03-01T08:00:30.5Z</time></trkpt>
  </trkseg></trk>
  <trk><trkseg>
    <trkpt lat="47.0" lon="15.0"><time>2021-03-01T09:00:00+01:00</time></trkpt>
    <trkpt lat="47.1" lon="15.1"><time>2021-03-01T09:01:00+01:00</time></trkpt>
  </trkseg></trk>
</gpx>"#;

    #[test]
    fn reads_tracks_names_and_speeds() {
        let trips = parse_gpx(SAMPLE.as_bytes()).unwrap();
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[0].id(), "T0_R.VT");
        assert_eq!(trips[1].id(), "trk-1");
        let p = &trips[0].points()[0];
        assert_eq!(p.timestamp, 1_614_585_600.0);
        assert!((p.speed_kmh - 36.0).abs() < 1e-12);
        assert_eq!(trips[0].points()[1].timestamp, 1_614_585_630.5);
        assert_eq!(trips[0].points()[1].speed_kmh, 0.0);
        assert_eq!(trips[1].points()[0].timestamp, 1_614_585_600.0);
    }

    #[test]
    fn export_then_import_preserves_samples() {
        let trips = parse_gpx(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_gpx(&trips, &mut buf).unwrap();
        let back = parse_gpx(buf.as_slice()).unwrap();
        assert_eq!(back.len(), trips.len());
        for (a, b) in trips.iter().zip(&back) {
            assert_eq!(a.id(), b.id());
            for (p, q) in a.points().iter().zip(b.points()) {
                assert_eq!((p.lat, p.lon), (q.lat, q.lon));
                assert!((p.timestamp - q.timestamp).abs() < 1e-6);
                assert!((p.speed_kmh - q.speed_kmh).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_time_is_an_error() {
        let doc = r#"<gpx><trk><trkseg><trkpt lat="1" lon="2"></trkpt><trkpt lat="1" lon="2"/></trkseg></trk></gpx>"#;
        assert!(parse_gpx(doc.as_bytes()).is_err());
    }
}
