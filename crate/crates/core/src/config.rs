//! `key = value` run configuration with `#` comments. Unknown keys and
//! repeated keys are errors.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::bench::{parse_pow2_range, pow2_range};
use crate::geo::LatLon;
use crate::impute::Densify;
use crate::platoon::{EmissionModel, EmissionUnit, PlatoonConfig, SpeedNoise};
use crate::store::VolumeConfig;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteFilter {
    pub origin: LatLon,
    pub destination: LatLon,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub route: RouteFilter,
    pub densify: Densify,
    pub platoon: PlatoonConfig,
    pub emission: EmissionModel,
    pub store: VolumeConfig,
    pub validators: usize,
    pub faults: usize,
    pub bench_files_kb: Vec<u64>,
    pub bench_records_kb: Vec<u64>,
    pub bench_repetitions: usize,
    pub bench_threads: usize,
    pub vehicles: usize,
    /// Per-vehicle filtering task; `None` filters every lane.
    pub filter_mask: Option<Vec<bool>>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            route: RouteFilter {
                origin: crate::fixture::VIENNA_AIRPORT,
                destination: crate::fixture::TATTENDORF,
                radius_m: 2_000.0,
            },
            densify: Densify::Resolution(1.0),
            platoon: PlatoonConfig::default(),
            emission: EmissionModel::default(),
            store: VolumeConfig::default(),
            validators: 4,
            faults: 1,
            bench_files_kb: pow2_range(4, 2048).unwrap(),
            bench_records_kb: pow2_range(64, 2048).unwrap(),
            bench_repetitions: 5,
            bench_threads: 1,
            vehicles: 3,
            filter_mask: None,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| ConfigError::Line { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate().map_err(|reason| ConfigError::Line { line: 0, reason })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        fn noise(c: &mut Config) -> &mut SpeedNoise {
            c.platoon.noise.get_or_insert_with(SpeedNoise::default)
        }
        match key {
            "seed" => self.seed = num(v)?,
            "fcd.origin_lat" => self.route.origin.lat = num(v)?,
            "fcd.origin_lon" => self.route.origin.lon = num(v)?,
            "fcd.dest_lat" => self.route.destination.lat = num(v)?,
            "fcd.dest_lon" => self.route.destination.lon = num(v)?,
            "fcd.radius_m" => self.route.radius_m = num(v)?,
            "impute.resolution_m" => self.densify = Densify::Resolution(num(v)?),
            "impute.factor" => self.densify = Densify::Factor(num(v)?),
            "platoon.speed_factor" => self.platoon.speed_factor_connected = num(v)?,
            "platoon.headway_s" => self.platoon.headway_s = num(v)?,
            "platoon.drag_leader" => self.platoon.drag_reduction[0] = num(v)?,
            "platoon.drag_follower2" => self.platoon.drag_reduction[1] = num(v)?,
            "platoon.drag_follower3" => self.platoon.drag_reduction[2] = num(v)?,
            "platoon.step_s" => self.platoon.step_s = num(v)?,
            "platoon.min_speed_mps" => self.platoon.min_speed_mps = num(v)?,
            "platoon.noise" => {
                self.platoon.noise = if parse_bool(v)? {
                    Some(self.platoon.noise.unwrap_or_default())
                } else {
                    None
                }
            }
            "platoon.noise_min" => noise(self).min = num(v)?,
            "platoon.noise_max" => noise(self).max = num(v)?,
            "platoon.noise_segment_m" => noise(self).segment_m = num(v)?,
            "platoon.emission_unit" => {
                self.platoon.emission_unit = match v {
                    "mean_rate" => EmissionUnit::MeanRate,
                    "cumulated" => EmissionUnit::Cumulated,
                    _ => return Err(format!("emission unit must be mean_rate or cumulated, got {v:?}")),
                }
            }
            "emission.c0" => self.emission.c0 = num(v)?,
            "emission.c1" => self.emission.c1 = num(v)?,
            "emission.c2" => self.emission.c2 = num(v)?,
            "emission.idle_floor" => self.emission.idle_floor = num(v)?,
            "store.bricks" => self.store.bricks = num(v)?,
            "store.replicas" => self.store.replicas = num(v)?,
            "store.vnodes" => self.store.vnodes = num(v)?,
            "ledger.validators" => self.validators = num(v)?,
            "ledger.faults" => self.faults = num(v)?,
            "bench.files" => self.bench_files_kb = parse_pow2_range(v).map_err(|e| e.to_string())?,
            "bench.records" => self.bench_records_kb = parse_pow2_range(v).map_err(|e| e.to_string())?,
            "bench.repetitions" => self.bench_repetitions = num(v)?,
            "bench.threads" => self.bench_threads = num(v)?,
            "workflow.vehicles" => self.vehicles = num(v)?,
            "workflow.filter" => {
                self.filter_mask = Some(v.split(',').map(|s| parse_bool(s.trim())).collect::<Result<_, _>>()?)
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.platoon.validate().map_err(|e| e.to_string())?;
        self.emission.validate().map_err(|e| e.to_string())?;
        if !(self.route.origin.is_valid() && self.route.destination.is_valid()) {
            return Err("route endpoints must be valid coordinates".into());
        }
        if !(self.route.radius_m.is_finite() && self.route.radius_m > 0.0) {
            return Err("fcd.radius_m must be > 0".into());
        }
        if let Some(m) = &self.filter_mask {
            if m.len() != self.vehicles {
                return Err(format!("workflow.filter has {} entries for {} vehicles", m.len(), self.vehicles));
            }
        }
        if self.bench_repetitions == 0 || self.bench_threads == 0 {
            return Err("bench.repetitions and bench.threads must be >= 1".into());
        }
        Ok(())
    }

    pub fn filter_mask(&self) -> Vec<bool> {
        self.filter_mask.clone().unwrap_or_else(|| vec![true; self.vehicles])
    }
}
