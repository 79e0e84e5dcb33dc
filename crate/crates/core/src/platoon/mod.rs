//! Three-truck convoy simulation: platooning versus conventional driving.
//!
//! A convoy is rolled out along an imputed trajectory with a fixed time
//! step. Connected convoys drive the recorded speed profile scaled by a
//! cruise-speed factor and get a per-position emission multiplier for the
//! reduced drag; followers replay the leader's profile at a fixed headway.
//! Unconnected trucks drive independently with seeded multiplicative speed
//! noise. Emission rates come from a quadratic speed model.

mod calibrate;
mod demand;
mod report;
mod sim;

pub use calibrate::{calibrate, CalibrationTargets, RVT_EMISSION_RATIO, RVT_TRAVEL_TIME_RATIO};
pub use demand::{generate_demand, DemandSchedule, Departure, VEHICLE_TYPES};
pub use report::write_report_csv;
pub use sim::{compare_scenarios, simulate_convoy};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlatoonError {
    #[error("invalid truck {id}: {reason}")]
    InvalidTruck { id: String, reason: String },
    #[error("invalid platoon config: {0}")]
    InvalidConfig(String),
    #[error("invalid emission model: {0}")]
    InvalidEmissionModel(String),
    #[error("trajectory needs at least 2 points and positive length")]
    TrajectoryTooShort,
    #[error("infeasible calibration target: {0}")]
    Infeasible(String),
    #[error("insertion probability must be within [0, 1], got {0}")]
    InvalidProbability(f64),
}

pub const HDV_EMISSION_CLASS: &str = "HBEFA3/HDV_D_EU5";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruckRole {
    Leader,
    Follower,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruckSpec {
    id: String,
    role: TruckRole,
    position: usize,
    emission_class: String,
}

impl TruckSpec {
    pub fn new(id: impl Into<String>, role: TruckRole, position: usize, emission_class: impl Into<String>) -> Result<Self, PlatoonError> {
        let id = id.into();
        let bad = |reason: &str| PlatoonError::InvalidTruck {
            id: id.clone(),
            reason: reason.into(),
        };
        if !(1..=3).contains(&position) {
            return Err(bad("position must be 1..=3"));
        }
        match role {
            TruckRole::Leader if position != 1 => return Err(bad("leader must be at position 1")),
            TruckRole::Follower if position < 2 => return Err(bad("follower must be at position >= 2")),
            _ => {}
        }
        Ok(Self {
            id,
            role,
            position,
            emission_class: emission_class.into(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> TruckRole {
        self.role
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn emission_class(&self) -> &str {
        &self.emission_class
    }
}

/// The semi-autonomous leader with two autonomous followers.
pub fn platoon_trucks() -> [TruckSpec; 3] {
    [
        TruckSpec::new("SAL.Tr1", TruckRole::Leader, 1, HDV_EMISSION_CLASS).unwrap(),
        TruckSpec::new("AF.Tr2", TruckRole::Follower, 2, HDV_EMISSION_CLASS).unwrap(),
        TruckSpec::new("AF.Tr3", TruckRole::Follower, 3, HDV_EMISSION_CLASS).unwrap(),
    ]
}

/// Three trucks driving on their own.
pub fn independent_trucks() -> [TruckSpec; 3] {
    [
        TruckSpec::new("Tr1", TruckRole::Independent, 1, HDV_EMISSION_CLASS).unwrap(),
        TruckSpec::new("Tr2", TruckRole::Independent, 2, HDV_EMISSION_CLASS).unwrap(),
        TruckSpec::new("Tr3", TruckRole::Independent, 3, HDV_EMISSION_CLASS).unwrap(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Connected,
    NotConnected,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Connected => "connected",
            Scenario::NotConnected => "not_connected",
        }
    }
}

/// How the per-truck emission figure is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmissionUnit {
    /// Cumulated milligrams divided by travel time (mg/s).
    #[default]
    MeanRate,
    /// Raw cumulated milligrams.
    Cumulated,
}

/// Multiplicative speed perturbation for unconnected trucks, redrawn every `segment_m` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedNoise {
    pub min: f64,
    pub max: f64,
    pub segment_m: f64,
}

impl Default for SpeedNoise {
    fn default() -> Self {
        Self {
            min: 0.9,
            max: 1.0,
            segment_m: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonConfig {
    pub connected: bool,
    pub speed_factor_connected: f64,
    pub headway_s: f64,
    /// Emission multipliers for positions 1, 2 and 3 in a connected convoy.
    pub drag_reduction: [f64; 3],
    pub step_s: f64,
    pub noise: Option<SpeedNoise>,
    /// Lower bound on simulated speed so stops in the recorded profile do not stall the rollout.
    pub min_speed_mps: f64,
    pub emission_unit: EmissionUnit,
    pub seed: u64,
}

impl Default for PlatoonConfig {
    /// Factors calibrated against the travel-time and emission ratios of the
    /// Vienna airport to Tattendorf trips (see `calibrate`).
    fn default() -> Self {
        Self {
            connected: true,
            speed_factor_connected: 1.2079,
            headway_s: 1.0,
            drag_reduction: [0.7636, 0.7459, 0.7282],
            step_s: 1.0,
            noise: Some(SpeedNoise::default()),
            min_speed_mps: 1.0,
            emission_unit: EmissionUnit::MeanRate,
            seed: 0,
        }
    }
}

impl PlatoonConfig {
    pub fn validate(&self) -> Result<(), PlatoonError> {
        let bad = |m: String| Err(PlatoonError::InvalidConfig(m));
        if !(self.speed_factor_connected.is_finite() && self.speed_factor_connected > 0.0) {
            return bad(format!("speed_factor_connected must be > 0, got {}", self.speed_factor_connected));
        }
        if !(self.headway_s.is_finite() && self.headway_s > 0.0) {
            return bad(format!("headway_s must be > 0, got {}", self.headway_s));
        }
        if !(self.step_s.is_finite() && self.step_s > 0.0) {
            return bad(format!("step_s must be > 0, got {}", self.step_s));
        }
        if !(self.min_speed_mps.is_finite() && self.min_speed_mps > 0.0) {
            return bad(format!("min_speed_mps must be > 0, got {}", self.min_speed_mps));
        }
        if self.drag_reduction.iter().any(|f| !(f.is_finite() && *f > 0.0 && *f <= 1.0)) {
            return bad(format!("drag factors must lie in (0, 1], got {:?}", self.drag_reduction));
        }
        let d = self.drag_reduction;
        if d[0] < d[1] || d[1] < d[2] {
            return bad(format!("drag factors must be non-increasing by position, got {d:?}"));
        }
        if let Some(n) = self.noise {
            if !(n.min.is_finite() && n.max.is_finite() && 0.0 < n.min && n.min <= n.max) {
                return bad(format!("speed noise range invalid: [{}, {}]", n.min, n.max));
            }
            if !(n.segment_m.is_finite() && n.segment_m > 0.0) {
                return bad(format!("noise segment must be > 0 m, got {}", n.segment_m));
            }
        }
        Ok(())
    }
}

/// Emission rate `e(v) = c0 + c1·v + c2·v²` in mg/s with `v` in m/s, floored at `idle_floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub idle_floor: f64,
}

impl Default for EmissionModel {
    fn default() -> Self {
        Self {
            c0: 3_000.0,
            c1: 60.0,
            c2: 2.0,
            idle_floor: 1_000.0,
        }
    }
}

impl EmissionModel {
    pub fn constant(rate_mg_s: f64) -> Self {
        Self {
            c0: rate_mg_s,
            c1: 0.0,
            c2: 0.0,
            idle_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlatoonError> {
        if ![self.c0, self.c1, self.c2, self.idle_floor].iter().all(|c| c.is_finite()) {
            return Err(PlatoonError::InvalidEmissionModel("coefficients must be finite".into()));
        }
        if self.idle_floor < 0.0 {
            return Err(PlatoonError::InvalidEmissionModel(format!(
                "idle_floor must be >= 0, got {}",
                self.idle_floor
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn rate(&self, speed_mps: f64) -> f64 {
        (self.c0 + self.c1 * speed_mps + self.c2 * speed_mps * speed_mps).max(self.idle_floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruckResult {
    pub truck_id: String,
    pub position: usize,
    pub departure_s: f64,
    pub travel_time_s: f64,
    pub emissions: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub scenario: Scenario,
    pub route_label: String,
    pub trip_label: String,
    pub unit: EmissionUnit,
    pub per_truck: Vec<TruckResult>,
    pub emissions_sum: f64,
}

impl EfficiencyReport {
    fn new(scenario: Scenario, route_label: &str, trip_label: &str, unit: EmissionUnit, per_truck: Vec<TruckResult>) -> Self {
        let emissions_sum = per_truck.iter().map(|t| t.emissions).sum();
        Self {
            scenario,
            route_label: route_label.to_string(),
            trip_label: trip_label.to_string(),
            unit,
            per_truck,
            emissions_sum,
        }
    }

    /// Scenario travel time: the slowest truck of the convoy.
    pub fn travel_time_s(&self) -> f64 {
        self.per_truck.iter().map(|t| t.travel_time_s).fold(0.0, f64::max)
    }
}
