use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    independent_trucks, platoon_trucks, EfficiencyReport, EmissionModel, EmissionUnit, PlatoonConfig, PlatoonError,
    Scenario, TruckResult, TruckSpec,
};
use crate::impute::ImputedTrajectory;

const KMH_PER_MPS: f64 = 3.6;

/// Recorded speed as a function of distance along the path.
pub(crate) struct SpeedProfile {
    cum_m: Vec<f64>,
    speed_mps: Vec<f64>,
}

impl SpeedProfile {
    pub(crate) fn from_trajectory(traj: &ImputedTrajectory) -> Result<Self, PlatoonError> {
        if traj.points.len() < 2 {
            return Err(PlatoonError::TrajectoryTooShort);
        }
        let cum_m = traj.cumulative_distance_m();
        if cum_m[cum_m.len() - 1] <= 0.0 {
            return Err(PlatoonError::TrajectoryTooShort);
        }
        let speed_mps = traj.points.iter().map(|p| p.speed_kmh / KMH_PER_MPS).collect();
        Ok(Self { cum_m, speed_mps })
    }

    pub(crate) fn length_m(&self) -> f64 {
        self.cum_m[self.cum_m.len() - 1]
    }
}

/// Walks the profile forward; positions only ever increase so a cursor replaces binary search.
struct ProfileCursor<'a> {
    profile: &'a SpeedProfile,
    idx: usize,
}

impl<'a> ProfileCursor<'a> {
    fn new(profile: &'a SpeedProfile) -> Self {
        Self { profile, idx: 0 }
    }

    fn speed_at(&mut self, s: f64) -> f64 {
        let cum = &self.profile.cum_m;
        while self.idx + 2 < cum.len() && cum[self.idx + 1] <= s {
            self.idx += 1;
        }
        let (s0, s1) = (cum[self.idx], cum[self.idx + 1]);
        let (v0, v1) = (self.profile.speed_mps[self.idx], self.profile.speed_mps[self.idx + 1]);
        if s1 <= s0 {
            return v1;
        }
        let f = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        v0 + f * (v1 - v0)
    }
}

pub(crate) struct Rollout {
    pub travel_time_s: f64,
    pub cumulated_mg: f64,
}

/// Fixed-step kinematic rollout of a single truck.
fn rollout(
    profile: &SpeedProfile,
    cfg: &PlatoonConfig,
    em: &EmissionModel,
    speed_factor: impl Fn(f64) -> f64,
) -> Rollout {
    let length = profile.length_m();
    let mut cursor = ProfileCursor::new(profile);
    let mut s = 0.0;
    let mut steps: u64 = 0;
    let mut cumulated = 0.0;
    // sub-micrometre remainders are rounding in the cumulative distance
    while s < length - 1e-6 {
        let v = (cursor.speed_at(s) * speed_factor(s)).max(cfg.min_speed_mps);
        cumulated += em.rate(v) * cfg.step_s;
        s += v * cfg.step_s;
        steps += 1;
    }
    Rollout {
        travel_time_s: steps as f64 * cfg.step_s,
        cumulated_mg: cumulated,
    }
}

fn express(unit: EmissionUnit, r: &Rollout, factor: f64) -> f64 {
    match unit {
        EmissionUnit::Cumulated => r.cumulated_mg * factor,
        EmissionUnit::MeanRate => r.cumulated_mg * factor / r.travel_time_s,
    }
}

/// Simulates one scenario (`cfg.connected`) for three trucks along `trajectory`.
pub fn simulate_convoy(
    trajectory: &ImputedTrajectory,
    trucks: &[TruckSpec; 3],
    cfg: &PlatoonConfig,
    em: &EmissionModel,
    route_label: &str,
) -> Result<EfficiencyReport, PlatoonError> {
    cfg.validate()?;
    em.validate()?;
    let profile = SpeedProfile::from_trajectory(trajectory)?;
    Ok(simulate_profile(&profile, trucks, cfg, em, route_label, &trajectory.trip_id))
}

pub(crate) fn simulate_profile(
    profile: &SpeedProfile,
    trucks: &[TruckSpec; 3],
    cfg: &PlatoonConfig,
    em: &EmissionModel,
    route_label: &str,
    trip_label: &str,
) -> EfficiencyReport {
    let per_truck = if cfg.connected {
        // followers replay the leader's speed profile exactly, so one rollout serves all three
        let sf = cfg.speed_factor_connected;
        let lead = rollout(profile, cfg, em, |_| sf);
        trucks
            .iter()
            .map(|t| TruckResult {
                truck_id: t.id().to_string(),
                position: t.position(),
                departure_s: cfg.headway_s * (t.position() - 1) as f64,
                travel_time_s: lead.travel_time_s,
                emissions: express(cfg.emission_unit, &lead, cfg.drag_reduction[t.position() - 1]),
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        trucks
            .iter()
            .map(|t| {
                let run = match cfg.noise {
                    Some(noise) => {
                        let n_seg = (profile.length_m() / noise.segment_m).ceil() as usize + 1;
                        let factors: Vec<f64> = (0..n_seg)
                            .map(|_| {
                                if noise.max > noise.min {
                                    rng.random_range(noise.min..noise.max)
                                } else {
                                    noise.min
                                }
                            })
                            .collect();
                        rollout(profile, cfg, em, |s| {
                            factors[((s / noise.segment_m) as usize).min(n_seg - 1)]
                        })
                    }
                    None => rollout(profile, cfg, em, |_| 1.0),
                };
                TruckResult {
                    truck_id: t.id().to_string(),
                    position: t.position(),
                    departure_s: 0.0,
                    travel_time_s: run.travel_time_s,
                    emissions: express(cfg.emission_unit, &run, 1.0),
                }
            })
            .collect()
    };
    let scenario = if cfg.connected {
        Scenario::Connected
    } else {
        Scenario::NotConnected
    };
    EfficiencyReport::new(scenario, route_label, trip_label, cfg.emission_unit, per_truck)
}

/// Runs both scenarios with the default truck sets: `(connected, not_connected)`.
pub fn compare_scenarios(
    trajectory: &ImputedTrajectory,
    cfg: &PlatoonConfig,
    em: &EmissionModel,
    route_label: &str,
) -> Result<(EfficiencyReport, EfficiencyReport), PlatoonError> {
    let connected = PlatoonConfig {
        connected: true,
        ..cfg.clone()
    };
    let not_connected = PlatoonConfig {
        connected: false,
        ..cfg.clone()
    };
    Ok((
        simulate_convoy(trajectory, &platoon_trucks(), &connected, em, route_label)?,
        simulate_convoy(trajectory, &independent_trucks(), &not_connected, em, route_label)?,
    ))
}
