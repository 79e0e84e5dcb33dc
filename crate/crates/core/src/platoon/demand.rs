use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PlatoonError;

/// Vehicle types inserted by the route generator, one per convoy truck.
pub const VEHICLE_TYPES: [&str; 3] = ["platooningvType", "truckvType", "truckClass"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Departure {
    pub step: u64,
    /// Index into [`VEHICLE_TYPES`].
    pub vehicle_type: usize,
    /// Running vehicle number at insertion time.
    pub veh_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemandSchedule {
    pub departures: Vec<Departure>,
    pub veh_nr: u64,
}

/// Seeded traffic demand: at each step every truck type is inserted when a
/// uniform draw falls below `p_insert`.
pub fn generate_demand(n_steps: u64, p_insert: f64, seed: u64) -> Result<DemandSchedule, PlatoonError> {
    if !(0.0..=1.0).contains(&p_insert) {
        return Err(PlatoonError::InvalidProbability(p_insert));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = DemandSchedule::default();
    for step in 0..n_steps {
        for vehicle_type in 0..VEHICLE_TYPES.len() {
            if rng.random::<f64>() < p_insert {
                schedule.departures.push(Departure {
                    step,
                    vehicle_type,
                    veh_id: schedule.veh_nr,
                });
                schedule.veh_nr += 1;
            }
        }
    }
    Ok(schedule)
}
