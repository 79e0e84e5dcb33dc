//! Vehicle trip imputation, truck platooning simulation and a hash-anchored
//! off-chain store with a replicated consensus ledger.

pub mod fcd;
pub mod geo;
pub mod gpx;
pub mod impute;
pub mod spline;
pub mod fixture;
pub mod platoon;
pub mod clock;
pub mod workflow;
pub mod store;
pub mod ledger;
pub mod bench;
pub mod config;
