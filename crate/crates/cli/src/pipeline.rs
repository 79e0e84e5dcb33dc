//! Task handlers for the IN..OUT vehicle-data pipeline.

use fleetledger_core::clock::MonotonicClock;
use fleetledger_core::config::Config;
use fleetledger_core::fcd::{RouteQuery, Trip};
use fleetledger_core::fixture::rvt_trips;
use fleetledger_core::impute::{impute_trip_with, ImputedTrajectory};
use fleetledger_core::platoon::{compare_scenarios, write_report_csv, EfficiencyReport};
use fleetledger_core::workflow::{execute, Execution, Handlers, TaskKind, TaskStatus, WorkflowGraph};

use crate::Failure;

#[derive(Debug, Clone)]
pub enum Payload {
    Start,
    Trips(Vec<Trip>),
    Lane(Trip),
    Trajectory(ImputedTrajectory),
    /// A lane dropped by the route filter.
    Dropped,
    Reports(Vec<EfficiencyReport>),
    Csv(Vec<u8>),
}

fn lane(node_v: Option<usize>) -> Result<usize, String> {
    node_v.ok_or_else(|| "per-vehicle task without a vehicle index".to_string())
}

pub fn handlers(cfg: &Config) -> Result<Handlers<Payload>, Failure> {
    let seed = cfg.seed;
    let densify = cfg.densify;
    let query = RouteQuery::new(cfg.route.origin, cfg.route.destination, cfg.route.radius_m)?;
    let mut pcfg = cfg.platoon.clone();
    pcfg.seed = seed;
    let em = cfg.emission;

    Ok(Handlers::new()
        .on(TaskKind::In, |_, _| Ok(Payload::Start))
        .on(TaskKind::Wp1, move |_, _| Ok(Payload::Trips(rvt_trips(seed))))
        .on(TaskKind::Sp, |node, inputs| {
            let v = lane(node.vehicle_index)?;
            match inputs {
                [Payload::Trips(trips)] if !trips.is_empty() => Ok(Payload::Lane(trips[(v - 1) % trips.len()].clone())),
                _ => Err("expected the trip set".into()),
            }
        })
        .on(TaskKind::Dc, move |_, inputs| match inputs {
            [Payload::Lane(trip)] => impute_trip_with(trip, densify)
                .map(Payload::Trajectory)
                .map_err(|e| e.to_string()),
            _ => Err("expected one trip".into()),
        })
        .on(TaskKind::Df, move |_, inputs| match inputs {
            [Payload::Trajectory(t)] => Ok(if query.matches(&t.to_trip()) {
                Payload::Trajectory(t.clone())
            } else {
                Payload::Dropped
            }),
            _ => Err("expected one trajectory".into()),
        })
        .on(TaskKind::Ag, move |_, inputs| {
            let mut reports = Vec::new();
            for p in inputs {
                if let Payload::Trajectory(t) = p {
                    let (c, n) = compare_scenarios(t, &pcfg, &em, "R.VT").map_err(|e| e.to_string())?;
                    reports.push(c);
                    reports.push(n);
                }
            }
            Ok(Payload::Reports(reports))
        })
        .on(TaskKind::Da, |_, inputs| match inputs {
            [Payload::Reports(r)] => {
                let mut buf = Vec::new();
                write_report_csv(r, &mut buf).map_err(|e| e.to_string())?;
                Ok(Payload::Csv(buf))
            }
            _ => Err("expected the aggregated reports".into()),
        })
        .on(TaskKind::Out, |_, inputs| match inputs {
            [p] => Ok((*p).clone()),
            _ => Err("expected one input".into()),
        }))
}

pub fn run(graph: &WorkflowGraph, cfg: &Config) -> Result<Execution<Payload>, Failure> {
    Ok(execute(graph, &handlers(cfg)?, &MonotonicClock::new())?)
}

/// The report CSV that reached OUT.
pub fn aggregate_csv(run: &Execution<Payload>, graph: &WorkflowGraph) -> Result<Vec<u8>, Failure> {
    if let Some(e) = run.trace.entries.iter().find(|e| e.status == TaskStatus::Failed) {
        return Err(format!("task {} failed: {}", e.task_id, e.error.as_deref().unwrap_or("")).into());
    }
    match run.output(graph, "OUT") {
        Some(Payload::Csv(b)) => Ok(b.clone()),
        _ => Err("pipeline produced no report".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fleetledger_core::impute::Densify;
    use fleetledger_core::workflow::build_graph;

    fn quick() -> Config {
        Config {
            densify: Densify::Resolution(20.0),
            ..Config::default()
        }
    }

    #[test]
    fn three_vehicles_reach_out() {
        let g = build_graph(3, &[true, false, true]).unwrap();
        let run = run(&g, &quick()).unwrap();
        assert!(run.trace.succeeded());
        let csv = String::from_utf8(aggregate_csv(&run, &g).unwrap()).unwrap();
        // two scenarios of three trucks plus a sum row, per vehicle
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 4);
    }

    #[test]
    fn no_vehicles_yields_header_only() {
        let g = build_graph(0, &[]).unwrap();
        let run = run(&g, &quick()).unwrap();
        let csv = aggregate_csv(&run, &g).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
    }

    #[test]
    fn filter_drops_off_route_lanes() {
        let mut cfg = quick();
        cfg.route.radius_m = 1.0;
        let g = build_graph(2, &[true, false]).unwrap();
        let run = run(&g, &cfg).unwrap();
        assert!(matches!(run.output(&g, "DF1"), Some(Payload::Dropped)));
        let csv = String::from_utf8(aggregate_csv(&run, &g).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
    }
}
