use std::io::{self, Write};

use super::EfficiencyReport;

pub const REPORT_HEADER: &str = "scenario,route,trip,truck,travel_time_s,emissions";

/// Writes reports as one row per truck and a `SUM` row per scenario.
pub fn write_report_csv<W: Write>(reports: &[EfficiencyReport], mut out: W) -> io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        let scenario = r.scenario.as_str();
        for t in &r.per_truck {
            writeln!(
                out,
                "{scenario},{},{},{},{},{:.2}",
                r.route_label, r.trip_label, t.truck_id, t.travel_time_s, t.emissions
            )?;
        }
        writeln!(
            out,
            "{scenario},{},{},SUM,{},{:.2}",
            r.route_label,
            r.trip_label,
            r.travel_time_s(),
            r.emissions_sum
        )?;
    }
    Ok(())
}
