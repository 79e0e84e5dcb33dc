use std::collections::BTreeMap;
use std::sync::Arc;

use fleetledger_core::clock::TickClock;
use fleetledger_core::fcd::{extract_route_trips, parse_fcd, serialize_fcd, RouteQuery};
use fleetledger_core::fixture::{rtl_trips, rvt_trips, TATTENDORF, VIENNA_AIRPORT};
use fleetledger_core::gpx::{parse_gpx, write_gpx};
use fleetledger_core::impute::{impute_trip_with, Densify};
use fleetledger_core::ledger::{verify_anchor, AnchorTx, Chain, Ledger, LedgerConfig, VerifyOutcome};
use fleetledger_core::platoon::{compare_scenarios, write_report_csv, EmissionModel, PlatoonConfig};
use fleetledger_core::store::{Volume, VolumeConfig};

#[test]
fn csv_and_gpx_round_trip_then_route_extraction() {
    let mut trips = rvt_trips(3);
    trips.extend(rtl_trips(3));

    let mut csv = Vec::new();
    serialize_fcd(&trips, &mut csv).unwrap();
    let parsed = parse_fcd(csv.as_slice()).unwrap();
    assert_eq!(parsed.dropped, 0);
    assert_eq!(parsed.trips.len(), 6);

    let mut gpx = Vec::new();
    write_gpx(&parsed.trips, &mut gpx).unwrap();
    let back = parse_gpx(gpx.as_slice()).unwrap();
    assert_eq!(back.len(), 6);
    for (a, b) in parsed.trips.iter().zip(&back) {
        assert_eq!(a.id(), b.id());
        assert_eq!(a.points().len(), b.points().len());
    }

    let q = RouteQuery::new(VIENNA_AIRPORT, TATTENDORF, 2_000.0).unwrap();
    let kept = extract_route_trips(&back, &q);
    assert_eq!(kept.len(), 3);
    assert!(kept.iter().all(|t| t.id().ends_with("R.VT")));
}

#[test]
fn report_is_stored_anchored_and_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = VolumeConfig {
        bricks: 3,
        replicas: 2,
        vnodes: 64,
    };
    let traj = impute_trip_with(&rvt_trips(0)[1], Densify::Resolution(10.0)).unwrap();
    let (c, n) = compare_scenarios(&traj, &PlatoonConfig::default(), &EmissionModel::default(), "R.VT").unwrap();
    let mut report = Vec::new();
    write_report_csv(&[c, n], &mut report).unwrap();

    let chain_text = {
        let vol = Volume::open_dir(dir.path(), &cfg, Arc::new(TickClock::new(1))).unwrap();
        let content = vol.write("reports/T1.csv", &report).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("trip".to_string(), "T1_R.VT".to_string());
        let tx = AnchorTx::new(content, meta, 0, 0);
        let mut ledger = Ledger::new(&LedgerConfig::default()).unwrap();
        ledger.append_anchor(&tx, &[]).unwrap();
        vol.persist_stats().unwrap();
        ledger.chain().to_file_text()
    };

    let vol = Volume::open_dir(dir.path(), &cfg, Arc::new(TickClock::new(1))).unwrap();
    let chain = Chain::from_file_text(&chain_text).unwrap();
    let tx_id = chain.blocks()[0].txs[0].tx_id();
    assert!(matches!(verify_anchor(&chain, &tx_id, &vol).unwrap(), VerifyOutcome::Ok { height: 0, .. }));
    assert_eq!(vol.read("reports/T1.csv").unwrap(), report);
    assert!(vol.profile().calls(fleetledger_core::store::Fop::Write) >= 2);
}
