use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fleetledger_core::fcd::serialize_fcd;
use fleetledger_core::fixture::{rtl_trips, rvt_trips};

fn demo_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo.cfg")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetledger"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["teleport"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nimpute.resolutoin_m = 2\n").unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), &["--seed", "5", "simulate"]);
    let b = run(dir.path(), &["--seed", "5", "simulate"]);
    let c = run(dir.path(), &["--seed", "6", "simulate"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("scenario,route,trip,truck,travel_time_s,emissions\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 4);
}

#[test]
fn ingest_extract_impute_chain() {
    let dir = tempfile::tempdir().unwrap();
    let mut trips = rvt_trips(1);
    trips.extend(rtl_trips(1));
    let mut csv = Vec::new();
    serialize_fcd(&trips, &mut csv).unwrap();
    std::fs::write(dir.path().join("fcd.csv"), &csv).unwrap();

    let gpx = run(dir.path(), &["ingest", "fcd.csv", "--to", "gpx"]);
    assert_eq!(gpx.status.code(), Some(0));
    std::fs::write(dir.path().join("trips.gpx"), &gpx.stdout).unwrap();

    let routed = run(dir.path(), &["extract", "trips.gpx"]);
    assert_eq!(routed.status.code(), Some(0));
    let routed_text = stdout(&routed);
    assert!(routed_text.contains("T0_R.VT") && !routed_text.contains("R.TL"));
    std::fs::write(dir.path().join("rvt.csv"), &routed.stdout).unwrap();

    let dense = run(dir.path(), &["impute", "rvt.csv", "--resolution-m", "50"]);
    assert_eq!(dense.status.code(), Some(0));
    let rows = stdout(&dense).lines().count() - 1;
    // three trips of about 44 km at 50 m spacing
    assert!((2_400..2_900).contains(&rows), "{rows}");
}

#[test]
fn workflow_demo_anchors_a_verifiable_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_cfg();
    let o = run(dir.path(), &["workflow", "--vehicles", "3", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let tx = text.lines().last().unwrap().strip_prefix("anchored ").unwrap().to_string();
    assert!(String::from_utf8_lossy(&o.stderr).contains("OUT\tok"));

    let v = run(dir.path(), &["--config", cfg.to_str().unwrap(), "verify", &tx]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));

    let p = run(dir.path(), &["--config", cfg.to_str().unwrap(), "profile", "--csv"]);
    assert_eq!(p.status.code(), Some(0));
    assert!(stdout(&p).contains("WRITE"));

    // a second identical run in a fresh directory anchors the same bytes under the same id
    let again = tempfile::tempdir().unwrap();
    let o2 = run(again.path(), &["workflow", "--vehicles", "3", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o2.stdout, o.stdout);
}

#[test]
fn verify_reports_missing_and_tampered() {
    let dir = tempfile::tempdir().unwrap();
    let zero = "0".repeat(64);
    assert_eq!(run(dir.path(), &["verify", &zero]).status.code(), Some(3));
    std::fs::write(dir.path().join("a.txt"), b"payload").unwrap();
    let o = run(dir.path(), &["anchor", "a.txt", "--meta", "kind=test"]);
    let tx = stdout(&o).trim().to_string();
    assert_eq!(run(dir.path(), &["verify", &tx]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["verify", &zero]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["verify", "xyz"]).status.code(), Some(1));

    let blobs: Vec<PathBuf> = std::fs::read_dir(dir.path().join(".fleetledger/volume"))
        .unwrap()
        .flat_map(|b| std::fs::read_dir(b.unwrap().path().join("blobs")).into_iter().flatten())
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(blobs.len(), 1);
    std::fs::write(&blobs[0], b"pAyload").unwrap();
    assert_eq!(run(dir.path(), &["verify", &tx]).status.code(), Some(2));
}

#[test]
fn bench_covers_every_valid_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["bench", "--files", "4..512", "--records", "64..256", "--repetitions", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let cells: Vec<(u64, u64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap())
        })
        .collect();
    assert_eq!(
        cells,
        [(64, 64), (128, 64), (128, 128), (256, 64), (256, 128), (256, 256), (512, 64), (512, 128), (512, 256)]
    );
    assert_eq!(run(dir.path(), &["bench", "--files", "3..8"]).status.code(), Some(1));
}
