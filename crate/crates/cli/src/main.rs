mod pipeline;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fleetledger_core::bench::{parse_pow2_range, run_bench, BenchGrid};
use fleetledger_core::clock::MonotonicClock;
use fleetledger_core::config::Config;
use fleetledger_core::fcd::{extract_route_trips, parse_fcd, serialize_fcd, RouteQuery, Trip};
use fleetledger_core::fixture::rvt_trips;
use fleetledger_core::geo::LatLon;
use fleetledger_core::gpx::{parse_gpx, write_gpx};
use fleetledger_core::impute::{impute_trip_with, Densify};
use fleetledger_core::ledger::{AnchorTx, Chain};
use fleetledger_core::ledger::{ContractRule, Response, Trigger};
use fleetledger_core::ledger::from_hex;
use fleetledger_core::ledger::{verify_anchor, Ledger, LedgerConfig, VerifyOutcome};
use fleetledger_core::platoon::{calibrate, CalibrationTargets};
use fleetledger_core::platoon::write_report_csv;
use fleetledger_core::platoon::compare_scenarios;
use fleetledger_core::store::Volume;

const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "fleetledger", version, about = "Trip imputation, platoon simulation and anchored off-chain storage")]
struct Cli {
    /// Seed for every pseudo-random choice (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Off-chain volume directory.
    #[arg(long, global = true, default_value = ".fleetledger/volume")]
    volume: PathBuf,
    /// Chain file.
    #[arg(long, global = true, default_value = ".fleetledger/chain.txt")]
    chain: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse FCD-CSV or GPX and print the trips as FCD-CSV (or GPX).
    Ingest {
        input: PathBuf,
        #[command(flatten)]
        io: TripIo,
    },
    /// Keep trips that start near the origin and end near the destination.
    Extract {
        input: PathBuf,
        #[command(flatten)]
        io: TripIo,
        /// `lat,lon`
        #[arg(long, value_parser = parse_latlon)]
        origin: Option<LatLon>,
        /// `lat,lon`
        #[arg(long, value_parser = parse_latlon)]
        dest: Option<LatLon>,
        #[arg(long)]
        radius_m: Option<f64>,
    },
    /// Densify trips with cubic Hermite splines.
    Impute {
        input: PathBuf,
        #[command(flatten)]
        io: TripIo,
        #[arg(long, conflicts_with = "factor")]
        resolution_m: Option<f64>,
        #[arg(long)]
        factor: Option<usize>,
    },
    /// Simulate connected and unconnected convoys and print the efficiency CSV.
    Simulate {
        /// FCD-CSV or GPX trips; the bundled R.VT trips when omitted.
        input: Option<PathBuf>,
        #[arg(long, default_value = "R.VT")]
        route: String,
        /// Re-fit speed and drag factors on the first trip before simulating.
        #[arg(long)]
        calibrate: bool,
    },
    /// Store a file in the volume and anchor its digest on the chain.
    Anchor {
        file: PathBuf,
        /// Volume path; `reports/<file name>` by default.
        #[arg(long)]
        path: Option<String>,
        /// Index metadata, `key=value`, repeatable.
        #[arg(long = "meta", value_parser = parse_meta)]
        meta: Vec<(String, String)>,
        #[arg(long, default_value_t = 0)]
        submitter: u64,
    },
    /// Check an anchored file against the chain. Exit 0 ok, 2 mismatch, 3 missing.
    Verify { tx_id: String },
    /// Print the per-brick FOP profile.
    Profile {
        #[arg(long)]
        csv: bool,
    },
    /// Sweep file size by record size writes over the volume and print the throughput CSV.
    Bench {
        /// `LO..HI` powers of two, KiB.
        #[arg(long)]
        files: Option<String>,
        /// `LO..HI` powers of two, KiB.
        #[arg(long)]
        records: Option<String>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the IN..OUT pipeline over N vehicles of bundled data and anchor the aggregate report.
    Workflow {
        #[arg(long)]
        vehicles: Option<usize>,
        /// Print the task graph instead of running it.
        #[arg(long)]
        graph: bool,
    },
}

#[derive(Args, Debug)]
struct TripIo {
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long, value_enum, default_value = "csv")]
    to: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Gpx,
}

fn parse_latlon(s: &str) -> Result<LatLon, String> {
    let (a, b) = s.split_once(',').ok_or("expected lat,lon")?;
    let p = LatLon::new(
        a.trim().parse().map_err(|_| format!("bad latitude {a:?}"))?,
        b.trim().parse().map_err(|_| format!("bad longitude {b:?}"))?,
    );
    if !p.is_valid() {
        return Err(format!("{s} is not a valid coordinate"));
    }
    Ok(p)
}

fn parse_meta(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.to_string(), v.to_string()))
}

type Failure = Box<dyn std::error::Error>;

fn read_trips(input: &Path, format: Option<Format>) -> Result<Vec<Trip>, Failure> {
    let format = format.unwrap_or_else(|| match input.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("gpx") => Format::Gpx,
        _ => Format::Csv,
    });
    let file = File::open(input).map_err(|e| format!("{}: {e}", input.display()))?;
    Ok(match format {
        Format::Csv => {
            let parsed = parse_fcd(file)?;
            if parsed.dropped > 0 {
                eprintln!("dropped {} trip(s) with fewer than two rows", parsed.dropped);
            }
            parsed.trips
        }
        Format::Gpx => parse_gpx(BufReader::new(file))?,
    })
}

fn write_trips(trips: &[Trip], to: Format, out: &mut dyn Write) -> Result<(), Failure> {
    match to {
        Format::Csv => serialize_fcd(trips, out)?,
        Format::Gpx => write_gpx(trips, out)?,
    }
    Ok(())
}

fn open_volume(cli: &Cli, cfg: &Config) -> Result<Volume, Failure> {
    Ok(Volume::open_dir(&cli.volume, &cfg.store, Arc::new(MonotonicClock::new()))?)
}

fn load_chain(path: &Path) -> Result<Chain, Failure> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Chain::from_file_text(&text)?),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Chain::new()),
        Err(e) => Err(format!("{}: {e}", path.display()).into()),
    }
}

fn save_chain(path: &Path, chain: &Chain) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, chain.to_file_text())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Only submitter 0 may anchor.
pub(crate) fn anchor_rules() -> Vec<ContractRule> {
    vec![ContractRule::new("authorized-submitter", Trigger::Always, Response::Accept).only([0])]
}

pub(crate) fn ledger_config(cfg: &Config) -> LedgerConfig {
    LedgerConfig {
        validators: cfg.validators,
        faults: cfg.faults,
        seed: cfg.seed,
        ..LedgerConfig::default()
    }
}

/// Writes `bytes` to the volume, anchors them and saves the chain. Returns the tx id.
pub(crate) fn anchor_bytes(
    vol: &Volume,
    chain_path: &Path,
    cfg: &Config,
    path: &str,
    bytes: &[u8],
    meta: BTreeMap<String, String>,
    submitter: u64,
) -> Result<String, Failure> {
    let chain = load_chain(chain_path)?;
    let content = vol.write(path, bytes)?;
    vol.persist_stats()?;
    let tx = AnchorTx::new(content, meta, submitter, chain.len() as u64);
    let mut ledger = Ledger::with_chain(&ledger_config(cfg), chain)?;
    let block = ledger.append_anchor(&tx, &anchor_rules())?;
    save_chain(chain_path, ledger.chain())?;
    Ok(block.txs[0].tx_id_hex())
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<u8, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }

    match &cli.command {
        Command::Ingest { input, io } => {
            let trips = read_trips(input, io.format)?;
            write_trips(&trips, io.to, out)?;
        }
        Command::Extract {
            input,
            io,
            origin,
            dest,
            radius_m,
        } => {
            let q = RouteQuery::new(
                origin.unwrap_or(cfg.route.origin),
                dest.unwrap_or(cfg.route.destination),
                radius_m.unwrap_or(cfg.route.radius_m),
            )?;
            let trips = extract_route_trips(&read_trips(input, io.format)?, &q);
            write_trips(&trips, io.to, out)?;
        }
        Command::Impute {
            input,
            io,
            resolution_m,
            factor,
        } => {
            let mode = match (resolution_m, factor) {
                (Some(r), _) => Densify::Resolution(*r),
                (None, Some(k)) => Densify::Factor(*k),
                (None, None) => cfg.densify,
            };
            let dense = read_trips(input, io.format)?
                .iter()
                .map(|t| impute_trip_with(t, mode).map(|d| d.to_trip()))
                .collect::<Result<Vec<_>, _>>()?;
            write_trips(&dense, io.to, out)?;
        }
        Command::Simulate {
            input,
            route,
            calibrate: fit,
        } => {
            let trips = match input {
                Some(p) => read_trips(p, None)?,
                None => rvt_trips(cfg.seed),
            };
            let trajectories = trips
                .iter()
                .map(|t| impute_trip_with(t, cfg.densify))
                .collect::<Result<Vec<_>, _>>()?;
            let (mut pcfg, mut em) = (cfg.platoon.clone(), cfg.emission);
            pcfg.seed = cfg.seed;
            if *fit {
                let first = trajectories.first().ok_or("no trips to calibrate on")?;
                (pcfg, em) = calibrate(first, &pcfg, &em, CalibrationTargets::rvt())?;
                eprintln!(
                    "calibrated speed_factor={:.4} drag={:.4?}",
                    pcfg.speed_factor_connected, pcfg.drag_reduction
                );
            }
            let mut reports = Vec::new();
            for t in &trajectories {
                let (c, n) = compare_scenarios(t, &pcfg, &em, route)?;
                reports.push(c);
                reports.push(n);
            }
            write_report_csv(&reports, out)?;
        }
        Command::Anchor {
            file,
            path,
            meta,
            submitter,
        } => {
            let bytes = std::fs::read(file).map_err(|e| format!("{}: {e}", file.display()))?;
            let path = match path {
                Some(p) => p.clone(),
                None => format!(
                    "reports/{}",
                    file.file_name().and_then(|n| n.to_str()).ok_or("file name is not UTF-8")?
                ),
            };
            let vol = open_volume(cli, &cfg)?;
            let tx = anchor_bytes(&vol, &cli.chain, &cfg, &path, &bytes, meta.iter().cloned().collect(), *submitter)?;
            writeln!(out, "{tx}")?;
        }
        Command::Verify { tx_id } => {
            let id = from_hex(tx_id).ok_or_else(|| format!("{tx_id:?} is not a 64-digit lowercase hex id"))?;
            let chain = match std::fs::read(&cli.chain) {
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    writeln!(out, "missing: no chain at {}", cli.chain.display())?;
                    return Ok(3);
                }
                Err(e) => return Err(e.into()),
                Ok(bytes) => match String::from_utf8(bytes).map_err(|e| e.to_string()).and_then(|t| Chain::from_file_text(&t).map_err(|e| e.to_string())) {
                    Ok(c) => c,
                    Err(e) => {
                        writeln!(out, "mismatch: chain file rejected: {e}")?;
                        return Ok(2);
                    }
                },
            };
            let vol = open_volume(cli, &cfg)?;
            let outcome = verify_anchor(&chain, &id, &vol)?;
            vol.persist_stats()?;
            match &outcome {
                VerifyOutcome::Ok { path, height } => writeln!(out, "ok: {path} at height {height}")?,
                VerifyOutcome::Mismatch { path, height, reason } => {
                    writeln!(out, "mismatch: {path} at height {height}: {reason}")?
                }
                VerifyOutcome::Missing { reason } => writeln!(out, "missing: {reason}")?,
            }
            return Ok(outcome.exit_code() as u8);
        }
        Command::Profile { csv } => {
            let profile = open_volume(cli, &cfg)?.profile();
            out.write_all(if *csv { profile.to_csv() } else { profile.to_table() }.as_bytes())?;
        }
        Command::Bench {
            files,
            records,
            repetitions,
            threads,
        } => {
            let grid = BenchGrid::new(
                files.as_deref().map(parse_pow2_range).transpose()?.unwrap_or(cfg.bench_files_kb.clone()),
                records.as_deref().map(parse_pow2_range).transpose()?.unwrap_or(cfg.bench_records_kb.clone()),
                repetitions.unwrap_or(cfg.bench_repetitions),
                threads.unwrap_or(cfg.bench_threads),
            )?;
            let vol = open_volume(cli, &cfg)?;
            let report = run_bench(&vol, &grid, cfg.seed, &MonotonicClock::new());
            vol.persist_stats()?;
            out.write_all(report.to_csv().as_bytes())?;
            if let Some(reason) = report.aborted {
                return Err(format!("benchmark aborted: {reason}").into());
            }
        }
        Command::Workflow { vehicles, graph } => {
            if let Some(n) = vehicles {
                if cfg.filter_mask.as_ref().is_some_and(|m| m.len() != *n) {
                    cfg.filter_mask = None;
                }
                cfg.vehicles = *n;
            }
            let g = fleetledger_core::workflow::build_graph(cfg.vehicles, &cfg.filter_mask())?;
            if *graph {
                out.write_all(g.to_text().as_bytes())?;
                return Ok(0);
            }
            let vol = open_volume(cli, &cfg)?;
            let run = pipeline::run(&g, &cfg)?;
            for e in &run.trace.entries {
                eprintln!("{}\t{}", e.task_id, e.status.as_str());
            }
            let csv = pipeline::aggregate_csv(&run, &g)?;
            let mut meta = BTreeMap::new();
            meta.insert("vehicles".to_string(), cfg.vehicles.to_string());
            meta.insert("seed".to_string(), cfg.seed.to_string());
            let tx = anchor_bytes(
                &vol,
                &cli.chain,
                &cfg,
                &format!("reports/workflow-s{}-n{}.csv", cfg.seed, cfg.vehicles),
                &csv,
                meta,
                0,
            )?;
            out.write_all(&csv)?;
            writeln!(out, "anchored {tx}")?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(&cli, &mut out) {
        Ok(code) => {
            let _ = out.flush();
            ExitCode::from(code)
        }
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
