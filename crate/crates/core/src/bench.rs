//! File-size by record-size write sweep over a store volume.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::store::{StoreError, Volume};

pub const BENCH_CSV_HEADER: &str = "file_kb,record_kb,throughput_kb_s";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("invalid size range {0:?}: expected LO..HI with powers of two")]
    BadRange(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchGrid {
    pub file_sizes_kb: Vec<u64>,
    pub record_sizes_kb: Vec<u64>,
    pub repetitions: usize,
    pub threads: usize,
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn pow2_range(lo: u64, hi: u64) -> Result<Vec<u64>, BenchError> {
    if !lo.is_power_of_two() || !hi.is_power_of_two() || lo > hi {
        return Err(BenchError::BadRange(format!("{lo}..{hi}")));
    }
    Ok(std::iter::successors(Some(lo), |&x| (x < hi).then_some(x * 2)).collect())
}

/// Parses `LO..HI` (or a single size) into a power-of-two axis.
pub fn parse_pow2_range(s: &str) -> Result<Vec<u64>, BenchError> {
    let bad = || BenchError::BadRange(s.to_string());
    let (lo, hi) = s.split_once("..").unwrap_or((s, s));
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    pow2_range(lo, hi).map_err(|_| bad())
}

impl BenchGrid {
    pub fn new(file_sizes_kb: Vec<u64>, record_sizes_kb: Vec<u64>, repetitions: usize, threads: usize) -> Result<Self, BenchError> {
        for (name, axis) in [("file sizes", &file_sizes_kb), ("record sizes", &record_sizes_kb)] {
            if axis.is_empty() || axis.contains(&0) || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(BenchError::InvalidGrid(format!("{name} must be positive and strictly ascending")));
            }
        }
        if repetitions == 0 || threads == 0 {
            return Err(BenchError::InvalidGrid("repetitions and threads must be >= 1".into()));
        }
        Ok(Self {
            file_sizes_kb,
            record_sizes_kb,
            repetitions,
            threads,
        })
    }

    /// Files of 4 to 2048 KiB and records of 64 to 2048 KiB, five repetitions, one writer.
    pub fn full() -> Self {
        Self::new(pow2_range(4, 2048).unwrap(), pow2_range(64, 2048).unwrap(), 5, 1).unwrap()
    }

    pub fn valid_cells(&self) -> usize {
        self.file_sizes_kb
            .iter()
            .map(|&f| self.record_sizes_kb.iter().filter(|&&r| r <= f).count())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Measured,
    /// Record larger than the file.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub file_kb: u64,
    pub record_kb: u64,
    pub status: CellStatus,
    /// Aggregate KiB/s over all writer threads, from the median repetition.
    pub throughput_kb_s: f64,
    /// Median repetition time scaled by the repetition count, so that
    /// `throughput = file_kb · threads · repetitions / elapsed_s`.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    /// Set when the store failed mid-run; `cells` then holds the completed prefix.
    pub aborted: Option<String>,
}

impl BenchReport {
    pub fn measured(&self) -> impl Iterator<Item = &BenchCell> {
        self.cells.iter().filter(|c| c.status == CellStatus::Measured)
    }

    /// Measured cells only, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_CSV_HEADER}\n");
        for c in self.measured() {
            let _ = writeln!(out, "{},{},{:.3}", c.file_kb, c.record_kb, c.throughput_kb_s);
        }
        out
    }
}

fn median(v: &mut [u64]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

// One file written chunk by chunk; the clock is read after every chunk and
// the final reading also covers fsync and commit.
fn write_file(volume: &Volume, path: &str, data: &[u8], record: usize, clock: &dyn Clock) -> Result<u64, StoreError> {
    let start = clock.now_ns();
    let mut w = volume.create(path)?;
    let chunks: Vec<&[u8]> = data.chunks(record).collect();
    let mut end = start;
    for (k, c) in chunks.iter().enumerate() {
        w.write_chunk(c)?;
        if k + 1 == chunks.len() {
            w.fsync()?;
            w.commit()?;
            end = clock.now_ns();
            break;
        }
        end = clock.now_ns();
    }
    Ok(end.saturating_sub(start))
}

pub fn run_bench(volume: &Volume, grid: &BenchGrid, seed: u64, clock: &dyn Clock) -> BenchReport {
    let mut cells = Vec::with_capacity(grid.file_sizes_kb.len() * grid.record_sizes_kb.len());
    for &file_kb in &grid.file_sizes_kb {
        for &record_kb in &grid.record_sizes_kb {
            if record_kb > file_kb {
                cells.push(BenchCell {
                    file_kb,
                    record_kb,
                    status: CellStatus::Skipped,
                    throughput_kb_s: 0.0,
                    elapsed_s: 0.0,
                });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (file_kb << 32) ^ record_kb);
            let mut times = Vec::with_capacity(grid.repetitions);
            for rep in 0..grid.repetitions {
                let buffers: Vec<Vec<u8>> = (0..grid.threads)
                    .map(|_| {
                        let mut b = vec![0u8; (file_kb * 1024) as usize];
                        rng.fill_bytes(&mut b);
                        b
                    })
                    .collect();
                let path = |t: usize| format!("bench/s{seed}/f{file_kb}_r{record_kb}/rep{rep}_t{t}");
                let record = (record_kb * 1024) as usize;
                let result = if grid.threads == 1 {
                    write_file(volume, &path(0), &buffers[0], record, clock)
                } else {
                    let start = clock.now_ns();
                    let results: Vec<Result<u64, StoreError>> = std::thread::scope(|s| {
                        let handles: Vec<_> = buffers
                            .iter()
                            .enumerate()
                            .map(|(t, b)| {
                                let p = path(t);
                                s.spawn(move || write_file(volume, &p, b, record, clock))
                            })
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("bench writer panicked")).collect()
                    });
                    results
                        .into_iter()
                        .collect::<Result<Vec<_>, _>>()
                        .map(|_| clock.now_ns().saturating_sub(start))
                };
                match result {
                    Ok(ns) => times.push(ns.max(1)),
                    Err(e) => {
                        return BenchReport {
                            cells,
                            aborted: Some(format!("cell {file_kb}x{record_kb} KiB: {e}")),
                        }
                    }
                }
            }
            let median_s = median(&mut times) / 1e9;
            let volume_kb = (file_kb * grid.threads as u64) as f64;
            cells.push(BenchCell {
                file_kb,
                record_kb,
                status: CellStatus::Measured,
                throughput_kb_s: volume_kb / median_s,
                elapsed_s: median_s * grid.repetitions as f64,
            });
        }
    }
    BenchReport { cells, aborted: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{MonotonicClock, TickClock};
    use crate::store::{Fop, VolumeConfig};
    use std::sync::Arc;

    fn volume(dir: &std::path::Path) -> Volume {
        Volume::open_dir(dir, &VolumeConfig { bricks: 2, replicas: 1, vnodes: 64 }, Arc::new(TickClock::new(1))).unwrap()
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_pow2_range("4..2048").unwrap().len(), 10);
        assert_eq!(parse_pow2_range("64..2048").unwrap(), [64, 128, 256, 512, 1024, 2048]);
        assert_eq!(parse_pow2_range("64").unwrap(), [64]);
        assert!(parse_pow2_range("3..8").is_err());
        assert!(parse_pow2_range("8..4").is_err());
        assert!(parse_pow2_range("x").is_err());
        assert_eq!(BenchGrid::full().valid_cells(), 21);
    }

    #[test]
    fn single_cell_one_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(dir.path());
        let grid = BenchGrid::new(vec![64], vec![64], 1, 1).unwrap();
        let r = run_bench(&vol, &grid, 1, &TickClock::new(1_000_000));
        assert_eq!(r.cells.len(), 1);
        assert_eq!(vol.profile().calls(Fop::Write), 1);
        assert_eq!(r.to_csv(), "file_kb,record_kb,throughput_kb_s\n64,64,64000.000\n");
    }

    #[test]
    fn oversized_records_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(dir.path());
        let grid = BenchGrid::new(vec![4], vec![2048], 1, 1).unwrap();
        let r = run_bench(&vol, &grid, 1, &TickClock::new(1));
        assert_eq!(r.cells[0].status, CellStatus::Skipped);
        assert_eq!(r.to_csv(), "file_kb,record_kb,throughput_kb_s\n");
    }

    #[test]
    fn fake_clock_gives_exact_throughput() {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(dir.path());
        let grid = BenchGrid::new(vec![256, 512], vec![64, 128], 3, 1).unwrap();
        let r = run_bench(&vol, &grid, 7, &TickClock::new(1_000_000));
        for c in r.measured() {
            let chunks = c.file_kb / c.record_kb;
            let expected = c.file_kb as f64 / (chunks as f64 * 1e-3);
            assert_eq!(c.throughput_kb_s, expected, "{c:?}");
            let invariant = c.file_kb as f64 * grid.repetitions as f64 / c.elapsed_s;
            assert!((invariant / c.throughput_kb_s - 1.0).abs() < 1e-6);
        }
        // every chunk is one WRITE FOP
        let writes: u64 = [(256, 64), (256, 128), (512, 64), (512, 128)].iter().map(|(f, r)| 3 * f / r).sum();
        assert_eq!(vol.profile().calls(Fop::Write), writes);
    }

    #[test]
    fn row_major_and_complete_on_the_real_clock() {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(dir.path());
        let grid = BenchGrid::new(pow2_range(4, 256).unwrap(), pow2_range(64, 256).unwrap(), 2, 2).unwrap();
        let r = run_bench(&vol, &grid, 3, &MonotonicClock::new());
        assert!(r.aborted.is_none());
        let rows: Vec<(u64, u64)> = r.measured().map(|c| (c.file_kb, c.record_kb)).collect();
        assert_eq!(rows, [(64, 64), (128, 64), (128, 128), (256, 64), (256, 128), (256, 256)]);
        assert!(r.measured().all(|c| c.throughput_kb_s > 0.0));
    }

    #[test]
    fn unavailable_store_aborts_with_partial_results() {
        let dir = tempfile::tempdir().unwrap();
        let vol = volume(dir.path());
        for b in ["brick0", "brick1"] {
            vol.set_brick_up(b, false).unwrap();
        }
        let grid = BenchGrid::new(vec![4, 64], vec![64], 1, 1).unwrap();
        let r = run_bench(&vol, &grid, 1, &TickClock::new(1));
        assert_eq!(r.cells.len(), 1);
        assert!(r.aborted.unwrap().contains("64x64"));
    }
}
