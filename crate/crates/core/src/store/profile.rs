use std::fmt::Write as _;

use super::Fop;

/// Running sums for one FOP on one brick, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FopAccum {
    pub calls: u64,
    pub total_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl FopAccum {
    pub fn add(&mut self, ns: u64) {
        if self.calls == 0 {
            self.min_ns = ns;
            self.max_ns = ns;
        } else {
            self.min_ns = self.min_ns.min(ns);
            self.max_ns = self.max_ns.max(ns);
        }
        self.calls += 1;
        self.total_ns += ns;
    }

    pub fn merge(&mut self, other: &FopAccum) {
        if other.calls == 0 {
            return;
        }
        if self.calls == 0 {
            *self = *other;
            return;
        }
        self.min_ns = self.min_ns.min(other.min_ns);
        self.max_ns = self.max_ns.max(other.max_ns);
        self.calls += other.calls;
        self.total_ns += other.total_ns;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FopStats {
    pub op: Fop,
    pub calls: u64,
    pub min_us: f64,
    pub max_us: f64,
    pub avg_us: f64,
    /// Share of the whole volume's accumulated latency, in percent.
    pub latency_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrickProfile {
    pub brick: String,
    /// Ascending by latency share.
    pub rows: Vec<FopStats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profile {
    pub bricks: Vec<BrickProfile>,
}

pub const PROFILE_CSV_HEADER: &str = "brick,pct_latency,avg_us,min_us,max_us,calls,op";

impl Profile {
    pub(super) fn build(per_brick: Vec<(String, Vec<(Fop, FopAccum)>)>) -> Self {
        let all = || per_brick.iter().flat_map(|(_, ops)| ops.iter().map(|(_, a)| a));
        let grand: u64 = all().map(|a| a.total_ns).sum();
        let grand_calls: u64 = all().map(|a| a.calls).sum();
        let bricks = per_brick
            .into_iter()
            .filter_map(|(brick, ops)| {
                let mut rows: Vec<FopStats> = ops
                    .into_iter()
                    .filter(|(_, a)| a.calls > 0)
                    .map(|(op, a)| FopStats {
                        op,
                        calls: a.calls,
                        min_us: a.min_ns as f64 / 1e3,
                        max_us: a.max_ns as f64 / 1e3,
                        avg_us: a.total_ns as f64 / a.calls as f64 / 1e3,
                        latency_share: if grand == 0 {
                            // every call took zero time; split by calls
                            a.calls as f64 / grand_calls as f64 * 100.0
                        } else {
                            a.total_ns as f64 / grand as f64 * 100.0
                        },
                    })
                    .collect();
                rows.sort_by(|a, b| a.latency_share.total_cmp(&b.latency_share).then(a.op.cmp(&b.op)));
                (!rows.is_empty()).then_some(BrickProfile { brick, rows })
            })
            .collect();
        Self { bricks }
    }

    pub fn is_empty(&self) -> bool {
        self.bricks.is_empty()
    }

    pub fn row(&self, brick: &str, op: Fop) -> Option<&FopStats> {
        self.bricks
            .iter()
            .find(|b| b.brick == brick)
            .and_then(|b| b.rows.iter().find(|r| r.op == op))
    }

    /// Calls of `op` summed over bricks.
    pub fn calls(&self, op: Fop) -> u64 {
        self.bricks
            .iter()
            .flat_map(|b| b.rows.iter())
            .filter(|r| r.op == op)
            .map(|r| r.calls)
            .sum()
    }

    pub fn total_share(&self) -> f64 {
        self.bricks.iter().flat_map(|b| b.rows.iter()).map(|r| r.latency_share).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for b in &self.bricks {
            let _ = writeln!(out, "Brick: {}", b.brick);
            let _ = writeln!(
                out,
                "{:>9}  {:>12}  {:>12}  {:>12}  {:>10}  Operation",
                "%-latency", "AVG (us)", "MIN (us)", "MAX (us)", "# of calls"
            );
            for r in &b.rows {
                let _ = writeln!(
                    out,
                    "{:>9.2}  {:>12.2}  {:>12.2}  {:>12.2}  {:>10}  {}",
                    r.latency_share, r.avg_us, r.min_us, r.max_us, r.calls, r.op
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{PROFILE_CSV_HEADER}\n");
        for b in &self.bricks {
            for r in &b.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    b.brick, r.latency_share, r.avg_us, r.min_us, r.max_us, r.calls, r.op
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accumulator_tracks_extremes() {
        let mut a = FopAccum::default();
        for ns in [5_000, 1_000, 9_000] {
            a.add(ns);
        }
        assert_eq!(a, FopAccum { calls: 3, total_ns: 15_000, min_ns: 1_000, max_ns: 9_000 });
        let mut b = FopAccum::default();
        b.merge(&a);
        b.merge(&FopAccum::default());
        assert_eq!(a, b);
    }

    #[test]
    fn rows_sorted_ascending_and_shares_volume_wide() {
        let mut w = FopAccum::default();
        w.add(3_000);
        let mut f = FopAccum::default();
        f.add(1_000);
        let mut l = FopAccum::default();
        l.add(6_000);
        let p = Profile::build(vec![
            ("b0".into(), vec![(Fop::Write, w), (Fop::Fsync, f)]),
            ("b1".into(), vec![(Fop::Lookup, l)]),
            ("b2".into(), vec![]),
        ]);
        assert_eq!(p.bricks.len(), 2);
        let ops: Vec<Fop> = p.bricks[0].rows.iter().map(|r| r.op).collect();
        assert_eq!(ops, [Fop::Fsync, Fop::Write]);
        assert!((p.row("b1", Fop::Lookup).unwrap().latency_share - 60.0).abs() < 1e-12);
        assert!((p.total_share() - 100.0).abs() < 1e-9);
        let csv = p.to_csv();
        assert!(csv.starts_with("brick,pct_latency,avg_us,min_us,max_us,calls,op\nb0,10,1,1,1,1,FSYNC\n"));
        assert!(p.to_table().contains("    30.00          3.00          3.00          3.00           1  WRITE"));
    }

    proptest! {
        #[test]
        fn stats_invariants(samples in proptest::collection::vec((0usize..6, 1u64..10_000_000), 1..200)) {
            let mut acc = vec![FopAccum::default(); 6];
            for &(op, ns) in &samples {
                acc[op].add(ns);
            }
            let ops = Fop::ALL.iter().copied().zip(acc).collect();
            let p = Profile::build(vec![("b".into(), ops)]);
            for r in &p.bricks[0].rows {
                prop_assert!(r.min_us <= r.avg_us + 1e-9 && r.avg_us <= r.max_us + 1e-9);
            }
            prop_assert!((p.total_share() - 100.0).abs() <= 1e-6);
        }
    }
}
