//! Time sources for latency accounting. Readings are nanoseconds from an
//! arbitrary origin; only differences are meaningful.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
}

#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start_ns: u64) -> Self {
        Self { now: AtomicU64::new(start_ns) }
    }

    pub fn advance(&self, ns: u64) {
        self.now.fetch_add(ns, Ordering::SeqCst);
    }

    pub fn set(&self, ns: u64) {
        self.now.store(ns, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

/// Advances by a fixed tick after every reading, so each start/stop pair measures one tick.
#[derive(Debug)]
pub struct TickClock {
    now: AtomicU64,
    tick_ns: u64,
}

impl TickClock {
    pub fn new(tick_ns: u64) -> Self {
        Self {
            now: AtomicU64::new(0),
            tick_ns,
        }
    }
}

impl Clock for TickClock {
    fn now_ns(&self) -> u64 {
        self.now.fetch_add(self.tick_ns, Ordering::SeqCst)
    }
}

/// Replays a fixed list of increments, one per reading, cycling at the end.
///
/// Reading `k` returns the sum of the first `k` increments, so a measurement
/// that reads twice observes exactly one scripted increment.
#[derive(Debug)]
pub struct ScriptedClock {
    steps: Vec<u64>,
    state: Mutex<(u64, usize)>,
}

impl ScriptedClock {
    pub fn new(steps: Vec<u64>) -> Self {
        assert!(!steps.is_empty(), "scripted clock needs at least one step");
        Self {
            steps,
            state: Mutex::new((0, 0)),
        }
    }

    pub fn reads(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).1
    }
}

impl Clock for ScriptedClock {
    fn now_ns(&self) -> u64 {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let now = st.0;
        st.0 += self.steps[st.1 % self.steps.len()];
        st.1 += 1;
        now
    }
}
