use xxhash_rust::xxh3::xxh3_64;

pub const DEFAULT_VNODES: usize = 256;
pub const MIN_VNODES: usize = 64;

pub fn ring_hash(key: &str) -> u64 {
    xxh3_64(key.as_bytes())
}

/// Consistent-hash ring of virtual nodes. Entries are `(point, brick index)`.
#[derive(Debug, Clone)]
pub struct HashRing {
    points: Vec<(u64, usize)>,
    n_bricks: usize,
}

impl HashRing {
    pub fn new<S: AsRef<str>>(brick_ids: &[S], vnodes: usize) -> Self {
        let mut points: Vec<(u64, usize)> = brick_ids
            .iter()
            .enumerate()
            .flat_map(|(b, id)| (0..vnodes).map(move |v| (ring_hash(&format!("{}#{v}", id.as_ref())), b)))
            .collect();
        points.sort_unstable();
        Self {
            points,
            n_bricks: brick_ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `count` distinct bricks, starting at the owner of `key` and walking clockwise.
    pub fn walk(&self, key: &str, count: usize) -> Vec<usize> {
        let count = count.min(self.n_bricks);
        let mut out = Vec::with_capacity(count);
        if self.points.is_empty() {
            return out;
        }
        let h = ring_hash(key);
        let start = self.points.partition_point(|&(p, _)| p < h);
        for k in 0..self.points.len() {
            if out.len() == count {
                break;
            }
            let b = self.points[(start + k) % self.points.len()].1;
            if !out.contains(&b) {
                out.push(b);
            }
        }
        out
    }

    pub fn owner(&self, key: &str) -> Option<usize> {
        self.walk(key, 1).first().copied()
    }
}
