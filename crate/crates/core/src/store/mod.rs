//! Content-addressed off-chain file store spread over bricks.
//!
//! Paths are placed on bricks by a consistent-hash ring; the first replica
//! is the owning brick and further replicas are the next distinct bricks
//! clockwise. Every file operation on every brick is timed with an
//! injectable [`Clock`] and accumulated into per-brick, per-FOP stats.

mod brick;
mod profile;
mod ring;

pub use brick::{Brick, IndexEntry};
pub use profile::{BrickProfile, FopAccum, FopStats, Profile, PROFILE_CSV_HEADER};
pub use ring::{ring_hash, HashRing, DEFAULT_VNODES, MIN_VNODES};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("volume has no bricks")]
    EmptyVolume,
    #[error("invalid volume config: {0}")]
    InvalidConfig(String),
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("unknown brick {0}")]
    UnknownBrick(String),
    #[error("{0}: not found")]
    NotFound(String),
    #[error("{path}: digest mismatch on brick {brick}")]
    Integrity { path: String, brick: String },
    #[error("{0}: all replicas are down")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fop {
    Write,
    Read,
    Readdirp,
    Lookup,
    Fxattrop,
    Fsync,
}

impl Fop {
    pub const ALL: [Fop; 6] = [Fop::Write, Fop::Read, Fop::Readdirp, Fop::Lookup, Fop::Fxattrop, Fop::Fsync];

    pub fn as_str(self) -> &'static str {
        match self {
            Fop::Write => "WRITE",
            Fop::Read => "READ",
            Fop::Readdirp => "READDIRP",
            Fop::Lookup => "LOOKUP",
            Fop::Fxattrop => "FXATTROP",
            Fop::Fsync => "FSYNC",
        }
    }
}

impl fmt::Display for Fop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fop {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Fop::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown FOP {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentRef {
    pub path: String,
    /// Lowercase hex SHA-256 of the content.
    pub digest: String,
    pub size_bytes: u64,
    pub brick_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntry {
    pub name: String,
    pub is_dir: bool,
    /// File metadata; `None` for directories.
    pub meta: Option<IndexEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeConfig {
    pub bricks: usize,
    pub replicas: usize,
    pub vnodes: usize,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            bricks: 3,
            replicas: 1,
            vnodes: DEFAULT_VNODES,
        }
    }
}

fn check_name(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(StoreError::InvalidName(s.to_string()));
    }
    Ok(())
}

/// Strips a leading `/` and rejects empty, `.` and `..` components.
pub fn normalize_path(path: &str) -> Result<String> {
    let p = path.trim_start_matches('/');
    check_name(p)?;
    if p.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
        return Err(StoreError::InvalidName(path.to_string()));
    }
    Ok(p.to_string())
}

pub struct Volume {
    bricks: Vec<Brick>,
    replica_count: usize,
    ring: HashRing,
    clock: Arc<dyn Clock>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    stats_file: Option<PathBuf>,
}

impl fmt::Debug for Volume {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Volume")
            .field("bricks", &self.brick_ids())
            .field("replica_count", &self.replica_count)
            .finish()
    }
}

impl Volume {
    pub fn new(bricks: Vec<Brick>, replica_count: usize, vnodes: usize, clock: Arc<dyn Clock>) -> Result<Self> {
        if bricks.is_empty() {
            return Err(StoreError::EmptyVolume);
        }
        if replica_count == 0 || replica_count > bricks.len() {
            return Err(StoreError::InvalidConfig(format!(
                "replica count {replica_count} must be within 1..={}",
                bricks.len()
            )));
        }
        if vnodes < MIN_VNODES {
            return Err(StoreError::InvalidConfig(format!(
                "need at least {MIN_VNODES} virtual nodes per brick, got {vnodes}"
            )));
        }
        let ids: Vec<&str> = bricks.iter().map(|b| b.id()).collect();
        for (i, id) in ids.iter().enumerate() {
            check_name(id)?;
            if ids[..i].contains(id) {
                return Err(StoreError::InvalidConfig(format!("duplicate brick id {id}")));
            }
        }
        let ring = HashRing::new(&ids, vnodes);
        Ok(Self {
            bricks,
            replica_count,
            ring,
            clock,
            locks: Mutex::new(HashMap::new()),
            stats_file: None,
        })
    }

    /// Opens (or creates) bricks `brick0..brickN` under `dir` and restores
    /// accumulated stats from `dir/profile.tsv`.
    pub fn open_dir(dir: impl AsRef<Path>, cfg: &VolumeConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let dir = dir.as_ref();
        let bricks = (0..cfg.bricks)
            .map(|i| {
                let id = format!("brick{i}");
                let root = dir.join(&id);
                Brick::open(id, root)
            })
            .collect::<io::Result<Vec<_>>>()?;
        let mut vol = Self::new(bricks, cfg.replicas, cfg.vnodes, clock)?;
        let stats = dir.join("profile.tsv");
        if stats.exists() {
            vol.load_stats(&stats)?;
        }
        vol.stats_file = Some(stats);
        Ok(vol)
    }

    pub fn open_dir_default(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_dir(dir, &VolumeConfig::default(), Arc::new(MonotonicClock::new()))
    }

    pub fn bricks(&self) -> &[Brick] {
        &self.bricks
    }

    pub fn brick(&self, id: &str) -> Option<&Brick> {
        self.bricks.iter().find(|b| b.id() == id)
    }

    pub fn brick_ids(&self) -> Vec<&str> {
        self.bricks.iter().map(|b| b.id()).collect()
    }

    pub fn replica_count(&self) -> usize {
        self.replica_count
    }

    /// Replica brick ids in placement order.
    pub fn place(&self, path: &str) -> Result<Vec<String>> {
        let path = normalize_path(path)?;
        Ok(self
            .ring
            .walk(&path, self.replica_count)
            .into_iter()
            .map(|i| self.bricks[i].id().to_string())
            .collect())
    }

    pub fn set_brick_up(&self, id: &str, up: bool) -> Result<()> {
        self.brick(id)
            .ok_or_else(|| StoreError::UnknownBrick(id.to_string()))?
            .set_up(up);
        Ok(())
    }

    fn timed<R>(&self, brick: &Brick, op: Fop, f: impl FnOnce() -> R) -> R {
        let start = self.clock.now_ns();
        let r = f();
        let end = self.clock.now_ns();
        brick.record(op, end.saturating_sub(start));
        r
    }

    fn path_lock(&self, path: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(path.to_string()).or_default().clone()
    }

    fn replicas(&self, path: &str) -> Vec<&Brick> {
        self.ring
            .walk(path, self.replica_count)
            .into_iter()
            .map(|i| &self.bricks[i])
            .collect()
    }

    /// Live replicas that hold `path`, in placement order.
    fn holders(&self, path: &str) -> Result<Vec<(&Brick, IndexEntry)>> {
        let replicas = self.replicas(path);
        if replicas.iter().all(|b| !b.is_up()) {
            return Err(StoreError::Unavailable(path.to_string()));
        }
        let found: Vec<_> = replicas
            .into_iter()
            .filter(|b| b.is_up())
            .filter_map(|b| b.entry(path).map(|e| (b, e)))
            .collect();
        if found.is_empty() {
            return Err(StoreError::NotFound(path.to_string()));
        }
        Ok(found)
    }

    /// Starts a chunked write. Nothing is visible until [`FileWriter::commit`].
    pub fn create(&self, path: &str) -> Result<FileWriter<'_>> {
        let path = normalize_path(path)?;
        let live: Vec<&Brick> = self.replicas(&path).into_iter().filter(|b| b.is_up()).collect();
        if live.is_empty() {
            return Err(StoreError::Unavailable(path));
        }
        let mut staged = Vec::with_capacity(live.len());
        for b in live {
            let (tmp, file) = b.stage()?;
            staged.push(Staged { brick: b, tmp, file });
        }
        Ok(FileWriter {
            vol: self,
            path,
            staged,
            hasher: Sha256::new(),
            size: 0,
        })
    }

    pub fn write(&self, path: &str, bytes: &[u8]) -> Result<ContentRef> {
        let mut w = self.create(path)?;
        w.write_chunk(bytes)?;
        w.commit()
    }

    /// Reads from the first live replica holding the file and checks its digest.
    pub fn read(&self, path: &str) -> Result<Vec<u8>> {
        let path = normalize_path(path)?;
        let (brick, entry) = self.holders(&path)?.swap_remove(0);
        let bytes = self.timed(brick, Fop::Read, || brick.read_blob(&entry.digest))?;
        if sha256_hex(&bytes) != entry.digest {
            return Err(StoreError::Integrity {
                path,
                brick: brick.id().to_string(),
            });
        }
        Ok(bytes)
    }

    pub fn lookup(&self, path: &str) -> Result<ContentRef> {
        let path = normalize_path(path)?;
        let holders = self.holders(&path)?;
        let (first, _) = holders[0];
        let entry = self.timed(first, Fop::Lookup, || first.entry(&path));
        let entry = entry.ok_or_else(|| StoreError::NotFound(path.clone()))?;
        Ok(ContentRef {
            brick_ids: holders.iter().map(|(b, _)| b.id().to_string()).collect(),
            path,
            digest: entry.digest,
            size_bytes: entry.size,
        })
    }

    pub fn fsync(&self, path: &str) -> Result<()> {
        let path = normalize_path(path)?;
        for (b, e) in self.holders(&path)? {
            self.timed(b, Fop::Fsync, || b.sync_blob(&e.digest))?;
        }
        Ok(())
    }

    /// Immediate children of `dir` with their metadata, merged across live bricks.
    pub fn readdirp(&self, dir: &str) -> Result<Vec<DirEntry>> {
        let dir = dir.trim_matches('/');
        let prefix = if dir.is_empty() { String::new() } else { format!("{}/", normalize_path(dir)?) };
        let mut merged: BTreeMap<String, DirEntry> = BTreeMap::new();
        let mut any_up = false;
        for b in self.bricks.iter().filter(|b| b.is_up()) {
            any_up = true;
            let entries = self.timed(b, Fop::Readdirp, || b.entries());
            for (path, meta) in entries {
                let Some(rest) = path.strip_prefix(&prefix) else { continue };
                match rest.split_once('/') {
                    Some((child, _)) => {
                        merged.entry(child.to_string()).or_insert_with(|| DirEntry {
                            name: child.to_string(),
                            is_dir: true,
                            meta: None,
                        });
                    }
                    None => {
                        merged.insert(
                            rest.to_string(),
                            DirEntry {
                                name: rest.to_string(),
                                is_dir: false,
                                meta: Some(meta),
                            },
                        );
                    }
                }
            }
        }
        if !any_up {
            return Err(StoreError::Unavailable(dir.to_string()));
        }
        Ok(merged.into_values().collect())
    }

    pub fn fxattrop(&self, path: &str, key: &str, value: &str) -> Result<()> {
        let path = normalize_path(path)?;
        check_name(key)?;
        if value.contains(['\t', '\n', '\r']) {
            return Err(StoreError::InvalidName(value.to_string()));
        }
        let lock = self.path_lock(&path);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        for (b, _) in self.holders(&path)? {
            self.timed(b, Fop::Fxattrop, || b.set_xattr(&path, key, value))?;
        }
        Ok(())
    }

    pub fn xattrs(&self, path: &str) -> Result<BTreeMap<String, String>> {
        let path = normalize_path(path)?;
        let (b, _) = self.holders(&path)?.swap_remove(0);
        Ok(b.xattrs(&path))
    }

    /// Blob files of `path` on every replica that holds it.
    pub fn blob_paths(&self, path: &str) -> Result<Vec<PathBuf>> {
        let path = normalize_path(path)?;
        Ok(self
            .replicas(&path)
            .into_iter()
            .filter_map(|b| b.entry(&path).map(|e| b.blob_path(&e.digest)))
            .collect())
    }

    pub fn profile(&self) -> Profile {
        Profile::build(
            self.bricks
                .iter()
                .map(|b| (b.id().to_string(), b.stats_snapshot().into_iter().collect()))
                .collect(),
        )
    }

    pub fn reset_stats(&self) {
        for b in &self.bricks {
            b.stats.lock().unwrap_or_else(|e| e.into_inner()).clear();
        }
    }

    /// Writes raw accumulators as `brick<TAB>op<TAB>calls<TAB>total_ns<TAB>min_ns<TAB>max_ns`.
    pub fn save_stats(&self, file: &Path) -> Result<()> {
        let mut out = String::new();
        for b in &self.bricks {
            for (op, a) in b.stats_snapshot() {
                out.push_str(&format!(
                    "{}\t{op}\t{}\t{}\t{}\t{}\n",
                    b.id(),
                    a.calls,
                    a.total_ns,
                    a.min_ns,
                    a.max_ns
                ));
            }
        }
        let tmp = file.with_extension("tsv.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, file)?;
        Ok(())
    }

    /// Adds accumulators saved by [`Volume::save_stats`].
    pub fn load_stats(&self, file: &Path) -> Result<()> {
        let text = fs::read_to_string(file)?;
        for (i, line) in text.lines().enumerate() {
            let bad = || {
                StoreError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: malformed stats record", file.display(), i + 1),
                ))
            };
            let f: Vec<&str> = line.split('\t').collect();
            let [brick, op, calls, total, min, max] = f.as_slice() else {
                return Err(bad());
            };
            let op: Fop = op.parse().map_err(|_| bad())?;
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
            let acc = FopAccum {
                calls: num(calls)?,
                total_ns: num(total)?,
                min_ns: num(min)?,
                max_ns: num(max)?,
            };
            let b = self.brick(brick).ok_or_else(|| StoreError::UnknownBrick(brick.to_string()))?;
            b.stats.lock().unwrap_or_else(|e| e.into_inner()).entry(op).or_default().merge(&acc);
        }
        Ok(())
    }

    /// Saves stats to the file the volume was opened with, if any.
    pub fn persist_stats(&self) -> Result<()> {
        match &self.stats_file {
            Some(f) => self.save_stats(f),
            None => Ok(()),
        }
    }
}

struct Staged<'a> {
    brick: &'a Brick,
    tmp: PathBuf,
    file: File,
}

/// An in-progress write. Each chunk is one WRITE per replica brick.
pub struct FileWriter<'a> {
    vol: &'a Volume,
    path: String,
    staged: Vec<Staged<'a>>,
    hasher: Sha256,
    size: u64,
}

impl FileWriter<'_> {
    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn write_chunk(&mut self, chunk: &[u8]) -> Result<()> {
        for s in &mut self.staged {
            let brick = s.brick;
            let file = &mut s.file;
            self.vol.timed(brick, Fop::Write, || file.write_all(chunk))?;
        }
        self.hasher.update(chunk);
        self.size += chunk.len() as u64;
        Ok(())
    }

    pub fn fsync(&mut self) -> Result<()> {
        for s in &self.staged {
            let file = &s.file;
            self.vol.timed(s.brick, Fop::Fsync, || file.sync_data())?;
        }
        Ok(())
    }

    /// Publishes the content on every staged replica under the path lock.
    pub fn commit(mut self) -> Result<ContentRef> {
        let digest = hex::encode(std::mem::take(&mut self.hasher).finalize());
        let lock = self.vol.path_lock(&self.path);
        let _g = lock.lock().unwrap_or_else(|e| e.into_inner());
        let staged = std::mem::take(&mut self.staged);
        let mut brick_ids = Vec::with_capacity(staged.len());
        let mut result = Ok(());
        for s in &staged {
            if result.is_ok() {
                let entry = IndexEntry {
                    digest: digest.clone(),
                    size: self.size,
                };
                result = s.brick.publish(&s.tmp, &self.path, entry);
                brick_ids.push(s.brick.id().to_string());
            } else {
                let _ = fs::remove_file(&s.tmp);
            }
        }
        result?;
        Ok(ContentRef {
            path: std::mem::take(&mut self.path),
            digest,
            size_bytes: self.size,
            brick_ids,
        })
    }
}

impl Drop for FileWriter<'_> {
    fn drop(&mut self) {
        for s in &self.staged {
            let _ = fs::remove_file(&s.tmp);
        }
    }
}
