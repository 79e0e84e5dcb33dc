use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use super::profile::FopAccum;
use super::Fop;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub digest: String,
    pub size: u64,
}

/// One storage directory: digest-named blobs plus append-only index logs.
///
/// `index.tsv` and `xattr.tsv` are replayed on open; the last line for a
/// path (or path and key) wins.
#[derive(Debug)]
pub struct Brick {
    id: String,
    root: PathBuf,
    index: RwLock<HashMap<String, IndexEntry>>,
    xattrs: RwLock<HashMap<String, BTreeMap<String, String>>>,
    index_log: Mutex<File>,
    xattr_log: Mutex<File>,
    pub(super) stats: Mutex<BTreeMap<Fop, FopAccum>>,
    up: AtomicBool,
    tmp_seq: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn bad_line(file: &Path, line: usize) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("{}:{line}: malformed record", file.display()),
    )
}

fn replay(file: &Path, mut apply: impl FnMut(&[&str]) -> bool) -> io::Result<()> {
    let f = match File::open(file) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !apply(&fields) {
            return Err(bad_line(file, i + 1));
        }
    }
    Ok(())
}

fn append_log(root: &Path, name: &str) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(root.join(name))
}

impl Brick {
    pub fn open(id: impl Into<String>, root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("tmp"))?;

        let mut index = HashMap::new();
        replay(&root.join("index.tsv"), |f| match f {
            [path, digest, size] => size
                .parse()
                .map(|size| {
                    index.insert(path.to_string(), IndexEntry { digest: digest.to_string(), size });
                })
                .is_ok(),
            _ => false,
        })?;
        let mut xattrs: HashMap<String, BTreeMap<String, String>> = HashMap::new();
        replay(&root.join("xattr.tsv"), |f| match f {
            [path, key, value] => {
                xattrs.entry(path.to_string()).or_default().insert(key.to_string(), value.to_string());
                true
            }
            _ => false,
        })?;

        Ok(Self {
            id: id.into(),
            index_log: Mutex::new(append_log(&root, "index.tsv")?),
            xattr_log: Mutex::new(append_log(&root, "xattr.tsv")?),
            root,
            index: RwLock::new(index),
            xattrs: RwLock::new(xattrs),
            stats: Mutex::new(BTreeMap::new()),
            up: AtomicBool::new(true),
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    pub(super) fn set_up(&self, up: bool) {
        self.up.store(up, Ordering::SeqCst);
    }

    pub fn blob_path(&self, digest: &str) -> PathBuf {
        self.root.join("blobs").join(digest)
    }

    pub(super) fn stage(&self) -> io::Result<(PathBuf, File)> {
        let n = self.tmp_seq.fetch_add(1, Ordering::SeqCst);
        let path = self.root.join("tmp").join(format!("{}-{n}.part", std::process::id()));
        let file = File::create(&path)?;
        Ok((path, file))
    }

    /// Moves a staged file into place and records it in the index.
    pub(super) fn publish(&self, staged: &Path, path: &str, entry: IndexEntry) -> io::Result<()> {
        fs::rename(staged, self.blob_path(&entry.digest))?;
        let line = format!("{path}\t{}\t{}\n", entry.digest, entry.size);
        {
            let mut log = lock(&self.index_log);
            log.write_all(line.as_bytes())?;
        }
        self.index.write().unwrap_or_else(|e| e.into_inner()).insert(path.to_string(), entry);
        Ok(())
    }

    pub fn entry(&self, path: &str) -> Option<IndexEntry> {
        self.index.read().unwrap_or_else(|e| e.into_inner()).get(path).cloned()
    }

    pub fn entries(&self) -> Vec<(String, IndexEntry)> {
        let idx = self.index.read().unwrap_or_else(|e| e.into_inner());
        idx.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn read_blob(&self, digest: &str) -> io::Result<Vec<u8>> {
        fs::read(self.blob_path(digest))
    }

    pub fn sync_blob(&self, digest: &str) -> io::Result<()> {
        File::open(self.blob_path(digest))?.sync_all()
    }

    pub(super) fn set_xattr(&self, path: &str, key: &str, value: &str) -> io::Result<()> {
        let line = format!("{path}\t{key}\t{value}\n");
        {
            let mut log = lock(&self.xattr_log);
            log.write_all(line.as_bytes())?;
        }
        self.xattrs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(path.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn xattrs(&self, path: &str) -> BTreeMap<String, String> {
        let x = self.xattrs.read().unwrap_or_else(|e| e.into_inner());
        x.get(path).cloned().unwrap_or_default()
    }

    pub(super) fn record(&self, op: Fop, ns: u64) {
        lock(&self.stats).entry(op).or_default().add(ns);
    }

    pub(super) fn stats_snapshot(&self) -> BTreeMap<Fop, FopAccum> {
        lock(&self.stats).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_xattrs_survive_reopen_last_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        {
            let b = Brick::open("b0", dir.path()).unwrap();
            for (content, digest) in [(b"one".as_slice(), "d1"), (b"two".as_slice(), "d2")] {
                let (tmp, mut f) = b.stage().unwrap();
                f.write_all(content).unwrap();
                drop(f);
                b.publish(&tmp, "a/x", IndexEntry { digest: digest.into(), size: 3 }).unwrap();
            }
            b.set_xattr("a/x", "route", "R.VT").unwrap();
            b.set_xattr("a/x", "route", "R.TL").unwrap();
        }
        let b = Brick::open("b0", dir.path()).unwrap();
        assert_eq!(b.entry("a/x").unwrap().digest, "d2");
        assert_eq!(b.read_blob("d2").unwrap(), b"two");
        assert_eq!(b.xattrs("a/x")["route"], "R.TL");
        let index = fs::read_to_string(dir.path().join("index.tsv")).unwrap();
        assert_eq!(index, "a/x\td1\t3\na/x\td2\t3\n");
    }

    #[test]
    fn corrupt_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("index.tsv"), "a\tb\n").unwrap();
        let err = Brick::open("b0", dir.path()).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }
}
