use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::encode::{from_hex, sha256, to_hex, Encoder, Hash32, ZERO_HASH};
use super::LedgerError;
use crate::store::ContentRef;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorTx {
    tx_id: Hash32,
    pub content: ContentRef,
    pub index_meta: BTreeMap<String, String>,
    pub submitter: u64,
    pub timestamp: u64,
}

impl AnchorTx {
    pub fn new(content: ContentRef, index_meta: BTreeMap<String, String>, submitter: u64, timestamp: u64) -> Self {
        let mut tx = Self {
            tx_id: ZERO_HASH,
            content,
            index_meta,
            submitter,
            timestamp,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    pub fn tx_id(&self) -> Hash32 {
        self.tx_id
    }

    pub fn tx_id_hex(&self) -> String {
        to_hex(&self.tx_id)
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.content;
        let mut e = Encoder::new();
        e.str(&c.path).str(&c.digest).u64(c.size_bytes).strs(&c.brick_ids);
        e.len(self.index_meta.len());
        for (k, v) in &self.index_meta {
            e.str(k).str(v);
        }
        e.u64(self.submitter).u64(self.timestamp);
        e.finish()
    }

    pub fn compute_id(&self) -> Hash32 {
        sha256(&self.encode())
    }

    /// Same fields with one more metadata tag; the id is recomputed.
    pub fn annotated(&self, key: &str, value: &str) -> Self {
        let mut meta = self.index_meta.clone();
        meta.insert(key.to_string(), value.to_string());
        Self::new(self.content.clone(), meta, self.submitter, self.timestamp)
    }
}

/// Pairwise SHA-256 over the leaves, duplicating the last node of odd levels.
pub fn merkle_root(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return ZERO_HASH;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(&pair[0]);
                buf[32..].copy_from_slice(right);
                sha256(&buf)
            })
            .collect();
    }
    level[0]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub txs: Vec<AnchorTx>,
    pub block_hash: Hash32,
}

impl Block {
    pub fn new(height: u64, prev_hash: Hash32, txs: Vec<AnchorTx>) -> Self {
        let block_hash = Self::hash_parts(height, &prev_hash, &txs);
        Self {
            height,
            prev_hash,
            txs,
            block_hash,
        }
    }

    pub fn hash_parts(height: u64, prev_hash: &Hash32, txs: &[AnchorTx]) -> Hash32 {
        let ids: Vec<Hash32> = txs.iter().map(|t| t.tx_id).collect();
        let mut e = Encoder::new();
        e.u64(height).hash(prev_hash).hash(&merkle_root(&ids));
        e.digest()
    }

    pub fn compute_hash(&self) -> Hash32 {
        Self::hash_parts(self.height, &self.prev_hash, &self.txs)
    }

    /// Checks stored tx ids and the block hash against recomputation.
    pub fn check(&self) -> Result<(), String> {
        for t in &self.txs {
            if t.tx_id != t.compute_id() {
                return Err(format!("tx {} does not match its fields", to_hex(&t.tx_id)));
            }
        }
        if self.block_hash != self.compute_hash() {
            return Err("block hash does not match contents".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Chain {
    blocks: Vec<Block>,
}

// field escaping for the comma/semicolon separated chain file
fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '%' | ',' | ';' | '=' | '\n' | '\r' | ' ' => {
                let mut b = [0u8; 4];
                for byte in ch.encode_utf8(&mut b).bytes() {
                    let _ = write!(out, "%{byte:02X}");
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn unesc(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let h = s.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(h, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn parse_u64(s: &str) -> Option<u64> {
    // reject forms that would not re-render identically
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.tip().map_or(ZERO_HASH, |b| b.block_hash)
    }

    pub fn next_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// A block that would extend this chain.
    pub fn propose(&self, txs: Vec<AnchorTx>) -> Block {
        Block::new(self.next_height(), self.tip_hash(), txs)
    }

    pub fn extends(&self, block: &Block) -> bool {
        block.height == self.next_height() && block.prev_hash == self.tip_hash()
    }

    pub fn push(&mut self, block: Block) -> Result<(), LedgerError> {
        if !self.extends(&block) {
            return Err(LedgerError::BadLink { height: block.height });
        }
        block
            .check()
            .map_err(|reason| LedgerError::ChainBroken { height: block.height, reason })?;
        self.blocks.push(block);
        Ok(())
    }

    pub fn find_tx(&self, tx_id: &Hash32) -> Option<(&Block, &AnchorTx)> {
        self.blocks
            .iter()
            .find_map(|b| b.txs.iter().find(|t| &t.tx_id == tx_id).map(|t| (b, t)))
    }

    pub fn contains_tx(&self, tx_id: &Hash32) -> bool {
        self.find_tx(tx_id).is_some()
    }

    /// Recomputes every tx id, block hash and link from the first block.
    pub fn verify(&self) -> Result<(), LedgerError> {
        self.verify_block(0, self.blocks.len())
    }

    /// Verifies blocks `from..to` including the links into and out of the range.
    pub(crate) fn verify_block(&self, from: usize, to: usize) -> Result<(), LedgerError> {
        let to = to.min(self.blocks.len());
        let last = (to + 1).min(self.blocks.len());
        for i in from..last {
            let b = &self.blocks[i];
            let broken = |reason: String| LedgerError::ChainBroken { height: i as u64, reason };
            if b.height != i as u64 {
                return Err(broken(format!("stored height {}", b.height)));
            }
            let prev = if i == 0 { ZERO_HASH } else { self.blocks[i - 1].block_hash };
            if b.prev_hash != prev {
                return Err(broken("previous-hash link does not match".into()));
            }
            if i < to {
                b.check().map_err(broken)?;
            }
        }
        Ok(())
    }

    /// One line per block, `height,prev_hash_hex,block_hash_hex,tx_count`,
    /// followed by indented `tx_id,path,digest,size` lines.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let _ = writeln!(out, "{},{},{},{}", b.height, to_hex(&b.prev_hash), to_hex(&b.block_hash), b.txs.len());
            for t in &b.txs {
                let c = &t.content;
                let _ = writeln!(out, "  {},{},{},{}", to_hex(&t.tx_id), esc(&c.path), esc(&c.digest), c.size_bytes);
            }
        }
        out
    }

    /// The export layout with every tx field appended so the chain can be
    /// reloaded: `,submitter,timestamp,brick;ids,key=value;pairs`.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            let _ = writeln!(out, "{},{},{},{}", b.height, to_hex(&b.prev_hash), to_hex(&b.block_hash), b.txs.len());
            for t in &b.txs {
                let c = &t.content;
                let bricks: Vec<String> = c.brick_ids.iter().map(|s| esc(s)).collect();
                let meta: Vec<String> = t.index_meta.iter().map(|(k, v)| format!("{}={}", esc(k), esc(v))).collect();
                let _ = writeln!(
                    out,
                    "  {},{},{},{},{},{},{},{}",
                    to_hex(&t.tx_id),
                    esc(&c.path),
                    esc(&c.digest),
                    c.size_bytes,
                    t.submitter,
                    t.timestamp,
                    bricks.join(";"),
                    meta.join(";")
                );
            }
        }
        out
    }

    /// Parses [`Chain::to_file_text`] output. The text must re-render byte
    /// for byte and every hash must verify, so any edit is rejected.
    pub fn from_file_text(text: &str) -> Result<Self, LedgerError> {
        let mut blocks: Vec<Block> = Vec::new();
        let mut lines = text.split_inclusive('\n').enumerate().peekable();
        while let Some((i, raw)) = lines.next() {
            let bad = |line: usize, what: &str| LedgerError::Parse {
                line: line + 1,
                reason: what.to_string(),
            };
            let line = raw.strip_suffix('\n').ok_or_else(|| bad(i, "missing newline"))?;
            let f: Vec<&str> = line.split(',').collect();
            let [h, prev, hash, count] = f.as_slice() else {
                return Err(bad(i, "expected a block header"));
            };
            let height = parse_u64(h).ok_or_else(|| bad(i, "bad height"))?;
            let prev_hash = from_hex(prev).ok_or_else(|| bad(i, "bad previous hash"))?;
            let block_hash = from_hex(hash).ok_or_else(|| bad(i, "bad block hash"))?;
            let count = parse_u64(count).ok_or_else(|| bad(i, "bad tx count"))?;
            let mut txs = Vec::new();
            for _ in 0..count {
                let (j, raw) = lines.next().ok_or_else(|| bad(i, "missing tx lines"))?;
                let line = raw
                    .strip_suffix('\n')
                    .and_then(|l| l.strip_prefix("  "))
                    .ok_or_else(|| bad(j, "expected an indented tx line"))?;
                let f: Vec<&str> = line.split(',').collect();
                let [id, path, digest, size, submitter, ts, bricks, meta] = f.as_slice() else {
                    return Err(bad(j, "expected 8 tx fields"));
                };
                let tx_id = from_hex(id).ok_or_else(|| bad(j, "bad tx id"))?;
                let num = |s: &str| parse_u64(s).ok_or_else(|| bad(j, "bad number"));
                let text = |s: &str| unesc(s).ok_or_else(|| bad(j, "bad escape"));
                let brick_ids = if bricks.is_empty() {
                    Vec::new()
                } else {
                    bricks.split(';').map(text).collect::<Result<_, _>>()?
                };
                let mut index_meta = BTreeMap::new();
                if !meta.is_empty() {
                    for kv in meta.split(';') {
                        let (k, v) = kv.split_once('=').ok_or_else(|| bad(j, "bad metadata pair"))?;
                        index_meta.insert(text(k)?, text(v)?);
                    }
                }
                txs.push(AnchorTx {
                    tx_id,
                    content: ContentRef {
                        path: text(path)?,
                        digest: text(digest)?,
                        size_bytes: num(size)?,
                        brick_ids,
                    },
                    index_meta,
                    submitter: num(submitter)?,
                    timestamp: num(ts)?,
                });
            }
            blocks.push(Block {
                height,
                prev_hash,
                txs,
                block_hash,
            });
        }
        let chain = Chain { blocks };
        if chain.to_file_text() != text {
            return Err(LedgerError::Parse {
                line: 0,
                reason: "chain file is not in canonical form".into(),
            });
        }
        chain.verify()?;
        Ok(chain)
    }

    #[cfg(test)]
    pub(crate) fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn tx(i: u64) -> AnchorTx {
        let mut meta = BTreeMap::new();
        meta.insert("route".to_string(), "R.VT".to_string());
        meta.insert("trip".to_string(), format!("T{i}_R.VT, odd=name"));
        AnchorTx::new(
            ContentRef {
                path: format!("reports/run {i}.csv"),
                digest: to_hex(&sha256(&i.to_be_bytes())),
                size_bytes: 100 + i,
                brick_ids: vec!["brick0".into(), "brick2".into()],
            },
            meta,
            i % 4,
            i,
        )
    }

    fn chain_of(n: u64) -> Chain {
        let mut c = Chain::new();
        for i in 0..n {
            let b = c.propose(vec![tx(i)]);
            c.push(b).unwrap();
        }
        c
    }

    #[test]
    fn merkle_oracle() {
        let l: Vec<Hash32> = (0u8..3).map(|i| sha256(&[i])).collect();
        let pair = |a: &Hash32, b: &Hash32| sha256(&[a.as_slice(), b.as_slice()].concat());
        assert_eq!(merkle_root(&[]), ZERO_HASH);
        assert_eq!(merkle_root(&l[..1]), l[0]);
        assert_eq!(merkle_root(&l[..2]), pair(&l[0], &l[1]));
        assert_eq!(merkle_root(&l), pair(&pair(&l[0], &l[1]), &pair(&l[2], &l[2])));
    }

    #[test]
    fn tx_id_recomputes_and_covers_every_field() {
        let t = tx(1);
        assert_eq!(t.tx_id(), t.compute_id());
        let mut u = t.clone();
        u.timestamp += 1;
        assert_ne!(u.compute_id(), t.tx_id());
        let a = t.annotated("scenario", "connected");
        assert_ne!(a.tx_id(), t.tx_id());
        assert_eq!(a.tx_id(), a.compute_id());
    }

    #[test]
    fn first_block_links_to_zero_and_heights_are_consecutive() {
        let c = chain_of(5);
        assert_eq!(c.len(), 5);
        assert_eq!(c.blocks()[0].prev_hash, ZERO_HASH);
        for w in c.blocks().windows(2) {
            assert_eq!(w[1].prev_hash, w[0].block_hash);
            assert_eq!(w[1].height, w[0].height + 1);
            assert_eq!(w[0].block_hash, w[0].compute_hash());
        }
        c.verify().unwrap();
        let mut bad = c.clone();
        assert!(bad.push(Block::new(9, c.tip_hash(), vec![])).is_err());
    }

    #[test]
    fn tampered_middle_block_breaks_at_its_height() {
        let mut c = chain_of(5);
        c.blocks_mut()[2].txs[0].content.size_bytes += 1;
        match c.verify() {
            Err(LedgerError::ChainBroken { height, .. }) => assert_eq!(height, 2),
            other => panic!("{other:?}"),
        }
        let mut c = chain_of(5);
        let forged = tx(99);
        c.blocks_mut()[2].txs[0] = forged;
        match c.verify() {
            Err(LedgerError::ChainBroken { height, .. }) => assert_eq!(height, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn export_layout() {
        let c = chain_of(1);
        let text = c.export();
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(head[0], "0");
        assert_eq!(head[1], "0".repeat(64));
        assert_eq!(head[3], "1");
        let t = &c.blocks()[0].txs[0];
        let expected = format!("  {},reports/run%200.csv,{},100", t.tx_id_hex(), t.content.digest);
        assert_eq!(lines.next().unwrap(), expected);
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn file_round_trip() {
        let c = chain_of(4);
        let text = c.to_file_text();
        assert_eq!(Chain::from_file_text(&text).unwrap(), c);
        assert_eq!(Chain::from_file_text("").unwrap(), Chain::new());
    }

    #[test]
    fn every_single_byte_tamper_is_detected() {
        let text = chain_of(3).to_file_text();
        let bytes = text.as_bytes();
        for i in 0..bytes.len() {
            for delta in [1u8, 0x20, 0x80] {
                let mut t = bytes.to_vec();
                t[i] ^= delta;
                if let Ok(s) = String::from_utf8(t) {
                    assert!(Chain::from_file_text(&s).is_err(), "byte {i} ^ {delta:#x} undetected");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn escaping_round_trips(s in "\\PC*") {
            prop_assert_eq!(unesc(&esc(&s)).unwrap(), s.clone());
            prop_assert!(!esc(&s).contains([',', ';', '=', ' ', '\n']));
        }
    }
}
