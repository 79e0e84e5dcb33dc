//! Single-view PBFT over an in-process message bus.
//!
//! The client sends REQUEST to the primary (`view mod n`), which multicasts
//! PRE-PREPARE. A replica is prepared once it holds the pre-prepare and 2f
//! matching PREPAREs from distinct backups, commits locally on 2f+1
//! matching COMMITs and then sends REPLY; the client accepts on f+1
//! matching replies. There is no view change: a faulty primary may simply
//! leave the request undecided.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::block::{AnchorTx, Block, Chain};
use super::encode::Hash32;
use super::LedgerError;
use crate::store::ContentRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Request,
    PrePrepare,
    Prepare,
    Commit,
    Reply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbftMessage {
    pub phase: Phase,
    pub view: u64,
    pub seq: u64,
    pub digest: Hash32,
    /// Replica id, or `n` for the client.
    pub sender: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Behavior {
    #[default]
    Honest,
    /// Receives but never sends.
    Silent,
    /// Sends conflicting digests to different peers.
    Equivocate,
}

impl Behavior {
    pub fn is_faulty(self) -> bool {
        self != Behavior::Honest
    }
}

/// Per-link delivery model. Drops only hit links between two backups;
/// client links, primary links and self-delivery are reliable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub drop_prob: f64,
    pub min_delay: u64,
    pub max_delay: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            min_delay: 1,
            max_delay: 1,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Round {
    pre_prepare: Option<Hash32>,
    prepares: HashMap<Hash32, BTreeSet<usize>>,
    commits: HashMap<Hash32, BTreeSet<usize>>,
    sent_prepare: bool,
    sent_commit: bool,
    committed: bool,
}

#[derive(Debug, Clone)]
pub struct ValidatorNode {
    pub id: usize,
    pub behavior: Behavior,
    pub chain: Chain,
    /// Blocks this node committed; the incentive hook.
    pub confirmed_blocks: u64,
    /// Messages received during the latest round.
    pub log: Vec<PbftMessage>,
    round: Round,
    // (view, seq) pairs with an accepted pre-prepare; a slot is never reused
    accepted: HashSet<(u64, u64)>,
}

impl ValidatorNode {
    pub fn new(id: usize, behavior: Behavior, chain: Chain) -> Self {
        Self {
            id,
            behavior,
            chain,
            confirmed_blocks: 0,
            log: Vec::new(),
            round: Round::default(),
            accepted: HashSet::new(),
        }
    }

    pub fn is_primary(&self, view: u64, n: usize) -> bool {
        view % n as u64 == self.id as u64
    }

    pub fn committed_last_round(&self) -> bool {
        self.round.committed
    }

    /// Distinct COMMIT senders for `digest` in this node's log.
    pub fn commit_senders(&self, digest: &Hash32) -> BTreeSet<usize> {
        self.log
            .iter()
            .filter(|m| m.phase == Phase::Commit && &m.digest == digest)
            .map(|m| m.sender)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusOutcome {
    pub decided: bool,
    pub digest: Option<Hash32>,
    /// Replicas that committed locally, ascending.
    pub committed: Vec<usize>,
    pub delivered: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dest {
    Node(usize),
    Client,
}

struct Bus<'a> {
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: HashMap<u64, (Dest, PbftMessage)>,
    now: u64,
    next_id: u64,
    primary: usize,
    cfg: &'a NetworkConfig,
    delivered: usize,
    dropped: usize,
}

impl Bus<'_> {
    fn send(&mut self, rng: &mut ChaCha8Rng, dest: Dest, msg: PbftMessage) {
        let between_backups = matches!(dest, Dest::Node(d) if d != msg.sender && d != self.primary)
            && msg.sender != self.primary;
        let to_self = dest == Dest::Node(msg.sender);
        if between_backups && self.cfg.drop_prob > 0.0 && rng.random::<f64>() < self.cfg.drop_prob {
            self.dropped += 1;
            return;
        }
        let delay = if to_self {
            0
        } else {
            rng.random_range(self.cfg.min_delay..=self.cfg.max_delay.max(self.cfg.min_delay))
        };
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert(id, (dest, msg));
        self.queue.push(Reverse((self.now + delay, id)));
    }

    fn next(&mut self) -> Option<(Dest, PbftMessage)> {
        let Reverse((t, id)) = self.queue.pop()?;
        self.now = t;
        self.delivered += 1;
        self.pending.remove(&id)
    }
}

/// A block at the same height and parent as `block` but with other contents.
fn conflicting(block: &Block) -> Block {
    let fake = AnchorTx::new(
        ContentRef {
            path: "equivocation".into(),
            digest: String::new(),
            size_bytes: block.height,
            brick_ids: Vec::new(),
        },
        Default::default(),
        u64::MAX,
        block.height,
    );
    Block::new(block.height, block.prev_hash, vec![fake])
}

pub fn check_fault_tolerance(n: usize, f: usize) -> Result<(), LedgerError> {
    if n < 3 * f + 1 {
        return Err(LedgerError::Config(format!(
            "{n} validators cannot tolerate {f} faults (need at least {})",
            3 * f + 1
        )));
    }
    Ok(())
}

/// Runs one consensus instance for `block` at `seq = block.height`.
pub fn run_consensus(
    nodes: &mut [ValidatorNode],
    f: usize,
    view: u64,
    block: &Block,
    net: &NetworkConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ConsensusOutcome, LedgerError> {
    let n = nodes.len();
    check_fault_tolerance(n, f)?;
    if !(0.0..=1.0).contains(&net.drop_prob) {
        return Err(LedgerError::Config(format!("drop probability {} outside [0, 1]", net.drop_prob)));
    }
    let primary = (view % n as u64) as usize;
    let seq = block.height;
    let client = n;
    let mut blocks: HashMap<Hash32, Block> = HashMap::new();
    blocks.insert(block.block_hash, block.clone());
    for node in nodes.iter_mut() {
        node.round = Round::default();
        node.log.clear();
    }

    let mut bus = Bus {
        queue: BinaryHeap::new(),
        pending: HashMap::new(),
        now: 0,
        next_id: 0,
        primary,
        cfg: net,
        delivered: 0,
        dropped: 0,
    };
    let msg = |phase, digest, sender| PbftMessage {
        phase,
        view,
        seq,
        digest,
        sender,
    };
    bus.send(rng, Dest::Node(primary), msg(Phase::Request, block.block_hash, client));

    let mut replies: HashMap<Hash32, BTreeSet<usize>> = HashMap::new();
    let mut decided: Option<Hash32> = None;

    while let Some((dest, m)) = bus.next() {
        let i = match dest {
            Dest::Client => {
                if m.phase == Phase::Reply && m.sender < n {
                    let s = replies.entry(m.digest).or_default();
                    s.insert(m.sender);
                    if decided.is_none() && s.len() > f {
                        decided = Some(m.digest);
                    }
                }
                continue;
            }
            Dest::Node(i) => i,
        };
        nodes[i].log.push(m);
        if m.view != view || m.seq != seq {
            continue;
        }
        let mut out: Vec<(Dest, PbftMessage)> = Vec::new();
        let all = |out: &mut Vec<(Dest, PbftMessage)>, pm: PbftMessage| {
            out.extend((0..n).map(|d| (Dest::Node(d), pm)));
        };

        match nodes[i].behavior {
            Behavior::Silent => {}
            Behavior::Equivocate => {
                if m.phase == Phase::Request && i == primary && nodes[i].round.pre_prepare.is_none() {
                    let alt = conflicting(block);
                    nodes[i].round.pre_prepare = Some(m.digest);
                    for d in 0..n {
                        let digest = if d % 2 == 0 { m.digest } else { alt.block_hash };
                        out.push((Dest::Node(d), msg(Phase::PrePrepare, digest, i)));
                    }
                    blocks.insert(alt.block_hash, alt);
                } else if m.phase == Phase::PrePrepare && !nodes[i].round.sent_prepare {
                    nodes[i].round.sent_prepare = true;
                    for d in (0..n).filter(|&d| d != i) {
                        for phase in [Phase::Prepare, Phase::Commit] {
                            let digest = if rng.random_bool(0.5) {
                                m.digest
                            } else {
                                let mut forged = [0u8; 32];
                                rng.fill_bytes(&mut forged);
                                forged
                            };
                            out.push((Dest::Node(d), msg(phase, digest, i)));
                        }
                    }
                    let mut forged = [0u8; 32];
                    rng.fill_bytes(&mut forged);
                    out.push((Dest::Client, msg(Phase::Reply, forged, i)));
                }
            }
            Behavior::Honest => {
                let node = &mut nodes[i];
                match m.phase {
                    Phase::Request => {
                        if i == primary && node.chain.extends(block) && node.accepted.insert((view, seq)) {
                            node.round.pre_prepare = Some(m.digest);
                            all(&mut out, msg(Phase::PrePrepare, m.digest, i));
                        }
                    }
                    Phase::PrePrepare => {
                        let valid = m.sender == primary
                            && blocks.get(&m.digest).is_some_and(|b| node.chain.extends(b));
                        if valid && i != primary && node.accepted.insert((view, seq)) {
                            node.round.pre_prepare = Some(m.digest);
                            node.round.sent_prepare = true;
                            all(&mut out, msg(Phase::Prepare, m.digest, i));
                        }
                    }
                    Phase::Prepare => {
                        if m.sender != primary && m.sender < n {
                            node.round.prepares.entry(m.digest).or_default().insert(m.sender);
                        }
                    }
                    Phase::Commit => {
                        if m.sender < n {
                            node.round.commits.entry(m.digest).or_default().insert(m.sender);
                        }
                    }
                    Phase::Reply => {}
                }
                if let Some(d) = node.round.pre_prepare {
                    let prepared = node.round.prepares.get(&d).map_or(0, BTreeSet::len) >= 2 * f;
                    if prepared && !node.round.sent_commit {
                        node.round.sent_commit = true;
                        all(&mut out, msg(Phase::Commit, d, i));
                    }
                    let commit_quorum = node.round.commits.get(&d).map_or(0, BTreeSet::len) > 2 * f;
                    if node.round.sent_commit && !node.round.committed && commit_quorum {
                        node.chain.push(blocks[&d].clone())?;
                        node.round.committed = true;
                        node.confirmed_blocks += 1;
                        out.push((Dest::Client, msg(Phase::Reply, d, i)));
                    }
                }
            }
        }
        for (dest, pm) in out {
            bus.send(rng, dest, pm);
        }
    }

    Ok(ConsensusOutcome {
        decided: decided.is_some(),
        digest: decided,
        committed: nodes.iter().filter(|n| n.round.committed).map(|n| n.id).collect(),
        delivered: bus.delivered,
        dropped: bus.dropped,
    })
}
