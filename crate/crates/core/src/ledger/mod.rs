//! Permissioned hash-anchoring ledger.
//!
//! Each anchored file becomes an [`AnchorTx`] carrying its content digest
//! and index tags. Contract rules screen the transaction, a PBFT round
//! among simulated validators decides the block, and [`verify_anchor`]
//! later re-hashes the stored file against the on-chain digest.

mod block;
mod contract;
mod encode;
mod pbft;

pub use block::{merkle_root, AnchorTx, Block, Chain};
pub use contract::{apply_rules, ContractRule, Response, RuleOutcome, Trigger};
pub use encode::{from_hex, sha256, to_hex, Encoder, Hash32, ZERO_HASH};
pub use pbft::{
    check_fault_tolerance, run_consensus, Behavior, ConsensusOutcome, NetworkConfig, PbftMessage, Phase, ValidatorNode,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::store::{sha256_hex, StoreError, Volume};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger config: {0}")]
    Config(String),
    #[error("rejected by rule {rule}: {reason}")]
    Rejected { rule: String, reason: String },
    #[error("transaction {0} is already anchored")]
    Duplicate(String),
    #[error("consensus did not decide the block at height {height}")]
    NotDecided { height: u64 },
    #[error("block at height {height} does not extend the chain tip")]
    BadLink { height: u64 },
    #[error("chain verification failed at height {height}: {reason}")]
    ChainBroken { height: u64, reason: String },
    #[error("chain file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerConfig {
    pub validators: usize,
    pub faults: usize,
    /// Per-validator behavior; missing entries are honest.
    pub behaviors: Vec<Behavior>,
    pub network: NetworkConfig,
    pub seed: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            validators: 4,
            faults: 1,
            behaviors: Vec::new(),
            network: NetworkConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct Ledger {
    nodes: Vec<ValidatorNode>,
    f: usize,
    view: u64,
    network: NetworkConfig,
    rng: ChaCha8Rng,
}

impl Ledger {
    pub fn new(cfg: &LedgerConfig) -> Result<Self, LedgerError> {
        Self::with_chain(cfg, Chain::new())
    }

    /// Every validator starts from a copy of `chain`, which must verify.
    pub fn with_chain(cfg: &LedgerConfig, chain: Chain) -> Result<Self, LedgerError> {
        check_fault_tolerance(cfg.validators, cfg.faults)?;
        if cfg.behaviors.len() > cfg.validators {
            return Err(LedgerError::Config(format!(
                "{} behaviors for {} validators",
                cfg.behaviors.len(),
                cfg.validators
            )));
        }
        chain.verify()?;
        let nodes = (0..cfg.validators)
            .map(|i| ValidatorNode::new(i, cfg.behaviors.get(i).copied().unwrap_or_default(), chain.clone()))
            .collect();
        Ok(Self {
            nodes,
            f: cfg.faults,
            view: 0,
            network: cfg.network,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn nodes(&self) -> &[ValidatorNode] {
        &self.nodes
    }

    /// The longest chain held by an honest validator (lowest id on ties).
    pub fn chain(&self) -> &Chain {
        let honest = self.nodes.iter().filter(|n| !n.behavior.is_faulty());
        let best = honest.fold(None::<&ValidatorNode>, |best, n| match best {
            Some(b) if b.chain.len() >= n.chain.len() => Some(b),
            _ => Some(n),
        });
        &best.unwrap_or(&self.nodes[0]).chain
    }

    /// Screens `tx` with `rules`, then runs consensus on a one-transaction block.
    pub fn append_anchor(&mut self, tx: &AnchorTx, rules: &[ContractRule]) -> Result<Block, LedgerError> {
        let tx = apply_rules(tx, rules).map_err(|(rule, reason)| LedgerError::Rejected { rule, reason })?;
        if self.chain().contains_tx(&tx.tx_id()) {
            return Err(LedgerError::Duplicate(tx.tx_id_hex()));
        }
        let block = self.chain().propose(vec![tx]);
        let outcome = run_consensus(&mut self.nodes, self.f, self.view, &block, &self.network, &mut self.rng)?;
        if !outcome.decided || outcome.digest != Some(block.block_hash) {
            return Err(LedgerError::NotDecided { height: block.height });
        }
        // honest replicas that missed the round adopt the block vouched for by f+1 replies
        for n in self.nodes.iter_mut().filter(|n| !n.behavior.is_faulty()) {
            if n.chain.extends(&block) {
                n.chain.push(block.clone())?;
            }
        }
        Ok(block)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Ok { path: String, height: u64 },
    Mismatch { path: String, height: u64, reason: String },
    Missing { reason: String },
}

impl VerifyOutcome {
    /// Process exit code: 0 ok, 2 mismatch, 3 missing.
    pub fn exit_code(&self) -> i32 {
        match self {
            VerifyOutcome::Ok { .. } => 0,
            VerifyOutcome::Mismatch { .. } => 2,
            VerifyOutcome::Missing { .. } => 3,
        }
    }
}

/// Re-validates the block holding `tx_id` and re-hashes the stored file.
pub fn verify_anchor(chain: &Chain, tx_id: &Hash32, store: &Volume) -> Result<VerifyOutcome, LedgerError> {
    let Some((block, tx)) = chain.find_tx(tx_id) else {
        return Ok(VerifyOutcome::Missing {
            reason: format!("transaction {} is not on the chain", to_hex(tx_id)),
        });
    };
    let path = tx.content.path.clone();
    let height = block.height;
    if let Err(LedgerError::ChainBroken { height, reason }) = chain.verify_block(height as usize, height as usize + 1) {
        return Ok(VerifyOutcome::Mismatch { path, height, reason });
    }
    let bytes = match store.read(&path) {
        Ok(b) => b,
        Err(StoreError::NotFound(_)) => {
            return Ok(VerifyOutcome::Missing {
                reason: format!("{path} is not in the store"),
            })
        }
        Err(StoreError::Unavailable(_)) => {
            return Ok(VerifyOutcome::Missing {
                reason: format!("{path}: no live replica"),
            })
        }
        Err(e @ StoreError::Integrity { .. }) => {
            return Ok(VerifyOutcome::Mismatch {
                path,
                height,
                reason: e.to_string(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let digest = sha256_hex(&bytes);
    if digest != tx.content.digest {
        return Ok(VerifyOutcome::Mismatch {
            reason: format!("stored content hashes to {digest}, anchored {}", tx.content.digest),
            path,
            height,
        });
    }
    Ok(VerifyOutcome::Ok { path, height })
}
