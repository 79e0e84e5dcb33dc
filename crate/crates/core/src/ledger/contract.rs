use std::collections::BTreeSet;

use super::block::AnchorTx;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    Always,
    MetaEquals { key: String, value: String },
    MetaHasKey(String),
    PathPrefix(String),
    SizeAbove(u64),
}

impl Trigger {
    pub fn matches(&self, tx: &AnchorTx) -> bool {
        match self {
            Trigger::Always => true,
            Trigger::MetaEquals { key, value } => tx.index_meta.get(key) == Some(value),
            Trigger::MetaHasKey(key) => tx.index_meta.contains_key(key),
            Trigger::PathPrefix(p) => tx.content.path.starts_with(p.as_str()),
            Trigger::SizeAbove(n) => tx.content.size_bytes > *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Accept,
    Reject(String),
    Annotate { key: String, value: String },
}

/// A state-response rule. When the trigger matches, a submitter outside
/// `authorized` (if set) is rejected before the response applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRule {
    pub name: String,
    pub trigger: Trigger,
    pub response: Response,
    pub authorized: Option<BTreeSet<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleOutcome {
    Accept,
    Reject { rule: String, reason: String },
    Annotate { key: String, value: String },
}

impl ContractRule {
    pub fn new(name: impl Into<String>, trigger: Trigger, response: Response) -> Self {
        Self {
            name: name.into(),
            trigger,
            response,
            authorized: None,
        }
    }

    pub fn only(mut self, submitters: impl IntoIterator<Item = u64>) -> Self {
        self.authorized = Some(submitters.into_iter().collect());
        self
    }

    pub fn evaluate(&self, tx: &AnchorTx) -> RuleOutcome {
        if !self.trigger.matches(tx) {
            return RuleOutcome::Accept;
        }
        if let Some(allowed) = &self.authorized {
            if !allowed.contains(&tx.submitter) {
                return RuleOutcome::Reject {
                    rule: self.name.clone(),
                    reason: format!("submitter {} is not authorized", tx.submitter),
                };
            }
        }
        match &self.response {
            Response::Accept => RuleOutcome::Accept,
            Response::Reject(reason) => RuleOutcome::Reject {
                rule: self.name.clone(),
                reason: reason.clone(),
            },
            Response::Annotate { key, value } => RuleOutcome::Annotate {
                key: key.clone(),
                value: value.clone(),
            },
        }
    }
}

/// Applies rules in order. The first rejection wins; annotations accumulate.
pub fn apply_rules(tx: &AnchorTx, rules: &[ContractRule]) -> Result<AnchorTx, (String, String)> {
    let mut current = tx.clone();
    for r in rules {
        match r.evaluate(&current) {
            RuleOutcome::Accept => {}
            RuleOutcome::Reject { rule, reason } => return Err((rule, reason)),
            RuleOutcome::Annotate { key, value } => current = current.annotated(&key, &value),
        }
    }
    Ok(current)
}
