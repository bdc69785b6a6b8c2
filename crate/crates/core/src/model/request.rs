use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scoring unit: a user, the candidate set to rank, and the user's
/// behaviour sequence in chronological order (last element most recent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub user_feats: Vec<u32>,
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub sequence: Vec<SeqItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_feats: Vec<u32>,
    #[serde(default)]
    pub cross_feats: Vec<u32>,
    /// Category used by the hard-search baseline.
    pub category: u32,
    pub label_imp: u8,
    pub label_cli: u8,
    /// Optional second post-impression action (e.g. long view).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_extra: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqItem {
    pub item_feats: Vec<u32>,
    pub category: u32,
}

impl Request {
    pub fn m(&self) -> usize {
        self.candidates.len()
    }

    pub fn n(&self) -> usize {
        self.sequence.len()
    }

    /// Checks the structural invariants: at least one candidate, binary
    /// labels, and every post-impression action implies an impression.
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::data("candidates", "request has no candidates"));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            let field = |f: &str| format!("candidates[{i}].{f}");
            if c.label_imp > 1 {
                return Err(Error::data(field("label_imp"), format!("label must be 0 or 1, got {}", c.label_imp)));
            }
            if c.label_cli > 1 {
                return Err(Error::data(field("label_cli"), format!("label must be 0 or 1, got {}", c.label_cli)));
            }
            if c.label_cli == 1 && c.label_imp == 0 {
                return Err(Error::data(field("label_cli"), "click without impression"));
            }
            if let Some(x) = c.label_extra {
                if x > 1 {
                    return Err(Error::data(field("label_extra"), format!("label must be 0 or 1, got {x}")));
                }
                if x == 1 && c.label_imp == 0 {
                    return Err(Error::data(field("label_extra"), "action without impression"));
                }
            }
        }
        Ok(())
    }
}
