//! Synthetic data, dataset files and candidate-scope evaluation.

pub mod auc;
pub mod dataset;
pub mod gen;

use std::fmt;

use serde::Serialize;

pub use auc::{auc, pairwise_auc};
pub use dataset::{read_dataset, read_requests, write_dataset, write_requests};
pub use gen::{GenConfig, Generator, ItemLatent, RequestLatent, UserLatent};

use crate::error::Result;
use crate::model::{Candidate, IfaModel, Request, ScoredCandidate};

/// Scores and labels over the whole candidate scope: every candidate is a
/// sample, and candidates without the action are negatives.
#[derive(Debug, Clone, Default)]
pub struct AucAccumulator {
    imp: (Vec<f64>, Vec<u8>),
    cli: (Vec<f64>, Vec<u8>),
    extra: (Vec<f64>, Vec<u8>),
    requests: usize,
}

impl AucAccumulator {
    /// Impression AUC ranks by `y_imp`, click AUC by `pitctr`, the extra
    /// action by `y_imp · y_extra`.
    pub fn push(&mut self, scored: &[ScoredCandidate], candidates: &[Candidate]) {
        self.requests += 1;
        for (s, c) in scored.iter().zip(candidates) {
            self.imp.0.push(s.y_imp);
            self.imp.1.push(c.label_imp);
            self.cli.0.push(s.pitctr);
            self.cli.1.push(c.label_cli);
            if let (Some(y), Some(l)) = (s.y_extra, c.label_extra) {
                self.extra.0.push(s.y_imp * y);
                self.extra.1.push(l);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.imp.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.imp.0.is_empty()
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            requests: self.requests,
            candidates: self.len(),
            auc_imp: auc(&self.imp.0, &self.imp.1),
            auc_cli: auc(&self.cli.0, &self.cli.1),
            auc_extra: auc(&self.extra.0, &self.extra.1),
        }
    }

    pub fn clear(&mut self) {
        *self = AucAccumulator::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub requests: usize,
    pub candidates: usize,
    pub auc_imp: Option<f64>,
    pub auc_cli: Option<f64>,
    pub auc_extra: Option<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: Option<f64>| x.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "requests={} candidates={} auc_imp={} auc_cli={}",
            self.requests,
            self.candidates,
            show(self.auc_imp),
            show(self.auc_cli)
        )?;
        if self.auc_extra.is_some() {
            write!(f, " auc_extra={}", show(self.auc_extra))?;
        }
        Ok(())
    }
}

/// Scores every request and reports candidate-scope AUC per action.
pub fn evaluate(model: &IfaModel, requests: &[Request]) -> Result<EvalReport> {
    let scored = model.score_batch(requests)?;
    let mut acc = AucAccumulator::default();
    for (s, r) in scored.iter().zip(requests) {
        acc.push(s, &r.candidates);
    }
    Ok(acc.report())
}

/// Splits off the last `frac` of the stream as a held-out set.
pub fn holdout_split(requests: &[Request], frac: f64) -> (&[Request], &[Request]) {
    let n_hold = ((requests.len() as f64) * frac.clamp(0.0, 1.0)).round() as usize;
    requests.split_at(requests.len() - n_hold)
}
