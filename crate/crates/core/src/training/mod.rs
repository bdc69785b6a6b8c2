//! Entire-space multi-task loss and the evaluate-then-train loop.

pub mod checkpoint;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use crate::data::AucAccumulator;
use crate::data::EvalReport;
use crate::error::{Error, Result};
use crate::model::{Candidate, HeadGrads, IfaModel, Request, ScoredCandidate};
use crate::numeric::{Optimizer, OptimizerKind};
use crate::par;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub l_imp: f64,
    pub l_cli: f64,
    pub l_extra: Option<f64>,
    /// `l_imp + λ·(l_cli + l_extra)`
    pub total: f64,
    pub count: usize,
    pub count_imp_pos: usize,
    pub count_cli_pos: usize,
}

impl LossReport {
    fn merge(&mut self, other: &LossReport) {
        self.l_imp += other.l_imp;
        self.l_cli += other.l_cli;
        self.l_extra = match (self.l_extra, other.l_extra) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
        };
        self.total += other.total;
        self.count += other.count;
        self.count_imp_pos += other.count_imp_pos;
        self.count_cli_pos += other.count_cli_pos;
    }
}

/// `(-ln p̂ or -ln(1-p̂), ∂/∂p)` for one Bernoulli term, where `p̂` is `p`
/// clamped; the derivative is zero where the clamp is active.
fn bce(p: f64, label: u8) -> (f64, f64) {
    let hi = 1.0 - PROB_CLAMP;
    let q = p.clamp(PROB_CLAMP, hi);
    let inside = (PROB_CLAMP..=hi).contains(&p);
    if label == 1 {
        (-q.ln(), if inside { -1.0 / q } else { 0.0 })
    } else {
        (-(1.0 - q).ln(), if inside { 1.0 / (1.0 - q) } else { 0.0 })
    }
}

/// Negated mean log-likelihood over the candidate scope.
///
/// `L_imp` is the cross-entropy of `y_imp` against impressions and `L_cli`
/// the cross-entropy of `y_imp · y_cli` against clicks, so the click term
/// trains both towers. Returns the report and `∂total/∂y` per tower.
pub fn esmm_loss(scored: &[ScoredCandidate], candidates: &[Candidate], lambda: f64) -> Result<(LossReport, HeadGrads)> {
    esmm_loss_scaled(scored, candidates, lambda, candidates.len())
}

/// As [`esmm_loss`] with the mean taken over `denom` candidates, so that
/// several requests can share one batch mean.
pub fn esmm_loss_scaled(
    scored: &[ScoredCandidate],
    candidates: &[Candidate],
    lambda: f64,
    denom: usize,
) -> Result<(LossReport, HeadGrads)> {
    if scored.len() != candidates.len() {
        return Err(Error::Usage(format!(
            "esmm_loss: {} scores for {} candidates",
            scored.len(),
            candidates.len()
        )));
    }
    let m = candidates.len();
    let has_extra = scored.first().is_some_and(|s| s.y_extra.is_some());
    let mut grads = HeadGrads::zeros(m, has_extra);
    let mut rep = LossReport {
        count: m,
        l_extra: has_extra.then_some(0.0),
        ..LossReport::default()
    };
    let inv = 1.0 / denom.max(1) as f64;
    for (i, (s, c)) in scored.iter().zip(candidates).enumerate() {
        if c.label_imp > 1 || c.label_cli > 1 {
            return Err(Error::data(format!("candidates[{i}]"), "labels must be 0 or 1"));
        }
        if c.label_cli == 1 && c.label_imp == 0 {
            return Err(Error::data(format!("candidates[{i}].label_cli"), "click without impression"));
        }
        rep.count_imp_pos += c.label_imp as usize;
        rep.count_cli_pos += c.label_cli as usize;

        let (l, d) = bce(s.y_imp, c.label_imp);
        rep.l_imp += l * inv;
        grads.imp[i] += d * inv;

        let (l, d) = bce(s.y_imp * s.y_cli, c.label_cli);
        rep.l_cli += l * inv;
        grads.imp[i] += lambda * d * inv * s.y_cli;
        grads.cli[i] += lambda * d * inv * s.y_imp;

        if let (Some(y), Some(g)) = (s.y_extra, grads.extra.as_mut()) {
            let label = c.label_extra.unwrap_or(0);
            if label == 1 && c.label_imp == 0 {
                return Err(Error::data(format!("candidates[{i}].label_extra"), "action without impression"));
            }
            let (l, d) = bce(s.y_imp * y, label);
            *rep.l_extra.as_mut().unwrap() += l * inv;
            grads.imp[i] += lambda * d * inv * y;
            g[i] += lambda * d * inv * s.y_imp;
        }
    }
    rep.total = rep.l_imp + lambda * (rep.l_cli + rep.l_extra.unwrap_or(0.0));
    Ok((rep, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Weight of the click (and extra-action) loss.
    pub lambda: f64,
    /// Requests per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; 0 means no limit.
    pub max_steps: u64,
    /// Global gradient-norm clip.
    pub clip: f64,
    /// Seeds parameter initialization.
    pub seed: u64,
    /// Steps between streaming AUC snapshots in the log; 0 disables them.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            optimizer: OptimizerKind::Adam,
            lambda: 1.0,
            batch_size: 1,
            epochs: 15,
            max_steps: 0,
            clip: 5.0,
            seed: 1,
            eval_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("train: {msg}")));
        // lr = 0 is allowed: it freezes the model, which is useful as a control.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be > 0, got {}", self.clip));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_imp: f64,
    pub l_cli: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub auc_imp: Option<f64>,
    pub auc_cli: Option<f64>,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} l_imp={} l_cli={} total={} grad_norm={}",
            self.step, self.l_imp, self.l_cli, self.total, self.grad_norm
        )?;
        if let Some(a) = self.auc_imp {
            write!(f, " auc_imp={a}")?;
        }
        if let Some(a) = self.auc_cli {
            write!(f, " auc_cli={a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub steps: u64,
    pub records: Vec<StepRecord>,
    /// Progressive validation: every request scored just before it was
    /// trained on.
    pub stream: EvalReport,
}

/// Evaluate-then-train over `data` in stream order.
///
/// Each batch is first scored (forward passes run concurrently) and its
/// scores recorded for the streaming AUC; then gradients are accumulated
/// sequentially, clipped and applied. Deterministic for fixed inputs.
pub fn train(model: &mut IfaModel, data: &[Request], cfg: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr)?;
    let mut records = Vec::new();
    let mut window = AucAccumulator::default();
    let mut stream = AucAccumulator::default();
    let mut step: u64 = 0;

    'outer: for _epoch in 0..cfg.epochs {
        for batch in data.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'outer;
            }
            let shared: &IfaModel = model;
            let forwards: Vec<_> = par::map(batch, |r| shared.forward(r)).into_iter().collect::<Result<_>>()?;
            for ((scored, _), r) in forwards.iter().zip(batch) {
                window.push(scored, &r.candidates);
                stream.push(scored, &r.candidates);
            }

            let denom: usize = batch.iter().map(|r| r.m()).sum();
            let mut report = LossReport::default();
            let mut grads = Vec::with_capacity(batch.len());
            for ((scored, _), r) in forwards.iter().zip(batch) {
                let (rep, g) = esmm_loss_scaled(scored, &r.candidates, cfg.lambda, denom)?;
                report.merge(&rep);
                grads.push(g);
            }
            if !report.total.is_finite() {
                return Err(Error::Training {
                    step,
                    msg: format!(
                        "non-finite loss (l_imp={}, l_cli={}); parameters are unchanged since the last good step {}",
                        report.l_imp,
                        report.l_cli,
                        step.saturating_sub(1)
                    ),
                });
            }
            for ((_, cache), g) in forwards.iter().zip(&grads) {
                model.backward(g, cache)?;
            }
            let grad_norm = model.params_mut().clip_grad_norm(cfg.clip);
            opt.step(model.params_mut(), step)?;
            step += 1;

            let mut rec = StepRecord {
                step,
                l_imp: report.l_imp,
                l_cli: report.l_cli,
                total: report.total,
                grad_norm,
                auc_imp: None,
                auc_cli: None,
            };
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                let snap = window.report();
                rec.auc_imp = snap.auc_imp;
                rec.auc_cli = snap.auc_cli;
                window.clear();
            }
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{rec}")?;
            }
            records.push(rec);
        }
    }
    Ok(TrainOutcome {
        steps: step,
        records,
        stream: stream.report(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(imp: u8, cli: u8) -> Candidate {
        Candidate {
            item_feats: vec![1],
            cross_feats: vec![],
            category: 1,
            label_imp: imp,
            label_cli: cli,
            label_extra: None,
        }
    }

    fn sc(y_imp: f64, y_cli: f64) -> ScoredCandidate {
        ScoredCandidate {
            y_imp,
            y_cli,
            pitctr: y_imp * y_cli,
            y_extra: None,
        }
    }

    #[test]
    fn hand_evaluated_single_candidate() {
        let (rep, _) = esmm_loss(&[sc(0.5, 0.5)], &[cand(1, 1)], 1.0).unwrap();
        assert!((rep.l_imp - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((rep.l_cli - 4f64.ln()).abs() < 1e-15);
        assert!((rep.total - (rep.l_imp + rep.l_cli)).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = 1.0 - 1e-7;
        let (rep, _) = esmm_loss(&[sc(y, y)], &[cand(1, 1)], 1.0).unwrap();
        assert!(rep.total < 1e-6 && rep.total >= 0.0);
    }

    #[test]
    fn frozen_impression_reduces_to_click_bce() {
        let ys = [0.2, 0.7, 0.9];
        let labels = [cand(1, 0), cand(1, 1), cand(1, 1)];
        let scored: Vec<_> = ys.iter().map(|&y| sc(1.0, y)).collect();
        let (rep, _) = esmm_loss(&scored, &labels, 1.0).unwrap();
        let plain: f64 = ys
            .iter()
            .zip(&labels)
            .map(|(&y, c)| if c.label_cli == 1 { -y.ln() } else { -(1.0 - y).ln() })
            .sum::<f64>()
            / 3.0;
        assert!((rep.l_cli - plain).abs() < 1e-15);
    }

    #[test]
    fn click_gradient_reaches_both_towers() {
        let (_, g) = esmm_loss(&[sc(0.6, 0.3)], &[cand(1, 1)], 1.0).unwrap();
        // d/dy_imp [-ln y_imp - ln(y_imp y_cli)] = -2/y_imp
        assert!((g.imp[0] + 2.0 / 0.6).abs() < 1e-12);
        assert!((g.cli[0] + 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_labels_rejected() {
        assert!(matches!(esmm_loss(&[sc(0.5, 0.5)], &[cand(0, 1)], 1.0), Err(Error::Data { .. })));
    }

    #[test]
    fn lambda_weights_click_term() {
        let (a, _) = esmm_loss(&[sc(0.4, 0.3)], &[cand(1, 0)], 1.0).unwrap();
        let (b, _) = esmm_loss(&[sc(0.4, 0.3)], &[cand(1, 0)], 0.25).unwrap();
        assert_eq!(a.l_cli, b.l_cli);
        assert!((b.total - (b.l_imp + 0.25 * b.l_cli)).abs() < 1e-15);
    }

    #[test]
    fn clamped_saturation_has_zero_grad() {
        let (rep, g) = esmm_loss(&[sc(1.0, 1.0)], &[cand(0, 0)], 1.0).unwrap();
        assert!(rep.total.is_finite());
        assert_eq!((g.imp[0], g.cli[0]), (0.0, 0.0));
    }

    #[test]
    fn record_format() {
        let r = StepRecord {
            step: 3,
            l_imp: 0.5,
            l_cli: 0.25,
            total: 0.75,
            grad_norm: 1.5,
            auc_imp: None,
            auc_cli: Some(0.75),
        };
        assert_eq!(r.to_string(), "step=3 l_imp=0.5 l_cli=0.25 total=0.75 grad_norm=1.5 auc_cli=0.75");
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let mut c = TrainConfig::default();
        c.clip = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr = f64::NAN;
        assert!(c.validate().is_err());
    }
}
