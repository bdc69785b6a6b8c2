//! Train-and-evaluate comparisons over model variants sharing one dataset
//! and one seed.

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{evaluate, holdout_split, EvalReport};
use crate::error::Result;
use crate::model::{Baseline, IfaModel, ModelConfig, Request};
use crate::training::train;

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub steps: u64,
    /// Held-out AUC after training.
    pub heldout: EvalReport,
    /// Progressive-validation AUC over the training stream.
    pub stream: EvalReport,
}

/// Full model, without candidate self-attention, and without either block.
pub fn ablation_variants(base: &ModelConfig) -> Vec<Variant> {
    let full = ModelConfig {
        baseline: Baseline::None,
        use_fsm: true,
        use_ram: true,
        ..base.clone()
    };
    let no_ram = ModelConfig {
        use_ram: false,
        ..full.clone()
    };
    let neither = ModelConfig {
        use_fsm: false,
        ..no_ram.clone()
    };
    vec![
        Variant {
            name: "IFA".into(),
            model: full,
        },
        Variant {
            name: "IFA-RAM".into(),
            model: no_ram,
        },
        Variant {
            name: "IFA-FSM-RAM".into(),
            model: neither,
        },
    ]
}

/// The full model against the three sequence baselines.
pub fn baseline_variants(base: &ModelConfig) -> Vec<Variant> {
    let mut out = vec![ablation_variants(base).swap_remove(0)];
    for b in [Baseline::SimHard, Baseline::Din, Baseline::Avgpool] {
        out.push(Variant {
            name: b.name().into(),
            model: base.as_baseline(b),
        });
    }
    out
}

/// Trains one variant on the head of `data` and evaluates on the tail.
pub fn run_variant(cfg: &RunConfig, variant: &Variant, data: &[Request]) -> Result<VariantResult> {
    let (train_set, heldout) = holdout_split(data, cfg.eval.holdout_frac);
    let mut model = IfaModel::new(variant.model.clone(), cfg.train.seed)?;
    let outcome = train(&mut model, train_set, &cfg.train, None)?;
    log::info!("variant {} trained for {} steps", variant.name, outcome.steps);
    Ok(VariantResult {
        name: variant.name.clone(),
        steps: outcome.steps,
        heldout: evaluate(&model, heldout)?,
        stream: outcome.stream,
    })
}

pub fn run_variants(cfg: &RunConfig, variants: &[Variant], data: &[Request]) -> Result<Vec<VariantResult>> {
    variants.iter().map(|v| run_variant(cfg, v, data)).collect()
}

/// Fixed-width table: one row per variant, one column per action AUC.
pub fn format_table(results: &[VariantResult]) -> String {
    let show = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut s = format!("{:<14} {:>8} {:>8}\n", "model", "auc_imp", "auc_cli");
    for r in results {
        s.push_str(&format!(
            "{:<14} {:>8} {:>8}\n",
            r.name,
            show(r.heldout.auc_imp),
            show(r.heldout.auc_cli)
        ));
    }
    s
}
