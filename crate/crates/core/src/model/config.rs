use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::KernelFn;
use crate::error::{Error, Result};

/// How the candidate/sequence interaction block is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Full-sequence linear cross attention (the IFA block).
    #[default]
    None,
    /// Column mean of the sequence embeddings, shared by all candidates.
    Avgpool,
    /// Softmax target attention over the `k` most recent sequence items.
    Din,
    /// Same-category hard search, then softmax attention over at most `k` items.
    SimHard,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::None => "ifa",
            Baseline::Avgpool => "avgpool",
            Baseline::Din => "din",
            Baseline::SimHard => "sim_hard",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "ifa" => Ok(Baseline::None),
            "avgpool" => Ok(Baseline::Avgpool),
            "din" => Ok(Baseline::Din),
            "sim_hard" => Ok(Baseline::SimHard),
            other => Err(format!("unknown baseline `{other}` (expected none|avgpool|din|sim_hard)")),
        }
    }
}

/// Architecture of an [`IfaModel`](super::IfaModel).
///
/// Vocabulary sizes are per feature field and include the reserved id 0.
/// Embedding widths are per field, so e.g. the item width is
/// `item_dim * item_vocab.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub user_vocab: Vec<usize>,
    pub item_vocab: Vec<usize>,
    pub cross_vocab: Vec<usize>,
    pub user_dim: usize,
    pub item_dim: usize,
    pub cross_dim: usize,
    /// Inner dimension `d` of every attention block.
    pub attn_dim: usize,
    pub hidden: Vec<usize>,
    pub use_fsm: bool,
    pub use_ram: bool,
    pub kernel: KernelFn,
    pub baseline: Baseline,
    /// Sub-sequence length for the DIN and SIM-hard baselines.
    pub k: usize,
    /// Swap the candidate self-attention to dense softmax.
    pub ram_softmax: bool,
    /// Degree normalization of the linear attention blocks.
    pub normalize: bool,
    /// Third tower for an optional post-impression action.
    pub extra_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            user_vocab: vec![5001],
            item_vocab: vec![2001, 17, 65],
            cross_vocab: vec![],
            user_dim: 8,
            item_dim: 8,
            cross_dim: 4,
            attn_dim: 16,
            hidden: vec![32, 16],
            use_fsm: true,
            use_ram: true,
            kernel: KernelFn::Softplus,
            baseline: Baseline::None,
            k: 16,
            ram_softmax: false,
            normalize: true,
            extra_head: false,
        }
    }
}

impl ModelConfig {
    pub fn d_user(&self) -> usize {
        self.user_dim * self.user_vocab.len()
    }

    pub fn d_item(&self) -> usize {
        self.item_dim * self.item_vocab.len()
    }

    pub fn d_cross(&self) -> usize {
        self.cross_dim * self.cross_vocab.len()
    }

    /// Whether the model has a candidate/sequence block at all.
    pub fn has_sequence_block(&self) -> bool {
        self.baseline != Baseline::None || self.use_fsm
    }

    /// Width of the sequence block in the tower input.
    pub fn seq_block_width(&self) -> usize {
        match (self.baseline, self.use_fsm) {
            (Baseline::None, false) => 0,
            (Baseline::Avgpool, _) => self.d_item(),
            _ => self.attn_dim,
        }
    }

    /// Width of the concatenated tower input `[F_cs, F_cc, F_u, F_cro]`.
    pub fn tower_input_width(&self) -> usize {
        self.seq_block_width() + if self.use_ram { self.attn_dim } else { 0 } + self.d_user() + self.d_cross()
    }

    pub fn num_heads(&self) -> usize {
        if self.extra_head {
            3
        } else {
            2
        }
    }

    /// Copy configured as one of the baselines: the sequence block swapped
    /// out and candidate self-attention removed.
    pub fn as_baseline(&self, baseline: Baseline) -> ModelConfig {
        let mut cfg = self.clone();
        cfg.baseline = baseline;
        if baseline != Baseline::None {
            cfg.use_ram = false;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.item_vocab.is_empty() {
            return bad("item_vocab must list at least one feature field".into());
        }
        for (name, vocab) in [
            ("user_vocab", &self.user_vocab),
            ("item_vocab", &self.item_vocab),
            ("cross_vocab", &self.cross_vocab),
        ] {
            if let Some(v) = vocab.iter().find(|&&v| v < 2) {
                return bad(format!("{name} entries must be >= 2 (id 0 is reserved), got {v}"));
            }
        }
        for (name, v) in [
            ("user_dim", self.user_dim),
            ("item_dim", self.item_dim),
            ("cross_dim", self.cross_dim),
            ("attn_dim", self.attn_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1".into());
        }
        if matches!(self.baseline, Baseline::Din | Baseline::SimHard) && self.k == 0 {
            return bad("k must be >= 1 for din/sim_hard".into());
        }
        if self.baseline != Baseline::None && self.use_ram {
            return bad(format!("baseline {} runs without candidate self-attention; set use_ram = false", self.baseline.name()));
        }
        if self.tower_input_width() == 0 {
            return bad("tower input is empty: enable a block or add user/cross features".into());
        }
        Ok(())
    }

    /// Stable 64-bit digest of the architecture, stored in checkpoints.
    pub fn hash64(&self) -> u64 {
        let text = toml::to_string(self).expect("model config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
