//! The ranking network and its baselines.
//!
//! A request is embedded into candidate rows `F_can`, cross-feature rows
//! `F_cro`, sequence rows `F_seq` and the user vector broadcast to `F_u`.
//! The sequence block (full-sequence linear attention, or one of the
//! baselines) and the candidate self-attention block are concatenated with
//! `F_u` and `F_cro` and fed to independent impression and click towers.

pub mod config;
pub mod embedding;
pub mod gsu;
pub mod request;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Baseline, ModelConfig};
pub use embedding::{EmbeddingTable, FieldEmbedder};
pub use gsu::{gsu_hard_search, most_recent};
pub use request::{Candidate, Request, SeqItem};

use crate::attention::{
    AttentionParams, KeySelection, LinearAttention, LinearCache, SoftmaxAttention, SoftmaxCache,
};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Mlp, MlpCache, ParamStore};
use crate::par;

/// Per-candidate predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    /// `p(imp | can)`
    pub y_imp: f64,
    /// `p(cli | imp)`
    pub y_cli: f64,
    /// `p(cli | can) = y_imp · y_cli`, the serving order.
    pub pitctr: f64,
    /// `p(extra | imp)` when the optional third tower is enabled.
    pub y_extra: Option<f64>,
}

/// `∂L/∂y` for each tower output, one entry per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub imp: Vec<f64>,
    pub cli: Vec<f64>,
    pub extra: Option<Vec<f64>>,
}

impl HeadGrads {
    pub fn zeros(m: usize, extra: bool) -> Self {
        HeadGrads {
            imp: vec![0.0; m],
            cli: vec![0.0; m],
            extra: extra.then(|| vec![0.0; m]),
        }
    }
}

/// Embedded request.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub f_can: Matrix,
    pub f_cro: Matrix,
    pub f_seq: Matrix,
    pub f_u: Matrix,
}

#[derive(Debug, Clone)]
enum SeqCache {
    Absent,
    /// Empty sequence or empty sub-sequences everywhere: zero block.
    Zero,
    Linear(LinearCache),
    AvgPool,
    /// `key_rows` maps attention key positions back to sequence rows.
    Softmax { cache: SoftmaxCache, key_rows: Vec<usize> },
}

#[derive(Debug, Clone)]
enum RamCache {
    Absent,
    Linear(LinearCache),
    Softmax(SoftmaxCache),
}

/// Everything [`IfaModel::backward`] needs from the matching forward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    m: usize,
    n: usize,
    user_ids: Vec<u32>,
    cand_ids: Vec<Vec<u32>>,
    cross_ids: Vec<Vec<u32>>,
    seq_ids: Vec<Vec<u32>>,
    seq: SeqCache,
    ram: RamCache,
    towers: Vec<MlpCache>,
    /// Sequence-block output, kept for activation diagnostics.
    seq_block: Option<Matrix>,
}

impl ForwardCache {
    /// The candidate/sequence block `F_c-s`, if the model has one.
    pub fn seq_block(&self) -> Option<&Matrix> {
        self.seq_block.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct IfaModel {
    cfg: ModelConfig,
    store: ParamStore,
    user: FieldEmbedder,
    item: FieldEmbedder,
    cross: FieldEmbedder,
    seq_attn: Option<AttentionParams>,
    ram: Option<AttentionParams>,
    towers: Vec<Mlp>,
}

impl IfaModel {
    /// Builds and initializes a model; all shape errors surface here.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let user = FieldEmbedder::new(&mut store, "user", &cfg.user_vocab, cfg.user_dim, &mut rng);
        let item = FieldEmbedder::new(&mut store, "item", &cfg.item_vocab, cfg.item_dim, &mut rng);
        let cross = FieldEmbedder::new(&mut store, "cross", &cfg.cross_vocab, cfg.cross_dim, &mut rng);
        let d_i = cfg.d_item();
        let seq_attn = match (cfg.baseline, cfg.use_fsm) {
            (Baseline::None, true) => Some(AttentionParams::new(&mut store, "fsm", (d_i, d_i, d_i), cfg.attn_dim, &mut rng)),
            (Baseline::Din | Baseline::SimHard, _) => {
                Some(AttentionParams::new(&mut store, "esu", (d_i, d_i, d_i), cfg.attn_dim, &mut rng))
            }
            _ => None,
        };
        let ram = cfg
            .use_ram
            .then(|| AttentionParams::new(&mut store, "ram", (d_i, d_i, d_i), cfg.attn_dim, &mut rng));
        let width = cfg.tower_input_width();
        let mut towers = vec![
            Mlp::new(&mut store, "tower.imp", width, &cfg.hidden, &mut rng),
            Mlp::new(&mut store, "tower.cli", width, &cfg.hidden, &mut rng),
        ];
        if cfg.extra_head {
            towers.push(Mlp::new(&mut store, "tower.extra", width, &cfg.hidden, &mut rng));
        }
        Ok(IfaModel {
            cfg,
            store,
            user,
            item,
            cross,
            seq_attn,
            ram,
            towers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn seq_attention_params(&self) -> Option<AttentionParams> {
        self.seq_attn
    }

    pub fn ram_params(&self) -> Option<AttentionParams> {
        self.ram
    }

    pub fn towers(&self) -> &[Mlp] {
        &self.towers
    }

    pub fn embedders(&self) -> (&FieldEmbedder, &FieldEmbedder, &FieldEmbedder) {
        (&self.user, &self.item, &self.cross)
    }

    /// Validates ids and builds `(F_can, F_cro, F_seq, F_u)`.
    pub fn embed_request(&self, req: &Request) -> Result<Embedded> {
        if req.candidates.is_empty() {
            return Err(Error::data("candidates", "request has no candidates"));
        }
        self.user.check_ids(&req.user_feats, &|| "user_feats".into())?;
        for (i, c) in req.candidates.iter().enumerate() {
            self.item.check_ids(&c.item_feats, &|| format!("candidates[{i}].item_feats"))?;
            self.cross.check_ids(&c.cross_feats, &|| format!("candidates[{i}].cross_feats"))?;
        }
        for (j, s) in req.sequence.iter().enumerate() {
            self.item.check_ids(&s.item_feats, &|| format!("sequence[{j}].item_feats"))?;
        }
        let m = req.m();
        let f_can = self
            .item
            .lookup(&self.store, req.candidates.iter().map(|c| c.item_feats.as_slice()));
        let f_cro = self
            .cross
            .lookup(&self.store, req.candidates.iter().map(|c| c.cross_feats.as_slice()));
        let f_seq = self
            .item
            .lookup(&self.store, req.sequence.iter().map(|s| s.item_feats.as_slice()));
        let user = self.user.lookup(&self.store, std::iter::once(req.user_feats.as_slice()));
        let mut f_u = Matrix::zeros(m, user.cols());
        for i in 0..m {
            f_u.row_mut(i).copy_from_slice(user.row(0));
        }
        Ok(Embedded { f_can, f_cro, f_seq, f_u })
    }

    fn linear(&self, params: AttentionParams) -> LinearAttention {
        LinearAttention {
            params,
            kernel: self.cfg.kernel,
            normalize: self.cfg.normalize,
        }
    }

    pub fn forward(&self, req: &Request) -> Result<(Vec<ScoredCandidate>, ForwardCache)> {
        let emb = self.embed_request(req)?;
        let (m, n) = (req.m(), req.n());
        let d = self.cfg.attn_dim;

        let (seq_block, seq_cache) = match (self.cfg.baseline, self.seq_attn) {
            (Baseline::None, None) => (None, SeqCache::Absent),
            (Baseline::Avgpool, _) => {
                let mean = emb.f_seq.col_mean();
                let mut block = Matrix::zeros(m, emb.f_seq.cols());
                for i in 0..m {
                    block.row_mut(i).copy_from_slice(&mean);
                }
                (Some(block), if n == 0 { SeqCache::Zero } else { SeqCache::AvgPool })
            }
            (_, _) if n == 0 => (Some(Matrix::zeros(m, d)), SeqCache::Zero),
            (Baseline::None, Some(p)) => {
                let out = self.linear(p).forward(&self.store, &emb.f_can, &emb.f_seq, &emb.f_seq)?;
                (Some(out.output), SeqCache::Linear(out.cache))
            }
            (Baseline::Din, Some(p)) => {
                let rows = most_recent(n, self.cfg.k);
                let keys = emb.f_seq.select_rows(&rows);
                let out = SoftmaxAttention::new(p).forward(&self.store, &emb.f_can, &keys, &keys, KeySelection::All)?;
                (
                    Some(out.output),
                    SeqCache::Softmax {
                        cache: out.cache,
                        key_rows: rows,
                    },
                )
            }
            (Baseline::SimHard, Some(p)) => {
                let picked: Vec<Vec<usize>> = req
                    .candidates
                    .iter()
                    .map(|c| gsu_hard_search(&req.sequence, c.category, self.cfg.k))
                    .collect();
                let mut rows: Vec<usize> = picked.iter().flatten().copied().collect();
                rows.sort_unstable();
                rows.dedup();
                if rows.is_empty() {
                    (Some(Matrix::zeros(m, d)), SeqCache::Zero)
                } else {
                    // Re-index each candidate's picks into the compacted key set.
                    let sets: Vec<Vec<usize>> = picked
                        .iter()
                        .map(|s| s.iter().map(|j| rows.binary_search(j).unwrap()).collect())
                        .collect();
                    let keys = emb.f_seq.select_rows(&rows);
                    let out = SoftmaxAttention::new(p).forward(
                        &self.store,
                        &emb.f_can,
                        &keys,
                        &keys,
                        KeySelection::PerQuery(&sets),
                    )?;
                    (
                        Some(out.output),
                        SeqCache::Softmax {
                            cache: out.cache,
                            key_rows: rows,
                        },
                    )
                }
            }
            (_, None) => return Err(Error::Usage("sequence attention parameters missing".into())),
        };

        let (ram_block, ram_cache) = match self.ram {
            None => (None, RamCache::Absent),
            Some(p) if self.cfg.ram_softmax => {
                let out = SoftmaxAttention::new(p).forward(&self.store, &emb.f_can, &emb.f_can, &emb.f_can, KeySelection::All)?;
                (Some(out.output), RamCache::Softmax(out.cache))
            }
            Some(p) => {
                let out = self.linear(p).forward(&self.store, &emb.f_can, &emb.f_can, &emb.f_can)?;
                (Some(out.output), RamCache::Linear(out.cache))
            }
        };

        let mut parts: Vec<&Matrix> = Vec::with_capacity(4);
        parts.extend(seq_block.as_ref());
        parts.extend(ram_block.as_ref());
        parts.push(&emb.f_u);
        parts.push(&emb.f_cro);
        let features = Matrix::hcat(&parts)?;

        let mut outputs = Vec::with_capacity(self.towers.len());
        let mut tower_caches = Vec::with_capacity(self.towers.len());
        for t in &self.towers {
            let (y, c) = t.forward(&self.store, &features)?;
            outputs.push(y);
            tower_caches.push(c);
        }
        let scored = (0..m)
            .map(|i| {
                let y_imp = outputs[0].get(i, 0);
                let y_cli = outputs[1].get(i, 0);
                ScoredCandidate {
                    y_imp,
                    y_cli,
                    pitctr: y_imp * y_cli,
                    y_extra: outputs.get(2).map(|o| o.get(i, 0)),
                }
            })
            .collect();

        let cache = ForwardCache {
            generation: self.store.generation(),
            m,
            n,
            user_ids: req.user_feats.clone(),
            cand_ids: req.candidates.iter().map(|c| c.item_feats.clone()).collect(),
            cross_ids: req.candidates.iter().map(|c| c.cross_feats.clone()).collect(),
            seq_ids: req.sequence.iter().map(|s| s.item_feats.clone()).collect(),
            seq: seq_cache,
            ram: ram_cache,
            towers: tower_caches,
            seq_block,
        };
        Ok((scored, cache))
    }

    /// Scores without retaining a cache.
    pub fn score(&self, req: &Request) -> Result<Vec<ScoredCandidate>> {
        self.forward(req).map(|(s, _)| s)
    }

    /// Scores many requests, fanning out across threads when enabled.
    pub fn score_batch(&self, reqs: &[Request]) -> Result<Vec<Vec<ScoredCandidate>>> {
        par::map(reqs, |r| self.score(r)).into_iter().collect()
    }

    /// Accumulates gradients of every reachable parameter.
    pub fn backward(&mut self, grads: &HeadGrads, cache: &ForwardCache) -> Result<()> {
        if cache.generation != self.store.generation() {
            return Err(Error::Usage("stale forward cache: parameters changed since forward".into()));
        }
        let m = cache.m;
        let heads: Vec<&Vec<f64>> = [Some(&grads.imp), Some(&grads.cli), grads.extra.as_ref()]
            .into_iter()
            .flatten()
            .collect();
        if heads.len() != self.towers.len() || heads.iter().any(|h| h.len() != m) {
            return Err(Error::Usage(format!(
                "expected {} head gradients of length {m}",
                self.towers.len()
            )));
        }

        let width = self.cfg.tower_input_width();
        let mut d_features = Matrix::zeros(m, width);
        for ((tower, tc), g) in self.towers.iter().zip(&cache.towers).zip(heads) {
            let g = Matrix::from_vec(m, 1, g.clone())?;
            d_features.add_assign(&tower.backward(&mut self.store, &g, tc)?)?;
        }

        let d_i = self.cfg.d_item();
        let mut d_can = Matrix::zeros(m, d_i);
        let mut d_seq = Matrix::zeros(cache.n, d_i);
        let mut offset = 0;

        let seq_w = self.cfg.seq_block_width();
        if seq_w > 0 {
            let d_cs = d_features.col_block(offset, seq_w)?;
            offset += seq_w;
            match &cache.seq {
                SeqCache::Absent | SeqCache::Zero => {}
                SeqCache::AvgPool => {
                    let inv = 1.0 / cache.n as f64;
                    let col = d_cs.col_sums();
                    for j in 0..cache.n {
                        for (g, &c) in d_seq.row_mut(j).iter_mut().zip(&col) {
                            *g += c * inv;
                        }
                    }
                }
                SeqCache::Linear(c) => {
                    let p = self.seq_attn.expect("linear cache implies params");
                    let g = self.linear(p).backward(&mut self.store, &d_cs, c)?;
                    d_can.add_assign(&g.e_q)?;
                    d_seq.add_assign(&g.e_k)?;
                    d_seq.add_assign(&g.e_v)?;
                }
                SeqCache::Softmax { cache: c, key_rows } => {
                    let p = self.seq_attn.expect("softmax cache implies params");
                    let g = SoftmaxAttention::new(p).backward(&mut self.store, &d_cs, c)?;
                    d_can.add_assign(&g.e_q)?;
                    for (t, &j) in key_rows.iter().enumerate() {
                        for ((dst, &a), &b) in d_seq.row_mut(j).iter_mut().zip(g.e_k.row(t)).zip(g.e_v.row(t)) {
                            *dst += a + b;
                        }
                    }
                }
            }
        }

        if let Some(p) = self.ram {
            let d_cc = d_features.col_block(offset, self.cfg.attn_dim)?;
            offset += self.cfg.attn_dim;
            let g = match &cache.ram {
                RamCache::Linear(c) => self.linear(p).backward(&mut self.store, &d_cc, c)?,
                RamCache::Softmax(c) => SoftmaxAttention::new(p).backward(&mut self.store, &d_cc, c)?,
                RamCache::Absent => return Err(Error::Usage("forward cache lacks the RAM block".into())),
            };
            d_can.add_assign(&g.e_q)?;
            d_can.add_assign(&g.e_k)?;
            d_can.add_assign(&g.e_v)?;
        }

        let d_u = d_features.col_block(offset, self.cfg.d_user())?;
        offset += self.cfg.d_user();
        let d_cro = d_features.col_block(offset, self.cfg.d_cross())?;

        let user_sum = Matrix::from_vec(1, d_u.cols(), d_u.col_sums())?;
        self.user
            .backward(&mut self.store, std::iter::once(cache.user_ids.as_slice()), &user_sum);
        self.cross
            .backward(&mut self.store, cache.cross_ids.iter().map(|v| v.as_slice()), &d_cro);
        self.item
            .backward(&mut self.store, cache.cand_ids.iter().map(|v| v.as_slice()), &d_can);
        self.item
            .backward(&mut self.store, cache.seq_ids.iter().map(|v| v.as_slice()), &d_seq);
        Ok(())
    }
}
