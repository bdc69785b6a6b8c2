//! Synthetic requests with planted preference structure.
//!
//! Every item has a category and an author; every author writes on one
//! topic and has a latent quality. Users prefer a few categories and,
//! independently, a few topics, and carry a scalar profile `p_u`. Click
//! propensity is
//!
//! `σ((w_cat·cat_match + w_topic·topic_match + w_profile·p_u + bias + noise) / temperature)`.
//!
//! The behaviour sequence is drawn from the preferred categories, leaning
//! towards preferred topics inside them. A candidate on a preferred topic
//! but in another category therefore has no same-category history, while
//! its topic is all over the sequence. `p_u` is target-independent and only
//! visible in aggregate: users with high `p_u` pick high-quality authors
//! more often.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, Request, SeqItem};
use crate::numeric::sigmoid;

/// Cross-feature vocabulary: id 0 is reserved, ids `1..=8` are log2 buckets
/// of the user's recent interaction count with the candidate's category.
pub const CROSS_BUCKETS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_requests: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub num_topics: usize,
    pub num_authors: usize,
    /// Candidates per request.
    pub m: usize,
    /// Sequence length per request.
    pub n: usize,
    pub pref_categories: usize,
    pub pref_topics: usize,
    /// Fraction of sequence items drawn uniformly at random.
    pub seq_noise: f64,
    /// Probability that a sequence item in a preferred category is also on
    /// a preferred topic (otherwise its topic is random).
    pub topic_focus: f64,
    pub w_cat: f64,
    pub w_topic: f64,
    pub w_profile: f64,
    pub bias: f64,
    /// Standard deviation of the per-candidate logit noise.
    pub logit_noise: f64,
    pub temperature: f64,
    /// Impressions per request.
    pub impression_budget: usize,
    /// Gumbel scale added to logits before picking the impressed set.
    pub exploration: f64,
    /// How strongly `p_u` tilts author choice towards quality.
    pub profile_tilt: f64,
    /// Window of most recent sequence items behind the user×category count
    /// cross feature; 0 emits no cross features.
    pub cross_window: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_requests: 4000,
            num_users: 5000,
            num_items: 2000,
            num_categories: 16,
            num_topics: 8,
            num_authors: 64,
            m: 64,
            n: 1024,
            pref_categories: 2,
            pref_topics: 2,
            seq_noise: 0.0,
            topic_focus: 0.5,
            w_cat: 1.0,
            w_topic: 2.5,
            w_profile: 1.0,
            bias: -1.5,
            logit_noise: 0.3,
            temperature: 1.0,
            impression_budget: 4,
            exploration: 0.25,
            profile_tilt: 1.0,
            cross_window: 0,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("gen: {msg}")));
        for (name, w) in [
            ("w_cat", self.w_cat),
            ("w_topic", self.w_topic),
            ("w_profile", self.w_profile),
            ("logit_noise", self.logit_noise),
            ("exploration", self.exploration),
            ("profile_tilt", self.profile_tilt),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        for (name, p) in [("seq_noise", self.seq_noise), ("topic_focus", self.topic_focus)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.m < 2 {
            return bad(format!("m must be >= 2, got {}", self.m));
        }
        if self.impression_budget == 0 || self.impression_budget > self.m {
            return bad(format!("impression_budget must be in 1..=m, got {}", self.impression_budget));
        }
        for (name, v) in [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("num_topics", self.num_topics),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.num_authors < self.num_topics {
            return bad("num_authors must be >= num_topics so every topic has an author".into());
        }
        if self.pref_categories == 0 || self.pref_categories > self.num_categories {
            return bad("pref_categories must be in 1..=num_categories".into());
        }
        if self.pref_topics == 0 || self.pref_topics > self.num_topics {
            return bad("pref_topics must be in 1..=num_topics".into());
        }
        Ok(())
    }

    /// Vocabulary sizes `(user, item fields, cross fields)` that fit the
    /// generated ids. Item fields are `[item_id, category, author]`.
    pub fn vocab(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        (
            vec![self.num_users + 1],
            vec![self.num_items + 1, self.num_categories + 1, self.num_authors + 1],
            if self.cross_window > 0 { vec![CROSS_BUCKETS] } else { vec![] },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemLatent {
    /// 1-based category id.
    pub category: u32,
    /// 1-based author id.
    pub author: u32,
    /// 0-based topic of the author.
    pub topic: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserLatent {
    pub pref_categories: Vec<u32>,
    pub pref_topics: Vec<usize>,
    pub profile: f64,
}

/// Ground truth behind one generated request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestLatent {
    pub user: usize,
    /// Noisy propensity logits, one per candidate.
    pub logits: Vec<f64>,
    /// `σ(logit)`: click probability given an impression.
    pub propensity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GenConfig,
    items: Vec<ItemLatent>,
    users: Vec<UserLatent>,
    author_quality: Vec<f64>,
    items_by_category: Vec<Vec<usize>>,
    items_by_author: Vec<Vec<usize>>,
    /// Indexed by `(category - 1) * num_topics + topic`.
    items_by_cat_topic: Vec<Vec<usize>>,
    authors_by_topic: Vec<Vec<usize>>,
    produced: usize,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(cfg: GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let author_quality: Vec<f64> = (0..cfg.num_authors).map(|_| rng.sample(StandardNormal)).collect();
        let items: Vec<ItemLatent> = (0..cfg.num_items)
            .map(|i| {
                let a = rng.random_range(0..cfg.num_authors);
                ItemLatent {
                    category: (i % cfg.num_categories) as u32 + 1,
                    author: a as u32 + 1,
                    topic: a % cfg.num_topics,
                }
            })
            .collect();
        let mut items_by_category = vec![Vec::new(); cfg.num_categories];
        let mut items_by_author = vec![Vec::new(); cfg.num_authors];
        let mut items_by_cat_topic = vec![Vec::new(); cfg.num_categories * cfg.num_topics];
        for (i, it) in items.iter().enumerate() {
            items_by_category[it.category as usize - 1].push(i);
            items_by_author[it.author as usize - 1].push(i);
            items_by_cat_topic[(it.category as usize - 1) * cfg.num_topics + it.topic].push(i);
        }
        let authors_by_topic: Vec<Vec<usize>> = (0..cfg.num_topics)
            .map(|t| (0..cfg.num_authors).filter(|a| a % cfg.num_topics == t && !items_by_author[*a].is_empty()).collect())
            .collect();
        let users = (0..cfg.num_users)
            .map(|_| {
                let pref_categories = rand::seq::index::sample(&mut rng, cfg.num_categories, cfg.pref_categories)
                    .into_iter()
                    .map(|c| c as u32 + 1)
                    .collect();
                let pref_topics = rand::seq::index::sample(&mut rng, cfg.num_topics, cfg.pref_topics).into_vec();
                UserLatent {
                    pref_categories,
                    pref_topics,
                    profile: rng.sample(StandardNormal),
                }
            })
            .collect();
        Ok(Generator {
            cfg,
            items,
            users,
            author_quality,
            items_by_category,
            items_by_author,
            items_by_cat_topic,
            authors_by_topic,
            produced: 0,
            rng,
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn items(&self) -> &[ItemLatent] {
        &self.items
    }

    pub fn users(&self) -> &[UserLatent] {
        &self.users
    }

    pub fn author_quality(&self) -> &[f64] {
        &self.author_quality
    }

    /// All `num_requests` requests of `cfg`.
    pub fn generate(cfg: &GenConfig) -> Result<Vec<Request>> {
        let mut g = Generator::new(cfg.clone())?;
        Ok((0..cfg.num_requests).map(|_| g.next_labeled().0).collect())
    }

    fn random_item(&mut self) -> usize {
        self.rng.random_range(0..self.items.len())
    }

    fn item_in_category(&mut self, c: u32) -> usize {
        match self.items_by_category[c as usize - 1].choose(&mut self.rng) {
            Some(&i) => i,
            None => self.random_item(),
        }
    }

    /// Item on topic `t`; with `tilt != 0`, authors are weighted by
    /// `exp(tilt · quality)`.
    fn item_on_topic(&mut self, t: usize, tilt: f64) -> usize {
        if self.authors_by_topic[t].is_empty() {
            return self.random_item();
        }
        let weights: Vec<f64> = self.authors_by_topic[t]
            .iter()
            .map(|&a| (tilt * self.author_quality[a]).exp())
            .collect();
        let k = self.weighted_index(&weights);
        let author = self.authors_by_topic[t][k];
        *self.items_by_author[author].choose(&mut self.rng).expect("topic authors have items")
    }

    /// Item in category `c` on topic `t`, authors weighted by
    /// `exp(tilt · quality)`.
    fn item_in_category_on_topic(&mut self, c: u32, t: usize, tilt: f64) -> usize {
        let pool = &self.items_by_cat_topic[(c as usize - 1) * self.cfg.num_topics + t];
        if pool.is_empty() {
            return self.item_in_category(c);
        }
        let weights: Vec<f64> = pool
            .iter()
            .map(|&i| (tilt * self.author_quality[self.items[i].author as usize - 1]).exp())
            .collect();
        let pool = pool.clone();
        pool[self.weighted_index(&weights)]
    }

    fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (k, &w) in weights.iter().enumerate() {
            if u < w {
                return k;
            }
            u -= w;
        }
        weights.len() - 1
    }

    fn item_feats(&self, i: usize) -> Vec<u32> {
        let it = &self.items[i];
        vec![i as u32 + 1, it.category, it.author]
    }

    /// Next request together with its ground truth.
    pub fn next_labeled(&mut self) -> (Request, RequestLatent) {
        let cfg = self.cfg.clone();
        let u = self.produced % cfg.num_users;
        self.produced += 1;
        let user = self.users[u].clone();
        let tilt = cfg.profile_tilt * user.profile;

        let mut sequence = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let i = if self.rng.random::<f64>() < cfg.seq_noise {
                self.random_item()
            } else {
                let c = *user.pref_categories.choose(&mut self.rng).unwrap();
                if self.rng.random::<f64>() < cfg.topic_focus {
                    let t = *user.pref_topics.choose(&mut self.rng).unwrap();
                    self.item_in_category_on_topic(c, t, tilt)
                } else {
                    self.item_in_category(c)
                }
            };
            sequence.push(SeqItem {
                item_feats: self.item_feats(i),
                category: self.items[i].category,
            });
        }

        let recent = &sequence[cfg.n.saturating_sub(cfg.cross_window)..];
        let mut candidates = Vec::with_capacity(cfg.m);
        let mut logits = Vec::with_capacity(cfg.m);
        for _ in 0..cfg.m {
            let i = match self.rng.random_range(0..3) {
                0 => self.random_item(),
                1 => {
                    let c = *user.pref_categories.choose(&mut self.rng).unwrap();
                    self.item_in_category(c)
                }
                _ => {
                    let t = *user.pref_topics.choose(&mut self.rng).unwrap();
                    self.item_on_topic(t, 0.0)
                }
            };
            let it = self.items[i];
            let cat_match = user.pref_categories.contains(&it.category) as u8 as f64;
            let topic_match = user.pref_topics.contains(&it.topic) as u8 as f64;
            let noise: f64 = self.rng.sample(StandardNormal);
            let z = cfg.w_cat * cat_match
                + cfg.w_topic * topic_match
                + cfg.w_profile * user.profile
                + cfg.bias
                + cfg.logit_noise * noise;
            logits.push(z / cfg.temperature);
            let cross_feats = if cfg.cross_window > 0 {
                vec![cross_bucket(recent.iter().filter(|s| s.category == it.category).count())]
            } else {
                vec![]
            };
            candidates.push(Candidate {
                item_feats: self.item_feats(i),
                cross_feats,
                category: it.category,
                label_imp: 0,
                label_cli: 0,
                label_extra: None,
            });
        }

        for idx in sample_impressions(&logits, cfg.impression_budget, cfg.exploration, &mut self.rng) {
            candidates[idx].label_imp = 1;
        }
        let propensity: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        for (c, &p) in candidates.iter_mut().zip(&propensity) {
            // One draw per candidate keeps the stream aligned across budgets.
            let clicked = self.rng.random::<f64>() < p;
            c.label_cli = (c.label_imp == 1 && clicked) as u8;
        }

        let req = Request {
            user_feats: vec![u as u32 + 1],
            candidates,
            sequence,
        };
        (req, RequestLatent { user: u, logits, propensity })
    }
}

/// `0 → 1`, `1 → 2`, `2..=3 → 3`, `4..=7 → 4`, … capped at `CROSS_BUCKETS - 1`.
pub fn cross_bucket(count: usize) -> u32 {
    let b = if count == 0 { 1 } else { 2 + count.ilog2() as usize };
    b.min(CROSS_BUCKETS - 1) as u32
}

/// Indices of the `budget` largest `logit + exploration · Gumbel` scores.
pub fn sample_impressions<R: Rng + ?Sized>(logits: &[f64], budget: usize, exploration: f64, rng: &mut R) -> Vec<usize> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let scores: Vec<f64> = logits.iter().map(|&z| z + exploration * gumbel.sample(rng)).collect();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Monte Carlo estimate of each candidate's impression probability.
pub fn impression_probabilities<R: Rng + ?Sized>(
    logits: &[f64],
    budget: usize,
    exploration: f64,
    samples: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut hits = vec![0usize; logits.len()];
    for _ in 0..samples {
        for i in sample_impressions(logits, budget, exploration, rng) {
            hits[i] += 1;
        }
    }
    hits.into_iter().map(|h| h as f64 / samples.max(1) as f64).collect()
}
