//! Property suites behind `ifa check`: oracle equivalence, normalization,
//! finite-difference gradients, permutation symmetry, AUC against pairwise
//! enumeration, and activation stability in the sequence length.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    dense_kernel_attention_oracle, AttentionParams, KernelFn, KeySelection, LinearAttention, SoftmaxAttention,
};
use crate::data::{auc, pairwise_auc, GenConfig, Generator};
use crate::error::Result;
use crate::model::{Baseline, Candidate, FieldEmbedder, IfaModel, ModelConfig, Request, SeqItem};
use crate::numeric::{max_rel_error, Matrix, Mlp, ParamId, ParamStore};
use crate::training::esmm_loss;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for gradient relative errors. Central differences at
/// `h = 1e-5` on O(1) losses carry roughly 1e-11 of roundoff, so gradients
/// below this floor are held to an absolute 1e-9 instead.
pub const GRAD_FLOOR: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;
pub const EQUIV_TOL: f64 = 1e-10;
/// Denominator floor for elementwise output comparisons.
pub const EQUIV_FLOOR: f64 = 1e-300;
pub const NORM_TOL: f64 = 1e-12;

/// Deliberate faults for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the `D⁻¹` row normalization from linear attention.
    SkipNorm,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "skip-norm" | "skip_norm" => Ok(Fault::SkipNorm),
            other => Err(format!("unknown fault `{other}` (expected skip-norm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error, in the suite's own metric.
    pub max_error: f64,
    pub tolerance: f64,
    pub note: String,
}

impl SuiteResult {
    fn below(name: &'static str, cases: usize, max_error: f64, tolerance: f64, note: impl Into<String>) -> Self {
        SuiteResult {
            name,
            passed: max_error <= tolerance,
            cases,
            max_error,
            tolerance,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:<6} {:>6} {:>12} {:>10}  note", "suite", "result", "cases", "max_error", "tolerance")?;
        for s in &self.suites {
            writeln!(
                f,
                "{:<14} {:<6} {:>6} {:>12.3e} {:>10.1e}  {}",
                s.name,
                if s.passed { "PASS" } else { "FAIL" },
                s.cases,
                s.max_error,
                s.tolerance,
                s.note
            )?;
        }
        Ok(())
    }
}

/// Runs every suite. With a fault injected the affected suites must fail.
pub fn run_all(fault: Option<Fault>, seed: u64) -> Result<CheckReport> {
    Ok(CheckReport {
        suites: vec![
            equivalence_suite(1000, seed, fault)?,
            normalization_suite(100, seed, fault)?,
            gradient_suite(seed)?,
            permutation_suite(seed)?,
            auc_suite(500, seed),
            stability_suite(seed, fault)?,
        ],
    })
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::random_normal(rows, cols, 1.0, rng)
}

fn linear(params: AttentionParams, kernel: KernelFn, fault: Option<Fault>) -> LinearAttention {
    LinearAttention {
        params,
        kernel,
        normalize: fault != Some(Fault::SkipNorm),
    }
}

/// Linear attention against the explicit-weight oracle on random instances
/// with `m, n ≤ 64`, `d ≤ 16`, alternating kernels.
pub fn equivalence_suite(trials: usize, seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let kernel = if t % 2 == 0 { KernelFn::Softplus } else { KernelFn::ReluEps };
        let (m, n) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let d = rng.random_range(1..=16);
        let (dq, dk, dv) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "a", (dq, dk, dv), d, &mut rng);
        let (eq, ek, ev) = (normal(m, dq, &mut rng), normal(n, dk, &mut rng), normal(n, dv, &mut rng));
        let fast = linear(p, kernel, fault).forward(&store, &eq, &ek, &ev)?.output;
        let slow = dense_kernel_attention_oracle(&store, &eq, &ek, &ev, p, kernel)?;
        worst = worst.max(max_rel_error(&fast, &slow, EQUIV_FLOOR));
    }
    Ok(SuiteResult::below(
        "equivalence",
        trials,
        worst,
        EQUIV_TOL,
        "linear vs explicit kernel attention, elementwise relative",
    ))
}

/// With all-ones values every output entry must be 1.
pub fn normalization_suite(trials: usize, seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f726d);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let kernel = if t % 2 == 0 { KernelFn::Softplus } else { KernelFn::ReluEps };
        let (m, n, d) = (rng.random_range(1..=64), rng.random_range(1..=64), rng.random_range(1..=16));
        let din = rng.random_range(1..=16);
        let mut store = ParamStore::new();
        let p = AttentionParams::from_matrices(
            &mut store,
            "a",
            normal(din, d, &mut rng),
            normal(din, d, &mut rng),
            Matrix::filled(1, d, 1.0),
        )?;
        let out = linear(p, kernel, fault)
            .forward(&store, &normal(m, din, &mut rng), &normal(n, din, &mut rng), &Matrix::filled(n, 1, 1.0))?
            .output;
        worst = worst.max(out.as_slice().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max));
    }
    Ok(SuiteResult::below("normalization", trials, worst, NORM_TOL, "max |E - 1| with V = 1"))
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central differences of `loss` over the given store coordinates.
fn fd_store(
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(coords.len());
    for &(id, k) in coords {
        let orig = store.value(id).as_slice()[k];
        store.value_mut(id).as_mut_slice()[k] = orig + FD_STEP;
        let up = loss(store)?;
        store.value_mut(id).as_mut_slice()[k] = orig - FD_STEP;
        let down = loss(store)?;
        store.value_mut(id).as_mut_slice()[k] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// Central differences of `loss` over every entry of `x`.
fn fd_matrix(x: &Matrix, mut loss: impl FnMut(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + FD_STEP;
        let up = loss(&probe)?;
        probe.as_mut_slice()[k] = orig - FD_STEP;
        let down = loss(&probe)?;
        probe.as_mut_slice()[k] = orig;
        g.as_mut_slice()[k] = (up - down) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn all_coords(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .flat_map(|id| (0..store.value(id).as_slice().len()).map(move |k| (id, k)))
        .collect()
}

fn worst_store(store: &ParamStore, coords: &[(ParamId, usize)], numeric: &[f64]) -> f64 {
    coords
        .iter()
        .zip(numeric)
        .map(|(&(id, k), &n)| grad_rel_error(store.grad(id).as_slice()[k], n))
        .fold(0.0, f64::max)
}

fn worst_matrix(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| grad_rel_error(a, n))
        .fold(0.0, f64::max)
}

fn frob(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn randomize(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        let (r, c) = p.value.shape();
        p.value = Matrix::random_normal(r, c, std, rng);
    }
}

/// MLP with a random cotangent on its output.
pub fn grad_mlp(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "t", 5, &[4, 3], rng);
    randomize(&mut store, 0.7, rng);
    let x = normal(6, 5, rng);
    let c = normal(6, 1, rng);
    let (_, cache) = mlp.forward(&store, &x)?;
    let dx = mlp.backward(&mut store, &c, &cache)?;
    let coords = all_coords(&store);
    let num = fd_store(&mut store, &coords, |s| Ok(frob(&mlp.forward(s, &x)?.0, &c)))?;
    let num_x = fd_matrix(&x, |xp| Ok(frob(&mlp.forward(&store, xp)?.0, &c)))?;
    Ok(worst_store(&store, &coords, &num).max(worst_matrix(&dx, &num_x)))
}

/// Linear attention with a random cotangent, all parameters and inputs.
pub fn grad_linear(rng: &mut ChaCha8Rng, kernel: KernelFn, normalize: bool) -> Result<f64> {
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "a", (3, 4, 2), 3, rng);
    let att = LinearAttention { params: p, kernel, normalize };
    let (eq, ek, ev) = (normal(2, 3, rng), normal(3, 4, rng), normal(3, 2, rng));
    let c = normal(2, 3, rng);
    let fwd = att.forward(&store, &eq, &ek, &ev)?;
    let g = att.backward(&mut store, &c, &fwd.cache)?;
    let coords = all_coords(&store);
    let num = fd_store(&mut store, &coords, |s| Ok(frob(&att.forward(s, &eq, &ek, &ev)?.output, &c)))?;
    let mut worst = worst_store(&store, &coords, &num);
    worst = worst.max(worst_matrix(&g.e_q, &fd_matrix(&eq, |x| Ok(frob(&att.forward(&store, x, &ek, &ev)?.output, &c)))?));
    worst = worst.max(worst_matrix(&g.e_k, &fd_matrix(&ek, |x| Ok(frob(&att.forward(&store, &eq, x, &ev)?.output, &c)))?));
    worst = worst.max(worst_matrix(&g.e_v, &fd_matrix(&ev, |x| Ok(frob(&att.forward(&store, &eq, &ek, x)?.output, &c)))?));
    Ok(worst)
}

/// Softmax attention with per-query key subsets, one of them empty.
pub fn grad_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "s", (3, 3, 2), 4, rng);
    let att = SoftmaxAttention::new(p);
    let sets = vec![vec![0, 2], vec![], vec![1, 2, 3]];
    let (eq, ek, ev) = (normal(3, 3, rng), normal(4, 3, rng), normal(4, 2, rng));
    let c = normal(3, 4, rng);
    let run = |s: &ParamStore, q: &Matrix, k: &Matrix, v: &Matrix| att.forward(s, q, k, v, KeySelection::PerQuery(&sets));
    let fwd = run(&store, &eq, &ek, &ev)?;
    let g = att.backward(&mut store, &c, &fwd.cache)?;
    let coords = all_coords(&store);
    let num = fd_store(&mut store, &coords, |s| Ok(frob(&run(s, &eq, &ek, &ev)?.output, &c)))?;
    let mut worst = worst_store(&store, &coords, &num);
    worst = worst.max(worst_matrix(&g.e_q, &fd_matrix(&eq, |x| Ok(frob(&run(&store, x, &ek, &ev)?.output, &c)))?));
    worst = worst.max(worst_matrix(&g.e_k, &fd_matrix(&ek, |x| Ok(frob(&run(&store, &eq, x, &ev)?.output, &c)))?));
    worst = worst.max(worst_matrix(&g.e_v, &fd_matrix(&ev, |x| Ok(frob(&run(&store, &eq, &ek, x)?.output, &c)))?));
    Ok(worst)
}

/// Embedding lookup with repeated ids, so scatter-add is exercised.
pub fn grad_embedding(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut store = ParamStore::new();
    let emb = FieldEmbedder::new(&mut store, "x", &[5, 3], 2, rng);
    let rows: Vec<Vec<u32>> = vec![vec![1, 2], vec![4, 2], vec![1, 0]];
    let c = normal(3, 4, rng);
    emb.backward(&mut store, rows.iter().map(|r| r.as_slice()), &c);
    let coords = all_coords(&store);
    let num = fd_store(&mut store, &coords, |s| Ok(frob(&emb.lookup(s, rows.iter().map(|r| r.as_slice())), &c)))?;
    Ok(worst_store(&store, &coords, &num))
}

/// Loss gradients with respect to the tower outputs, through `y_imp · y_cli`.
pub fn grad_esmm(rng: &mut ChaCha8Rng) -> Result<f64> {
    use crate::model::ScoredCandidate;
    let m = 6;
    let labels: Vec<Candidate> = (0..m)
        .map(|i| {
            let imp = (i % 2) as u8;
            Candidate {
                item_feats: vec![1],
                cross_feats: vec![],
                category: 1,
                label_imp: imp,
                label_cli: imp * ((i / 2) % 2) as u8,
                label_extra: Some(imp * (i % 3 == 1) as u8),
            }
        })
        .collect();
    let y: Vec<[f64; 3]> = (0..m)
        .map(|_| [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)])
        .collect();
    let scored = |y: &[[f64; 3]]| -> Vec<ScoredCandidate> {
        y.iter()
            .map(|v| ScoredCandidate {
                y_imp: v[0],
                y_cli: v[1],
                pitctr: v[0] * v[1],
                y_extra: Some(v[2]),
            })
            .collect()
    };
    let lambda = 0.7;
    let (_, g) = esmm_loss(&scored(&y), &labels, lambda)?;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for (t, analytic) in [g.imp[i], g.cli[i], g.extra.as_ref().unwrap()[i]].into_iter().enumerate() {
            let mut up = y.clone();
            up[i][t] += FD_STEP;
            let mut down = y.clone();
            down[i][t] -= FD_STEP;
            let num = (esmm_loss(&scored(&up), &labels, lambda)?.0.total - esmm_loss(&scored(&down), &labels, lambda)?.0.total)
                / (2.0 * FD_STEP);
            worst = worst.max(grad_rel_error(analytic, num));
        }
    }
    Ok(worst)
}

/// Small model configuration used by the model-level checks.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        user_vocab: vec![4],
        item_vocab: vec![12, 4],
        cross_vocab: vec![3],
        user_dim: 2,
        item_dim: 2,
        cross_dim: 2,
        attn_dim: 3,
        hidden: vec![5],
        k: 2,
        ..ModelConfig::default()
    }
}

/// Three candidates and a five-item sequence; labels include a click.
pub fn toy_request() -> Request {
    let cand = |item: u32, cat: u32, imp: u8, cli: u8| Candidate {
        item_feats: vec![item, cat],
        cross_feats: vec![1 + item % 2],
        category: cat,
        label_imp: imp,
        label_cli: cli,
        label_extra: Some(0),
    };
    Request {
        user_feats: vec![2],
        candidates: vec![cand(1, 1, 1, 1), cand(2, 2, 1, 0), cand(3, 1, 0, 0)],
        sequence: (0..5u32)
            .map(|j| SeqItem {
                item_feats: vec![4 + j, 1 + j % 3],
                category: 1 + j % 3,
            })
            .collect(),
    }
}

/// Named model configurations covering every forward path.
pub fn model_variants() -> Vec<(&'static str, ModelConfig)> {
    let base = toy_model_config();
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("ifa", base.clone()),
        ("ifa_relu_eps", with(&|c| c.kernel = KernelFn::ReluEps)),
        ("ifa_unnormalized", with(&|c| c.normalize = false)),
        ("ifa_ram_softmax", with(&|c| c.ram_softmax = true)),
        ("ifa_extra_head", with(&|c| c.extra_head = true)),
        ("ifa-ram", with(&|c| c.use_ram = false)),
        ("ifa-fsm-ram", with(&|c| {
            c.use_ram = false;
            c.use_fsm = false;
        })),
        ("avgpool", base.as_baseline(Baseline::Avgpool)),
        ("din", base.as_baseline(Baseline::Din)),
        ("sim_hard", base.as_baseline(Baseline::SimHard)),
    ]
}

/// End-to-end loss gradient of a toy model at `samples` coordinates with
/// nonzero analytic gradient, plus the same number with zero gradient
/// (whose numeric gradient must vanish too).
pub fn grad_model(cfg: ModelConfig, samples: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let lambda = 1.0;
    let mut model = IfaModel::new(cfg, rng.random())?;
    randomize(model.params_mut(), 0.5, rng);
    let req = toy_request();
    let (scored, cache) = model.forward(&req)?;
    let (_, g) = esmm_loss(&scored, &req.candidates, lambda)?;
    model.backward(&g, &cache)?;

    let all = all_coords(model.params());
    let (nonzero, zero): (Vec<_>, Vec<_>) = all
        .into_iter()
        .partition(|&(id, k)| model.params().grad(id).as_slice()[k] != 0.0);
    let pick = |pool: &[(ParamId, usize)], rng: &mut ChaCha8Rng| -> Vec<(ParamId, usize)> {
        if pool.is_empty() {
            return vec![];
        }
        (0..samples).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    };
    let mut coords = pick(&nonzero, rng);
    coords.extend(pick(&zero, rng));

    let mut probe = model.clone();
    let num = {
        let store = probe.params_mut();
        let mut staged = store.clone();
        let template = model.clone();
        fd_store(&mut staged, &coords, |s| {
            let mut m = template.clone();
            *m.params_mut() = s.clone();
            let scored = m.score(&req)?;
            Ok(esmm_loss(&scored, &req.candidates, lambda)?.0.total)
        })?
    };
    Ok(worst_store(model.params(), &coords, &num))
}

/// Every backward against central finite differences.
pub fn gradient_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67726164);
    let mut parts: Vec<(String, f64)> = vec![
        ("mlp".into(), grad_mlp(&mut rng)?),
        ("linear_softplus".into(), grad_linear(&mut rng, KernelFn::Softplus, true)?),
        ("linear_relu_eps".into(), grad_linear(&mut rng, KernelFn::ReluEps, true)?),
        ("linear_unnormalized".into(), grad_linear(&mut rng, KernelFn::Softplus, false)?),
        ("softmax".into(), grad_softmax(&mut rng)?),
        ("embedding".into(), grad_embedding(&mut rng)?),
        ("esmm".into(), grad_esmm(&mut rng)?),
    ];
    for (name, cfg) in model_variants() {
        parts.push((format!("model:{name}"), grad_model(cfg, 20, &mut rng)?));
    }
    let (worst_name, worst) = parts
        .iter()
        .fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.as_str(), *e) } else { acc });
    Ok(SuiteResult::below(
        "gradient",
        parts.len(),
        worst,
        GRAD_TOL,
        format!("central differences h={FD_STEP:e}; worst {worst_name}"),
    ))
}

fn permute_rows(x: &Matrix, perm: &[usize]) -> Matrix {
    x.select_rows(perm)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Key/value permutation invariance and query permutation equivariance of
/// attention; candidate equivariance and sequence invariance of the model.
pub fn permutation_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7065726d);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for t in 0..50 {
        let kernel = if t % 2 == 0 { KernelFn::Softplus } else { KernelFn::ReluEps };
        let (m, n, din, d) = (rng.random_range(1..=16), rng.random_range(1..=32), 4, 3);
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "a", (din, din, din), d, &mut rng);
        let att = LinearAttention::new(p, kernel);
        let (eq, ek, ev) = (normal(m, din, &mut rng), normal(n, din, &mut rng), normal(n, din, &mut rng));
        let base = att.forward(&store, &eq, &ek, &ev)?.output;
        let kp = shuffled(n, &mut rng);
        let keyed = att.forward(&store, &eq, &permute_rows(&ek, &kp), &permute_rows(&ev, &kp))?.output;
        worst = worst.max(max_rel_error(&keyed, &base, 1e-12));
        let qp = shuffled(m, &mut rng);
        let queried = att.forward(&store, &permute_rows(&eq, &qp), &ek, &ev)?.output;
        worst = worst.max(max_rel_error(&queried, &permute_rows(&base, &qp), 1e-12));
        cases += 2;
    }
    for (_, cfg) in model_variants() {
        let model = IfaModel::new(cfg.clone(), rng.random())?;
        let req = toy_request();
        let base = model.score(&req)?;
        let cp = shuffled(req.m(), &mut rng);
        let mut by_cand = req.clone();
        by_cand.candidates = cp.iter().map(|&i| req.candidates[i].clone()).collect();
        for (k, s) in model.score(&by_cand)?.iter().enumerate() {
            let r = &base[cp[k]];
            worst = worst.max(((s.pitctr - r.pitctr) / r.pitctr).abs());
            worst = worst.max(((s.y_imp - r.y_imp) / r.y_imp).abs());
        }
        cases += 1;
        // Sequence order only matters to the recency-based baselines.
        if !matches!(cfg.baseline, Baseline::Din | Baseline::SimHard) {
            let mut by_seq = req.clone();
            by_seq.sequence.reverse();
            for (s, r) in model.score(&by_seq)?.iter().zip(&base) {
                worst = worst.max(((s.pitctr - r.pitctr) / r.pitctr).abs());
            }
            cases += 1;
        }
    }
    Ok(SuiteResult::below(
        "permutation",
        cases,
        worst,
        1e-10,
        "attention key/query permutations, model candidate/sequence permutations",
    ))
}

/// Rank-based AUC must equal pairwise enumeration exactly, ties included.
pub fn auc_suite(trials: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x617563);
    let mut mismatches = 0usize;
    for _ in 0..trials {
        let len = rng.random_range(2..=60);
        // Few distinct values so ties are common.
        let levels = rng.random_range(1..=8);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        if auc(&scores, &labels).map(f64::to_bits) != pairwise_auc(&scores, &labels).map(f64::to_bits) {
            mismatches += 1;
        }
    }
    SuiteResult::below("auc", trials, mismatches as f64, 0.0, "mismatching instances vs pairwise enumeration")
}

/// Mean `|F_c-s|` at each sequence length for a freshly initialized model.
pub fn seq_block_magnitude(normalize: bool, lengths: &[usize], seed: u64) -> Result<Vec<f64>> {
    let gen_base = GenConfig {
        num_requests: 2,
        seed,
        ..GenConfig::default()
    };
    let (u, i, c) = gen_base.vocab();
    let cfg = ModelConfig {
        user_vocab: u,
        item_vocab: i,
        cross_vocab: c,
        normalize,
        ..ModelConfig::default()
    };
    let model = IfaModel::new(cfg, seed)?;
    lengths
        .iter()
        .map(|&n| {
            let reqs = Generator::generate(&GenConfig { n, ..gen_base.clone() })?;
            let mut total = 0.0;
            for r in &reqs {
                let (_, cache) = model.forward(r)?;
                total += cache.seq_block().expect("full model has a sequence block").mean_abs();
            }
            Ok(total / reqs.len() as f64)
        })
        .collect()
}

/// Unnormalized activations grow with `n`; normalized ones stay flat.
pub fn stability_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let raw = seq_block_magnitude(false, &[64, 4096], seed)?;
    let normed = seq_block_magnitude(fault != Some(Fault::SkipNorm), &[64, 4096], seed)?;
    let raw_ratio = raw[1] / raw[0];
    let norm_ratio = normed[1] / normed[0];
    let spread = norm_ratio.max(1.0 / norm_ratio);
    Ok(SuiteResult {
        name: "stability",
        passed: raw_ratio > 10.0 && spread <= 2.0,
        cases: 2,
        max_error: spread,
        tolerance: 2.0,
        note: format!("mean|F_c-s| n=4096 / n=64: unnormalized {raw_ratio:.1} (> 10), normalized {norm_ratio:.3}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_parses() {
        assert_eq!("skip-norm".parse::<Fault>(), Ok(Fault::SkipNorm));
        assert!("nope".parse::<Fault>().is_err());
    }

    #[test]
    fn skip_norm_breaks_equivalence() {
        assert!(equivalence_suite(20, 1, None).unwrap().passed);
        assert!(!equivalence_suite(20, 1, Some(Fault::SkipNorm)).unwrap().passed);
        assert!(!normalization_suite(10, 1, Some(Fault::SkipNorm)).unwrap().passed);
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(grad_rel_error(0.0, 0.0), 0.0);
        assert_eq!(grad_rel_error(2.0, 1.0), 0.5);
        assert_eq!(grad_rel_error(1e-9, 0.0), 1e-5);
    }
}
