//! Forward-pass scaling benchmark for linear attention and the explicit
//! `m×n` oracle.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{dense_kernel_attention_oracle, AttentionParams, KernelFn, LinearAttention, ORACLE_MAX_CELLS};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Linear,
    Dense,
}

impl FromStr for BenchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BenchKind::Linear),
            "dense" => Ok(BenchKind::Dense),
            other => Err(Error::Usage(format!("unknown bench kind `{other}` (expected linear or dense)"))),
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchKind::Linear => "linear",
            BenchKind::Dense => "dense",
        })
    }
}

/// Cells of an `(m, n)` grid.
///
/// Grammar: `s=AXIS` sweeps `m = n`; `m=AXIS;n=AXIS` takes the product.
/// An axis is a single value, a comma list, or `lo..hi*f`, the geometric
/// progression from `lo` by factor `f` up to and including `hi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub cells: Vec<(usize, usize)>,
}

fn parse_axis(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("bad grid axis `{spec}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let values = if let Some((range, factor)) = spec.split_once('*') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let (lo, hi, factor) = (num(lo)?, num(hi)?, num(factor)?);
        if lo == 0 || factor < 2 || hi < lo {
            return Err(bad());
        }
        std::iter::successors(Some(lo), |&v| v.checked_mul(factor))
            .take_while(|&v| v <= hi)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let mut axes = std::collections::BTreeMap::new();
        for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, axis) = part
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("grid part `{part}` is not key=axis")))?;
            axes.insert(key.trim().to_string(), parse_axis(axis.trim())?);
        }
        let keys: Vec<&str> = axes.keys().map(String::as_str).collect();
        let cells = match keys.as_slice() {
            ["s"] => axes["s"].iter().map(|&s| (s, s)).collect(),
            ["m", "n"] => axes["m"]
                .iter()
                .flat_map(|&m| axes["n"].iter().map(move |&n| (m, n)))
                .collect(),
            _ => {
                return Err(Error::Usage(format!(
                    "grid `{spec}` must set either s, or both m and n"
                )))
            }
        };
        Ok(Grid { cells })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Attention width and input width.
    pub d: usize,
    pub warmup: usize,
    pub min_reps: usize,
    /// Repetitions are raised until a cell takes about this long.
    pub target_secs: f64,
    pub max_reps: usize,
    pub kernel: KernelFn,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            d: 32,
            warmup: 2,
            min_reps: 5,
            target_secs: 0.2,
            max_reps: 200,
            kernel: KernelFn::Softplus,
            seed: 3,
        }
    }
}

/// One measured cell; serialized as a bench output record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub m: usize,
    pub n: usize,
    pub kind: BenchKind,
    pub mean_s: f64,
    pub std_s: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub kind: BenchKind,
    pub cells: Vec<CellResult>,
    /// Cells not run, with the reason.
    pub skipped: Vec<(usize, usize, String)>,
}

/// Least-squares slope of `ln y` on `ln x`. Needs two distinct `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (logs.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

impl BenchResult {
    /// Slope of time against `s` over the `m = n` cells.
    pub fn slope_vs_s(&self) -> Option<f64> {
        let pts: Vec<_> = self
            .cells
            .iter()
            .filter(|c| c.m == c.n)
            .map(|c| (c.m as f64, c.mean_s))
            .collect();
        fit_slope(&pts)
    }

    /// Slope of time against `n` over the cells with the given `m`.
    pub fn slope_vs_n(&self, m: usize) -> Option<f64> {
        let pts: Vec<_> = self
            .cells
            .iter()
            .filter(|c| c.m == m)
            .map(|c| (c.n as f64, c.mean_s))
            .collect();
        fit_slope(&pts)
    }

    /// Serialized records, one JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.cells
            .iter()
            .map(|c| serde_json::to_string(c).expect("cell serializes") + "\n")
            .collect()
    }
}

struct Instance {
    store: ParamStore,
    params: AttentionParams,
    e_q: Matrix,
    e_k: Matrix,
    e_v: Matrix,
}

fn instance(m: usize, n: usize, cfg: &BenchConfig) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let params = AttentionParams::new(&mut store, "bench", (cfg.d, cfg.d, cfg.d), cfg.d, &mut rng);
    Instance {
        e_q: Matrix::random_normal(m, cfg.d, 1.0, &mut rng),
        e_k: Matrix::random_normal(n, cfg.d, 1.0, &mut rng),
        e_v: Matrix::random_normal(n, cfg.d, 1.0, &mut rng),
        store,
        params,
    }
}

fn run_once(kind: BenchKind, inst: &Instance, kernel: KernelFn) -> Result<f64> {
    let start = Instant::now();
    let out = match kind {
        BenchKind::Linear => {
            LinearAttention::new(inst.params, kernel)
                .forward(&inst.store, &inst.e_q, &inst.e_k, &inst.e_v)?
                .output
        }
        BenchKind::Dense => {
            dense_kernel_attention_oracle(&inst.store, &inst.e_q, &inst.e_k, &inst.e_v, inst.params, kernel)?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(out);
    Ok(elapsed)
}

/// Times one cell with the calling thread only.
pub fn measure_cell(kind: BenchKind, m: usize, n: usize, cfg: &BenchConfig) -> Result<CellResult> {
    let inst = instance(m, n, cfg);
    par::single_threaded(|| {
        let mut first = f64::INFINITY;
        for _ in 0..cfg.warmup.max(1) {
            first = first.min(run_once(kind, &inst, cfg.kernel)?);
        }
        let wanted = (cfg.target_secs / first.max(1e-9)).ceil() as usize;
        let reps = wanted.clamp(cfg.min_reps, cfg.max_reps.max(cfg.min_reps));
        let times = (0..reps)
            .map(|_| run_once(kind, &inst, cfg.kernel))
            .collect::<Result<Vec<f64>>>()?;
        let mean = times.iter().sum::<f64>() / reps as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1).max(1) as f64;
        Ok(CellResult {
            m,
            n,
            kind,
            mean_s: mean,
            std_s: var.sqrt(),
            reps,
        })
    })
}

/// Runs every cell of `grid`. Dense cells over the oracle's size guard are
/// skipped.
pub fn run_bench(kind: BenchKind, grid: &Grid, cfg: &BenchConfig) -> Result<BenchResult> {
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &(m, n) in &grid.cells {
        if kind == BenchKind::Dense && m.saturating_mul(n) > ORACLE_MAX_CELLS {
            let note = format!("m*n = {} exceeds the dense guard of {ORACLE_MAX_CELLS}", m * n);
            log::warn!("skipping dense cell m={m} n={n}: {note}");
            skipped.push((m, n, note));
            continue;
        }
        let cell = measure_cell(kind, m, n, cfg)?;
        log::info!("{kind} m={m} n={n} mean={:.3e}s reps={}", cell.mean_s, cell.reps);
        cells.push(cell);
    }
    Ok(BenchResult { kind, cells, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_grammar() {
        let g: Grid = "s=256..16384*2".parse().unwrap();
        assert_eq!(g.cells.len(), 7);
        assert_eq!(g.cells[0], (256, 256));
        assert_eq!(g.cells[6], (16384, 16384));
        let g: Grid = "m=1024;n=256..1024*2".parse().unwrap();
        assert_eq!(g.cells, vec![(1024, 256), (1024, 512), (1024, 1024)]);
        let g: Grid = "m=1,2;n=3".parse().unwrap();
        assert_eq!(g.cells, vec![(1, 3), (2, 3)]);
        for bad in ["", "s=0", "x=4", "s=8..4*2", "s=4..8*1", "m=4", "s=a"] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<_> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x * x)).collect();
        assert!((fit_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_slope(&[(1.0, 1.0)]), None);
        assert_eq!(fit_slope(&[(2.0, 1.0), (2.0, 3.0)]), None);
    }

    #[test]
    fn dense_guard_skips() {
        let cfg = BenchConfig {
            d: 2,
            target_secs: 0.0,
            ..BenchConfig::default()
        };
        let grid = Grid {
            cells: vec![(4, 4), (4000, 4000)],
        };
        let r = run_bench(BenchKind::Dense, &grid, &cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.skipped.len(), 1);
        assert!(r.cells[0].reps >= 5);
        let line = r.to_json_lines();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["kind"], "dense");
        for key in ["m", "n", "mean_s", "std_s", "reps"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
