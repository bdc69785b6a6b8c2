use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamId, ParamStore};

/// Trainable lookup table; id 0 is the padding/unknown row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub vocab: usize,
    pub dim: usize,
    pub table: ParamId,
}

impl EmbeddingTable {
    /// Uniform init in `[-0.01, 0.01)`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let table = store.add(name.to_string(), Matrix::random_uniform(vocab, dim, -0.01, 0.01, rng));
        EmbeddingTable { vocab, dim, table }
    }
}

/// Several categorical fields embedded and concatenated per row.
#[derive(Debug, Clone)]
pub struct FieldEmbedder {
    name: &'static str,
    tables: Vec<EmbeddingTable>,
}

impl FieldEmbedder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &'static str, vocab: &[usize], dim: usize, rng: &mut R) -> Self {
        let tables = vocab
            .iter()
            .enumerate()
            .map(|(f, &v)| EmbeddingTable::new(store, &format!("emb.{name}{f}"), v, dim, rng))
            .collect();
        FieldEmbedder { name, tables }
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub fn width(&self) -> usize {
        self.tables.iter().map(|t| t.dim).sum()
    }

    /// Checks one row of ids; `what` names the row for error messages.
    pub fn check_ids(&self, ids: &[u32], what: &dyn Fn() -> String) -> Result<()> {
        if ids.len() != self.tables.len() {
            return Err(Error::data(
                what(),
                format!("expected {} {} feature ids, got {}", self.tables.len(), self.name, ids.len()),
            ));
        }
        for (f, (&id, t)) in ids.iter().zip(&self.tables).enumerate() {
            if id as usize >= t.vocab {
                return Err(Error::data(
                    format!("{}[{f}]", what()),
                    format!("id {id} out of range for vocab {}", t.vocab),
                ));
            }
        }
        Ok(())
    }

    /// One output row per id row: the concatenation of per-field embeddings.
    /// Ids must have been checked.
    pub fn lookup<'a>(&self, store: &ParamStore, rows: impl ExactSizeIterator<Item = &'a [u32]>) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), self.width());
        for (r, ids) in rows.enumerate() {
            let dst = out.row_mut(r);
            let mut off = 0;
            for (&id, t) in ids.iter().zip(&self.tables) {
                dst[off..off + t.dim].copy_from_slice(store.value(t.table).row(id as usize));
                off += t.dim;
            }
        }
        out
    }

    /// Scatter-adds `grad` rows into the rows of the tables they came from.
    pub fn backward<'a>(&self, store: &mut ParamStore, rows: impl Iterator<Item = &'a [u32]>, grad: &Matrix) {
        for (r, ids) in rows.enumerate() {
            let src = grad.row(r);
            let mut off = 0;
            for (&id, t) in ids.iter().zip(&self.tables) {
                let dst = store.grad_mut(t.table).row_mut(id as usize);
                for (d, &g) in dst.iter_mut().zip(&src[off..off + t.dim]) {
                    *d += g;
                }
                off += t.dim;
            }
        }
    }
}
