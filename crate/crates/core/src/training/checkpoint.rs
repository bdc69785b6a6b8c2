//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IFA1"  u64 config_hash  u64 step
//! repeated until EOF:
//!   u32 name_len  name (utf-8)  u64 rows  u64 cols  rows*cols f64
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{IfaModel, ModelConfig};
use crate::numeric::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IFA1";

pub fn write_checkpoint<W: Write>(out: &mut W, model: &IfaModel, step: u64) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&model.config().hash64().to_le_bytes())?;
    out.write_all(&step.to_le_bytes())?;
    for (name, p) in model.params().iter() {
        let len = u32::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        out.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for x in p.value.as_slice() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &IfaModel, step: u64) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, model, step)?;
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads the next `u32` length prefix, or `None` at a clean EOF.
fn read_len<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut b[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::Checkpoint("truncated tensor header".into())),
            k => got += k,
        }
    }
    Ok(Some(u32::from_le_bytes(b)))
}

/// Loads tensor values into `model`, which must have been built from the
/// configuration the checkpoint was written with. Returns the step.
pub fn read_checkpoint<R: Read>(input: &mut R, model: &mut IfaModel) -> Result<u64> {
    let truncated = |e: io::Error| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated checkpoint".into()),
        _ => Error::Io(e),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected \"IFA1\"")));
    }
    let hash = read_u64(input).map_err(truncated)?;
    let expected = model.config().hash64();
    if hash != expected {
        return Err(Error::Checkpoint(format!(
            "config hash {hash:#018x} does not match model config {expected:#018x}"
        )));
    }
    let step = read_u64(input).map_err(truncated)?;
    let mut seen = HashSet::new();
    while let Some(len) = read_len(input)? {
        let mut name = vec![0u8; len as usize];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let rows = read_u64(input).map_err(truncated)? as usize;
        let cols = read_u64(input).map_err(truncated)? as usize;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        if model.params().value(id).shape() != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` is {rows}x{cols}, model expects {:?}",
                model.params().value(id).shape()
            )));
        }
        let mut bytes = vec![0u8; rows * cols * 8];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *model.params_mut().value_mut(id) = Matrix::from_vec(rows, cols, data)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` appears twice")));
        }
    }
    if let Some((missing, _)) = model.params().iter().find(|(n, _)| !seen.contains(*n)) {
        return Err(Error::Checkpoint(format!("tensor `{missing}` missing from checkpoint")));
    }
    model.params_mut().bump_generation();
    Ok(step)
}

/// Builds a model from `cfg` and fills it from the checkpoint at `path`.
pub fn load_checkpoint(path: impl AsRef<Path>, cfg: ModelConfig) -> Result<(IfaModel, u64)> {
    let mut model = IfaModel::new(cfg, 0)?;
    let mut input = BufReader::new(File::open(path)?);
    let step = read_checkpoint(&mut input, &mut model)?;
    Ok((model, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Baseline;

    fn cfg() -> ModelConfig {
        ModelConfig {
            user_vocab: vec![4],
            item_vocab: vec![6, 3],
            cross_vocab: vec![3],
            hidden: vec![4],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_restores_values() {
        let model = IfaModel::new(cfg(), 42).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, 17).unwrap();
        let mut other = IfaModel::new(cfg(), 0).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice(), &mut other).unwrap(), 17);
        for ((na, a), (nb, b)) in model.params().iter().zip(other.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn header_layout() {
        let model = IfaModel::new(cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, 5).unwrap();
        assert_eq!(&buf[..4], b"IFA1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), cfg().hash64());
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 5);
        let floats: usize = model.params().iter().map(|(_, p)| p.value.as_slice().len()).sum();
        let names: usize = model.params().iter().map(|(n, _)| 4 + n.len() + 16).sum();
        assert_eq!(buf.len(), 20 + names + 8 * floats);
    }

    #[test]
    fn mismatched_config_rejected() {
        let model = IfaModel::new(cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, 0).unwrap();
        let mut other = IfaModel::new(cfg().as_baseline(Baseline::Avgpool), 0).unwrap();
        let err = read_checkpoint(&mut buf.as_slice(), &mut other).unwrap_err();
        assert!(err.to_string().contains("config hash"), "{err}");
    }

    #[test]
    fn truncation_and_magic() {
        let model = IfaModel::new(cfg(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, 0).unwrap();
        let mut other = IfaModel::new(cfg(), 0).unwrap();
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &cut[..], &mut other), Err(Error::Checkpoint(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice(), &mut other), Err(Error::Checkpoint(_))));
        let header_only = &buf[..20];
        let err = read_checkpoint(&mut &header_only[..], &mut other).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }
}
