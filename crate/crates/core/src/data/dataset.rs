//! Line-delimited JSON datasets: one [`Request`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Request;

pub fn write_dataset(path: impl AsRef<Path>, requests: &[Request]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_requests(&mut out, requests)?;
    out.flush()?;
    Ok(())
}

pub fn write_requests<W: Write>(out: &mut W, requests: &[Request]) -> Result<()> {
    for r in requests {
        serde_json::to_writer(&mut *out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads and validates every line; blank lines are skipped.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Request>> {
    let path = path.as_ref();
    read_requests(BufReader::new(File::open(path)?), path)
}

/// As [`read_dataset`], with `path` used only in error messages.
pub fn read_requests<R: BufRead>(input: R, path: &Path) -> Result<Vec<Request>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let req: Request = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        req.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(req);
    }
    Ok(out)
}
