//! Parameter checkpoints: a text tensor dump with a shape manifest.
//!
//! Format (stable):
//! ```text
//! pitlab-checkpoint v1
//! tensor <name> <dim0> [<dim1> ...]
//! <value> <value> ... (numel values on one line)
//! ```

use std::io::{BufRead, Write};

use super::tensor::Tensor;
use crate::{Error, Result};

const HEADER: &str = "pitlab-checkpoint v1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, &Tensor)]) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for (name, t) in tensors {
        write!(w, "tensor {name}")?;
        if t.shape().is_empty() {
            write!(w, " 1")?;
        }
        for d in t.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", vals.join(" "))?;
    }
    Ok(())
}

pub fn read_tensors<R: BufRead>(r: R) -> Result<Vec<(String, Tensor)>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
    if header.trim() != HEADER {
        return Err(Error::Parse(format!("bad checkpoint header: {header:?}")));
    }
    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        if fields.next() != Some("tensor") {
            return Err(Error::Parse(format!("expected tensor line, got {line:?}")));
        }
        let name = fields
            .next()
            .ok_or_else(|| Error::Parse("tensor line missing name".into()))?
            .to_string();
        let shape = fields
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad dim {d:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data_line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing values for {name}")))??;
        let data = data_line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
