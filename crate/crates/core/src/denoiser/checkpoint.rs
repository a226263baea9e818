//! Checkpoint files: a text header followed by raw little-endian `f64`s.
//!
//! ```text
//! HANDLAYOUT-CKPT 1
//! grid 32
//! ...
//! params 57845
//! end
//! <params × 8 bytes>
//! ```

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Conditioning, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "HANDLAYOUT-CKPT 1";

pub fn write_checkpoint<W: Write>(params: &DenoiserParams, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (k, v) in params.config().echo() {
        writeln!(w, "{k} {v}")?;
    }
    writeln!(w, "params {}", params.len())?;
    writeln!(w, "end")?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<DenoiserParams> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut r)? != CHECKPOINT_MAGIC {
        return Err(bad("missing magic header"));
    }
    let mut cfg = DenoiserConfig::default();
    let mut count = None;
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let (key, value) = l.split_once(' ').ok_or_else(|| bad(format!("bad header line {l:?}")))?;
        let num = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| bad(format!("bad value for {key}: {value:?}")))
        };
        match key {
            "grid" => cfg.grid = num()?,
            "conv1_channels" => cfg.conv1_channels = num()?,
            "conv2_channels" => cfg.conv2_channels = num()?,
            "cond_dim" => cfg.cond_dim = num()?,
            "time_dim" => cfg.time_dim = num()?,
            "hidden" => cfg.hidden = num()?,
            "depth" => cfg.depth = num()?,
            "conditioning" => cfg.conditioning = value.parse::<Conditioning>()?,
            "params" => count = Some(num()?),
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("header lacks a parameter count"))?;
    if count != cfg.param_count() {
        return Err(bad(format!(
            "header declares {count} parameters but the architecture has {}",
            cfg.param_count()
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != count * 8 {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenoiserParams::from_values(cfg, values)
}

pub fn save_checkpoint(params: &DenoiserParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(params.len() * 8 + 256);
    write_checkpoint(params, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes[..])
}
