//! Portable flat checkpoint format.
//!
//! Layout (all integers little-endian u64, floats little-endian f64):
//!
//! ```text
//! magic "MSSM1" | count | count x entry
//! entry: name_len | name bytes (utf-8) | ndim | ndim x dim | payload
//! ```
//!
//! Entries are the model's trainable tensors in [`Model::param_specs`]
//! order followed by the batch-norm running statistics, so a loaded model
//! reproduces forward outputs bit for bit (0 ulp) in both modes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::har_pipeline::Model;

pub const MAGIC: &[u8; 5] = b"MSSM1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse { line: 0, msg: "checkpoint truncated".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(8 * n)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn entries(model: &Model) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    let params = model.params();
    let mut k = 0;
    for (name, shape) in model.param_specs() {
        let n: usize = shape.iter().product();
        out.push((name, shape, params[k..k + n].to_vec()));
        k += n;
    }
    out.push((
        "conv.running_mean".to_string(),
        vec![model.cfg.d_model],
        model.conv.running_mean.clone(),
    ));
    out.push((
        "conv.running_var".to_string(),
        vec![model.cfg.d_model],
        model.conv.running_var.clone(),
    ));
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let entries = entries(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, shape, data) in &entries {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Load a checkpoint into a model of the same architecture; every entry
/// must match by name and shape.
pub fn load_checkpoint(model: &mut Model, path: &Path) -> Result<()> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(Error::Parse { line: 0, msg: "bad checkpoint magic (want MSSM1)".into() });
    }
    let count = r.u64()? as usize;
    let expected = entries(model);
    if count != expected.len() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("checkpoint has {count} entries, model wants {}", expected.len()),
        });
    }
    let mut params = model.params();
    let mut k = 0;
    let mut running_mean = model.conv.running_mean.clone();
    let mut running_var = model.conv.running_var.clone();
    for (name, shape, _) in &expected {
        let name_len = r.u64()? as usize;
        let got_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse { line: 0, msg: "non-utf8 entry name".into() })?
            .to_string();
        let ndim = r.u64()? as usize;
        let mut got_shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            got_shape.push(r.u64()? as usize);
        }
        if got_name != *name || got_shape != *shape {
            return Err(Error::Parse {
                line: 0,
                msg: format!("entry mismatch: checkpoint {got_name} {got_shape:?}, model {name} {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        let data = r.f64_vec(n)?;
        match name.as_str() {
            "conv.running_mean" => running_mean = data,
            "conv.running_var" => running_var = data,
            _ => {
                params[k..k + n].copy_from_slice(&data);
                k += n;
            }
        }
    }
    model.set_params(&params);
    model.conv.running_mean = running_mean;
    model.conv.running_var = running_var;
    Ok(())
}
