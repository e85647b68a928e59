//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!   magic "HPIN" (4 bytes)
//!   format version, u32
//!   config block: u32 byte length, then UTF-8 key=value lines
//!   tensor records until EOF, each:
//!     u16 name length + UTF-8 name
//!     u8 dtype tag (0 = f32)
//!     u8 rank
//!     rank x u32 dims
//!     row-major f32 payload
//!
//! Model parameters are written in canonical layout order, then any
//! training-state extras (names prefixed "state.") in the order given.
//! Loading validates every parameter against the embedded config and
//! refuses files whose tensors contradict it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{HpiError, Result};
use crate::model::{for_each_param, HpiConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HPIN";
pub const VERSION: u32 = 1;
pub const STATE_PREFIX: &str = "state.";

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> Result<()> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(HpiError::Usage(format!("tensor name too long: {name}")));
    }
    if t.rank() > u8::MAX as usize {
        return Err(HpiError::Usage(format!("tensor rank too large: {}", t.rank())));
    }
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[0u8])?; // dtype f32
    w.write_all(&[t.rank() as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write config, parameters (canonical order) and optional state extras.
pub fn save_checkpoint(
    path: &Path,
    cfg: &HpiConfig,
    params: &ModelParams<f32>,
    extras: &[(String, Tensor<f32>)],
) -> Result<()> {
    crate::model::validate_params(cfg, params)?;
    for (name, _) in extras {
        if !name.starts_with(STATE_PREFIX) {
            return Err(HpiError::Usage(format!("extra tensor '{name}' must be prefixed '{STATE_PREFIX}'")));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg_text = cfg.render_kv();
    w.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    w.write_all(cfg_text.as_bytes())?;
    for (name, t) in params.iter() {
        write_tensor(&mut w, name, t)?;
    }
    for (name, t) in extras {
        write_tensor(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HpiError::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Load a checkpoint: returns the embedded config, the model parameters in
/// canonical order, and any training-state extras.
#[allow(clippy::type_complexity)]
pub fn load_checkpoint(path: &Path) -> Result<(HpiConfig, ModelParams<f32>, BTreeMap<String, Tensor<f32>>)> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(HpiError::Format("bad magic: not a checkpoint file".into()));
    }
    let version = cur.u32_le()?;
    if version != VERSION {
        return Err(HpiError::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let cfg_len = cur.u32_le()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| HpiError::Format("config block is not UTF-8".into()))?;
    let cfg = HpiConfig::parse_kv(cfg_text)?;

    let mut by_name: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    while !cur.at_end() {
        let name_len = cur.u16_le()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| HpiError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = cur.u8()?;
        if dtype != 0 {
            return Err(HpiError::Format(format!("unknown dtype tag {dtype} for '{name}'")));
        }
        let rank = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32_le()? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = cur.take(n * 4)?;
        let mut data = Vec::with_capacity(n);
        for chunk in payload.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let t = Tensor::new(dims, data).map_err(|e| HpiError::Format(format!("tensor '{name}': {e}")))?;
        if by_name.insert(name.clone(), t).is_some() {
            return Err(HpiError::Format(format!("duplicate tensor '{name}'")));
        }
    }

    // assemble parameters in canonical order, verifying dims against config
    let mut entries = Vec::new();
    let mut problem: Option<String> = None;
    for_each_param(&cfg, |name, dims, _| {
        if problem.is_some() {
            return;
        }
        match by_name.remove(&name) {
            None => problem = Some(format!("missing parameter '{name}'")),
            Some(t) => {
                if t.dims() != dims.as_slice() {
                    problem = Some(format!(
                        "parameter '{name}' has dims {:?}, config implies {dims:?}",
                        t.dims()
                    ));
                } else {
                    entries.push((name, t));
                }
            }
        }
    });
    if let Some(msg) = problem {
        return Err(HpiError::Integrity(msg));
    }
    for name in by_name.keys() {
        if !name.starts_with(STATE_PREFIX) {
            return Err(HpiError::Integrity(format!("unexpected tensor '{name}'")));
        }
    }
    Ok((cfg, ModelParams::from_entries(entries), by_name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn tmpdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("hpinet_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = HpiConfig::default();
        let params = init_params::<f32>(&cfg).unwrap();
        let dir = tmpdir();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        save_checkpoint(&p1, &cfg, &params, &[]).unwrap();
        let (cfg2, params2, extras) = load_checkpoint(&p1).unwrap();
        assert_eq!(cfg, cfg2);
        assert!(extras.is_empty());
        save_checkpoint(&p2, &cfg2, &params2, &[]).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = HpiConfig::default();
        let params = init_params::<f32>(&cfg).unwrap();
        let dir = tmpdir();
        let good = dir.join("good.ckpt");
        save_checkpoint(&good, &cfg, &params, &[]).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        for frac in [2usize, 3, 10] {
            let bad = dir.join(format!("bad{frac}.ckpt"));
            std::fs::write(&bad, &bytes[..bytes.len() / frac]).unwrap();
            match load_checkpoint(&bad) {
                Err(HpiError::Format(_)) => {}
                other => panic!("expected format error, got {other:?}"),
            }
            std::fs::remove_file(&bad).ok();
        }
        std::fs::remove_file(&good).ok();
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tmpdir();
        let p = dir.join("magic.ckpt");
        std::fs::write(&p, b"NOPE00000000").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(HpiError::Format(_))));

        let cfg = HpiConfig::default();
        let params = init_params::<f32>(&cfg).unwrap();
        save_checkpoint(&p, &cfg, &params, &[]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99; // version
        std::fs::write(&p, &bytes).unwrap();
        match load_checkpoint(&p) {
            Err(HpiError::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn mismatched_dims_are_an_integrity_error() {
        // write params from one config under another config's header
        let cfg_small = HpiConfig::default();
        let mut cfg_big = cfg_small.clone();
        cfg_big.channels = 24;
        cfg_big.qk_dim = 24;
        let params_small = init_params::<f32>(&cfg_small).unwrap();

        let dir = tmpdir();
        let p = dir.join("mismatch.ckpt");
        // bypass save-side validation by writing the raw format here
        let mut w = std::io::BufWriter::new(std::fs::File::create(&p).unwrap());
        w.write_all(&MAGIC).unwrap();
        w.write_all(&VERSION.to_le_bytes()).unwrap();
        let text = cfg_big.render_kv();
        w.write_all(&(text.len() as u32).to_le_bytes()).unwrap();
        w.write_all(text.as_bytes()).unwrap();
        for (name, t) in params_small.iter() {
            write_tensor(&mut w, name, t).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        match load_checkpoint(&p) {
            Err(HpiError::Integrity(_)) => {}
            other => panic!("expected integrity error, got {other:?}"),
        }
        std::fs::remove_file(&p).ok();
    }
}
