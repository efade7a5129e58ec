//! Binary checkpoint: magic, format version, the run configuration as JSON,
//! the schedule cursor, named little-endian `f64` sections, and a SHA-256
//! trailer over everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::Cursor;
use crate::config::RunConfig;
use crate::error::{Result, SnnError};
use crate::topology::{build_network, Network};

pub const MAGIC: &[u8; 8] = b"SYMSTDP\0";
pub const VERSION: u32 = 1;

const SEC_INPUT_HIDDEN: &str = "input_hidden";
const SEC_SL_IN: &str = "sl_in";
const SEC_THETA: &str = "theta";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_section(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, values.len() as u64);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(run: &RunConfig, network: &Network, cursor: &Cursor) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(run).expect("run config serializes");
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    put_u32(&mut out, cursor.phase);
    put_u32(&mut out, cursor.epoch);
    put_u64(&mut out, cursor.position);
    put_u64(&mut out, cursor.presented);

    let mut sections: Vec<(&str, &[f64])> = Vec::new();
    if let Some(h) = &network.synapses.hidden {
        sections.push((SEC_INPUT_HIDDEN, &h.input_exc.weights));
    }
    sections.push((SEC_SL_IN, &network.synapses.sl_in.weights));
    if let Some(theta) = network.layers.hidden_theta() {
        sections.push((SEC_THETA, theta));
    }
    put_u32(&mut out, sections.len() as u32);
    for (name, values) in sections {
        put_section(&mut out, name, values);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SnnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(RunConfig, Network, Cursor)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(SnnError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(SnnError::Checkpoint(format!(
            "format version {version}, this build reads version {VERSION}"
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(SnnError::Checkpoint("digest mismatch; file is corrupt".into()));
    }

    let mut r = Reader { bytes: body, pos: 12 };
    let json_len = r.u64()? as usize;
    let run = RunConfig::from_json(r.take(json_len)?)
        .map_err(|e| SnnError::Checkpoint(format!("embedded config: {e}")))?;
    let cursor = Cursor {
        phase: r.u32()?,
        epoch: r.u32()?,
        position: r.u64()?,
        presented: r.u64()?,
    };
    let mut network = build_network(&run.network, run.seed)?;
    let n_sections = r.u32()?;
    for _ in 0..n_sections {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| SnnError::Checkpoint("section name is not UTF-8".into()))?
            .to_string();
        let count = r.u64()? as usize;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| {
            SnnError::Checkpoint(format!("section {name} too large"))
        })?)?;
        let target: &mut Vec<f64> = match name.as_str() {
            SEC_INPUT_HIDDEN => match &mut network.synapses.hidden {
                Some(h) => &mut h.input_exc.weights,
                None => return Err(SnnError::Checkpoint("hidden weights without a hidden block".into())),
            },
            SEC_SL_IN => &mut network.synapses.sl_in.weights,
            SEC_THETA => match &mut network.layers.exc {
                Some(e) => &mut e.theta,
                None => return Err(SnnError::Checkpoint("theta without a hidden block".into())),
            },
            other => return Err(SnnError::Checkpoint(format!("unknown section `{other}`"))),
        };
        if target.len() != count {
            return Err(SnnError::Checkpoint(format!(
                "section {name} has {count} values, network expects {}",
                target.len()
            )));
        }
        for (dst, chunk) in target.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != body.len() {
        return Err(SnnError::Checkpoint("trailing bytes after sections".into()));
    }
    Ok((run, network, cursor))
}

pub fn save(path: &Path, run: &RunConfig, network: &Network, cursor: &Cursor) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, encode(run, network, cursor)).map_err(|e| SnnError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| SnnError::io(path, e))
}

pub fn load(path: &Path) -> Result<(RunConfig, Network, Cursor)> {
    let bytes = std::fs::read(path).map_err(|e| SnnError::io(path, e))?;
    decode(&bytes)
}
