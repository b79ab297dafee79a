//! Binary tensor checkpoints with a JSON sidecar.
//!
//! Layout, all little-endian: the magic `PEPS1`, then for every tensor its
//! rank (`u32`), extents (`u64` each) and row-major `f64` payload. The file
//! ends after the last tensor.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peps::{PepsState, AXIS_CONVENTION};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"PEPS1";
pub const VERSION: u32 = 1;

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for t in tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let Some(chunk) = self.bytes.get(self.pos..self.pos.saturating_add(n)) else {
            return corrupt("truncated tensor record");
        };
        self.pos += n;
        Ok(chunk)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let Some(body) = bytes.strip_prefix(MAGIC.as_slice()) else {
        return corrupt("missing PEPS1 magic");
    };
    let mut cur = Cursor { bytes: body, pos: 0 };
    let mut out = Vec::new();
    while cur.pos < body.len() {
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|e| usize::try_from(e).unwrap_or(usize::MAX)))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).and_then(|l| l.checked_mul(8));
        let Some(len) = len else {
            return corrupt(format!("payload of shape {shape:?} is too large"));
        };
        let data = cur.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tensors(tensors))?;
    Ok(f.sync_all()?)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensors(&bytes)
}

/// Lattice metadata stored next to a state checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub lx: usize,
    pub ly: usize,
    pub d: usize,
    pub ancilla: bool,
    pub axes: String,
    /// Caller data, e.g. the state of a Markov chain.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the site tensors in row-major site order plus `<path>.json`.
pub fn save_state(path: &Path, state: &PepsState, extra: serde_json::Value) -> Result<()> {
    write_tensors(path, state.sites())?;
    let meta = Sidecar {
        version: VERSION,
        lx: state.lx(),
        ly: state.ly(),
        d: state.phys_dim(),
        ancilla: state.has_ancilla(),
        axes: AXIS_CONVENTION.to_string(),
        extra,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    let meta: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if meta.version != VERSION {
        return corrupt(format!("version {} (expected {VERSION})", meta.version));
    }
    if meta.axes != AXIS_CONVENTION {
        return corrupt(format!("axis convention {:?}", meta.axes));
    }
    Ok(meta)
}

pub fn load_state(path: &Path) -> Result<(PepsState, Sidecar)> {
    let meta = load_sidecar(path)?;
    let sites = read_tensors(path)?;
    if sites.len() != meta.lx * meta.ly {
        return corrupt(format!("{} tensors for a {}x{} lattice", sites.len(), meta.lx, meta.ly));
    }
    let state = PepsState::from_sites(meta.lx, meta.ly, meta.d, meta.ancilla, sites)?;
    Ok((state, meta))
}
