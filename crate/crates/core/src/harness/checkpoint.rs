//! Versioned binary checkpoints: run configuration, every parameter and
//! every memory bank.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SIMMPCKP"
//! version  u32
//! config   u64 length, then UTF-8 `key = value` text
//! params   u64 count, then per parameter:
//!            u32 name length, name bytes, u32 rank, rank × u64 dims,
//!            product(dims) × f64 values
//! banks    u64 count, then per bank: u64 length, serialized bank bytes
//! ```

use std::path::Path;

use thiserror::Error;

use super::io::write_atomic;
use crate::config::{ConfigError, RunConfig};
use crate::error::MemoryError;
use crate::memory::PrototypeMemoryBank;
use crate::network::{init_params, memory_block_channels, SimMpNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SIMMPCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint memory bank: {0}")]
    Memory(#[from] MemoryError),
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

pub fn encode(config: &RunConfig, net: &SimMpNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = config.to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for (name, t) in net.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(net.banks.len() as u64).to_le_bytes());
    for b in &net.banks {
        let bytes = b.serialize();
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format_err("length overflows usize"))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("non-UTF-8 text"))
    }
}

/// Decodes a checkpoint and checks it against the layout its own config
/// implies: same parameter names and shapes in order, one bank per block.
pub fn decode(bytes: &[u8]) -> Result<(RunConfig, SimMpNet), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(format_err("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let n = r.u64()?;
    let config = RunConfig::parse(&r.string(n)?)?;
    let mut params = init_params(&config.network, 0).map_err(MemoryError::from)?;
    let count = r.u64()?;
    if count != params.len() {
        return Err(format_err(format!("{count} parameters stored, config needs {}", params.len())));
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    for expected in &names {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        if &name != expected {
            return Err(format_err(format!("parameter `{name}` where `{expected}` was expected")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        let slot = params.get_mut(&name).expect("name from store");
        if shape != slot.shape() {
            return Err(format_err(format!(
                "parameter `{name}` has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let data = (0..slot.len()).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("parameter `{name}` holds non-finite values")));
        }
        *slot = Tensor::new(&shape, data).map_err(MemoryError::from)?;
    }
    let widths = memory_block_channels(&config.network);
    let count = r.u64()?;
    if count != widths.len() {
        return Err(format_err(format!("{count} banks stored, config needs {}", widths.len())));
    }
    let mut banks = Vec::with_capacity(count);
    for c in widths {
        let n = r.u64()?;
        let (k, m) = (config.network.classes, config.network.memory);
        banks.push(PrototypeMemoryBank::deserialize_expecting(r.take(n)?, k, m, c)?);
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes after checkpoint"));
    }
    let net = SimMpNet {
        config: config.network.clone(),
        params,
        banks,
    };
    Ok((config, net))
}

pub fn save(path: &Path, config: &RunConfig, net: &SimMpNet) -> Result<(), CheckpointError> {
    Ok(write_atomic(path, &encode(config, net))?)
}

pub fn load(path: &Path) -> Result<(RunConfig, SimMpNet), CheckpointError> {
    decode(&std::fs::read(path)?)
}
