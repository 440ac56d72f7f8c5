//! Checkpoint files: a one-line JSON header describing every tensor (name,
//! shape, byte offset into the data section), a newline, then the raw values
//! as little-endian 64-bit floats in declaration order.
//!
//! The header carries free-form metadata (model kind, dimensions, training
//! iteration) so a loader can reject a file that does not match its config
//! before touching any floats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Identifying metadata stored in the header. `dims` uses a sorted map so
/// the serialized header is byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Meta {
    pub kind: String,
    pub iteration: u64,
    pub dims: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: Meta,
    entries: Vec<HeaderEntry>,
}

/// Writes `named` tensors to `path` in the given order.
pub fn save(path: &Path, meta: &Meta, named: &[(&str, &Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in named {
        if entries.iter().any(|e: &HeaderEntry| e.name == *name) {
            return Err(Error::Checkpoint { message: format!("duplicate tensor name {name}") });
        }
        entries.push(HeaderEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
        offset += (t.len() * 8) as u64;
    }
    let header = Header { version: CHECKPOINT_VERSION, meta: meta.clone(), entries };

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for (_, t) in named {
        for &x in t.data() {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A loaded checkpoint: metadata plus tensors in file order.
pub struct Loaded {
    pub meta: Meta,
    pub tensors: Vec<(String, Tensor)>,
}

impl Loaded {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint { message: format!("tensor {name} not in checkpoint") })
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Checkpoint { message: "missing header newline".into() });
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 1 << 20 {
            return Err(Error::Checkpoint { message: "header exceeds 1 MiB".into() });
        }
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            message: format!("version {} unsupported (expected {CHECKPOINT_VERSION})", header.version),
        });
    }

    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;

    let mut tensors = Vec::with_capacity(header.entries.len());
    for e in &header.entries {
        let count: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + count * 8;
        if end > data.len() {
            return Err(Error::Checkpoint {
                message: format!("tensor {} runs past end of file", e.name),
            });
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(e.shape.clone(), values).map_err(|err| Error::Checkpoint {
            message: format!("tensor {}: {err}", e.name),
        })?;
        tensors.push((e.name.clone(), t));
    }
    Ok(Loaded { meta: header.meta, tensors })
}
