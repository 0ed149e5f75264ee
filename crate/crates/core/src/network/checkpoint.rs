//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "PILUCKPT"
//! version  u32      currently 1
//! hlen     u64      length of the JSON header
//! header   hlen     {"input_shape": [...], "layers": [...], "tensors": [{"name", "shape"}...]}
//! data     f64 LE   every registry tensor, row-major, in registry order
//! ```
//!
//! Values are stored as raw IEEE-754 bits so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LayerDesc, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PILUCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerDesc>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let header = Header {
        input_shape: model.input_shape().to_vec(),
        layers: model.descs(),
        tensors: model
            .registry()
            .into_iter()
            .map(|p| TensorEntry {
                name: p.name,
                shape: p.shape,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for t in model.params() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(io)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(io)?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut model = Model::skeleton(&header.input_shape, &header.layers)?;
    let registry = model.registry();
    if registry.len() != header.tensors.len()
        || registry
            .iter()
            .zip(&header.tensors)
            .any(|(p, e)| p.name != e.name || p.shape != e.shape)
    {
        return Err(Error::Checkpoint(
            "tensor table does not match the declared architecture".into(),
        ));
    }
    for t in model.params_mut() {
        for v in t.data_mut() {
            r.read_exact(&mut u64b).map_err(io)?;
            *v = f64::from_le_bytes(u64b);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
