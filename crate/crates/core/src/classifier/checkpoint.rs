//! Checkpoint layout (all integers little-endian u32):
//!
//! ```text
//! magic    8 bytes  "PLAYMLP1"
//! version  u32      1
//! L        u32      number of layer sizes
//! sizes    L × u32
//! dropout  f32
//! params   per layer: weights fan_in × fan_out row-major, then biases (f32)
//! n        u32      length of the config echo
//! config   n bytes  UTF-8 JSON
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLAYMLP1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    /// JSON echo of the training configuration and provenance.
    pub config: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut sink: W, model: &Mlp, config: &serde_json::Value) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(model.n_params() * 4 + 256);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.sizes.len() as u32).to_le_bytes());
    for &s in &model.sizes {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.dropout as f32).to_le_bytes());
    for l in &model.layers {
        for i in 0..l.w.nrows() {
            for j in 0..l.w.ncols() {
                buf.extend_from_slice(&(l.w[(i, j)] as f32).to_le_bytes());
            }
        }
        for v in l.b.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_vec(config)?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    sink.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint<R: Read>(mut source: R, path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let format = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8).ok_or_else(|| format("truncated"))? != CHECKPOINT_MAGIC {
        return Err(format("not a checkpoint (bad magic)"));
    }
    let version = cur.u32().ok_or_else(|| format("truncated"))?;
    if version != VERSION {
        return Err(format(&format!("unsupported checkpoint version {version}")));
    }
    let n_sizes = cur.u32().ok_or_else(|| format("truncated"))? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(format("implausible layer count"));
    }
    let sizes: Vec<usize> =
        (0..n_sizes).map(|_| cur.u32().map(|v| v as usize)).collect::<Option<_>>().ok_or_else(|| format("truncated"))?;
    let dropout = cur.f32().ok_or_else(|| format("truncated"))? as f64;
    let mut layers = Vec::new();
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = DMatrix::zeros(fan_in, fan_out);
        for i in 0..fan_in {
            for j in 0..fan_out {
                w[(i, j)] = cur.f32().ok_or_else(|| format("truncated parameters"))? as f64;
            }
        }
        let b: Vec<f64> =
            (0..fan_out).map(|_| cur.f32().map(f64::from)).collect::<Option<_>>().ok_or_else(|| format("truncated parameters"))?;
        layers.push(Layer { w, b: DVector::from_vec(b) });
    }
    let n = cur.u32().ok_or_else(|| format("missing config echo"))? as usize;
    let json = cur.take(n).ok_or_else(|| format("truncated config echo"))?;
    if cur.pos != bytes.len() {
        return Err(format("trailing bytes after config echo"));
    }
    let config = serde_json::from_slice(json).map_err(|e| format(&format!("config echo: {e}")))?;
    let model = Mlp::from_layers(layers, dropout).map_err(|e| format(&e.to_string()))?;
    Ok(Checkpoint { model, config })
}

pub fn save_checkpoint(path: &Path, model: &Mlp, config: &serde_json::Value) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), model, config)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f), path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
