//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! | field      | type                | notes                              |
//! |------------|---------------------|------------------------------------|
//! | magic      | 8 bytes             | `DAIRCKPT`                         |
//! | version    | u32                 | currently 1                        |
//! | meta_len   | u32                 | byte length of `meta`              |
//! | meta       | UTF-8 JSON          | free-form metadata (config, etc.)  |
//! | count      | u32                 | number of tensors                  |
//! | per tensor | name_len u32, name UTF-8, ndim u32, dims u64 x ndim, data f64 x prod(dims) |

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::ParamSet;
use crate::autodiff::Tensor;
use crate::error::{DairError, Result};

pub const MAGIC: &[u8; 8] = b"DAIRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> DairError {
    DairError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends every tensor of `set` under `prefix.name`.
    pub fn add_params(&mut self, prefix: &str, set: &ParamSet) {
        for (name, t) in set.names().iter().zip(set.tensors()) {
            self.tensors.push((format!("{prefix}.{name}"), t.clone()));
        }
    }

    /// Copies `prefix.*` tensors into `set`, requiring an exact name and
    /// shape match for every parameter of `set`.
    pub fn load_params(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        let names = set.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let key = format!("{prefix}.{name}");
            let (_, t) = self
                .tensors
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| corrupt(format!("missing tensor `{key}`")))?;
            let dst = &mut set.tensors_mut()[i];
            if t.shape() != dst.shape() {
                return Err(corrupt(format!("tensor `{key}` has shape {:?}, expected {:?}", t.shape(), dst.shape())));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let meta = serde_json::to_vec(&self.meta).map_err(|e| corrupt(e.to_string()))?;
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(&meta)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(2)?;
            w.write_u64::<LittleEndian>(t.rows() as u64)?;
            w.write_u64::<LittleEndian>(t.cols() as u64)?;
            for v in t.data() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| corrupt(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let meta_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(io)?;
        let meta = serde_json::from_slice(&meta).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let ndim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
            let dims = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(corrupt(format!("tensor `{name}` has {ndim} dimensions"))),
            };
            let mut data = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}
