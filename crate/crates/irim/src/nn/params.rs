//! Named parameter tensors with gradient accumulators and Adam moments,
//! plus the versioned binary checkpoint format.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IRIMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Stable handle into a [`ParamStore`], resolved once at model build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Insertion-ordered map name → (value, grad, Adam m, Adam v), all
/// shape-locked to the registered dims.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    dims: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    moment1: Vec<Vec<f64>>,
    moment2: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, dims: Vec<usize>, init: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let len: usize = dims.iter().product();
        if init.len() != len {
            return Err(Error::ShapeMismatch {
                context: "ParamStore::register",
                expected: format!("{len} values for dims {dims:?}"),
                got: format!("{}", init.len()),
            });
        }
        let id = self.names.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.dims.push(dims);
        self.values.push(init);
        self.grads.push(vec![0.0; len]);
        self.moment1.push(vec![0.0; len]);
        self.moment2.push(vec![0.0; len]);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn tensor_count(&self) -> usize {
        self.names.len()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn dims(&self, id: ParamId) -> &[usize] {
        &self.dims[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn add_grad(&mut self, id: ParamId, contribution: &[f64]) {
        let acc = &mut self.grads[id.0];
        assert_eq!(acc.len(), contribution.len());
        for (a, c) in acc.iter_mut().zip(contribution) {
            *a += c;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in &mut self.grads {
            for v in g {
                *v *= s;
            }
        }
    }

    /// Visits (value, grad, m, v) for every tensor in registration order;
    /// the optimizer step lives on top of this.
    pub fn for_each_param(
        &mut self,
        mut f: impl FnMut(&mut [f64], &[f64], &mut [f64], &mut [f64]),
    ) {
        for i in 0..self.names.len() {
            f(
                &mut self.values[i],
                &self.grads[i],
                &mut self.moment1[i],
                &mut self.moment2[i],
            );
        }
    }

    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.moment1[id.0], &self.moment2[id.0])
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(FormatError::Truncated { context })
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, context: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize, context: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes, context)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes magic, version, a key=value config block, then every tensor's
/// name, dims, and value/m/v planes in registration order.
pub fn save_checkpoint(
    store: &ParamStore,
    config: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;

    let mut cfg = String::new();
    for (k, v) in config {
        cfg.push_str(k);
        cfg.push('=');
        cfg.push_str(v);
        cfg.push('\n');
    }
    write_u32(&mut w, cfg.len() as u32)?;
    w.write_all(cfg.as_bytes())?;

    write_u32(&mut w, store.tensor_count() as u32)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name)?;
        let dims = store.dims(id);
        write_u32(&mut w, dims.len() as u32)?;
        for &d in dims {
            write_u32(&mut w, d as u32)?;
        }
        write_f64s(&mut w, store.value(id))?;
        let (m, v) = store.moments(id);
        write_f64s(&mut w, m)?;
        write_f64s(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic { expected: "IRIMCKPT" }.into());
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            got: version,
        }
        .into());
    }

    let cfg_len = read_u32(&mut r, "config length")? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    read_exact(&mut r, &mut cfg_bytes, "config block")?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::Config("checkpoint config block is not UTF-8".into()))?;
    let mut config = BTreeMap::new();
    for line in cfg_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            config.insert(k.to_string(), v.to_string());
        }
    }

    let count = read_u32(&mut r, "entry count")? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Config("checkpoint tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, "dims")? as usize);
        }
        let len: usize = dims.iter().product();
        let value = read_f64s(&mut r, len, "value tensor")?;
        let m = read_f64s(&mut r, len, "first moment tensor")?;
        let v = read_f64s(&mut r, len, "second moment tensor")?;
        let id = store.register(&name, dims, value)?;
        store.moment1[id.0] = m;
        store.moment2[id.0] = v;
    }
    Ok((store, config))
}
