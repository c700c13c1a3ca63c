//! Named parameter storage, initialization and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic  "RTSDOACK" (8 bytes)
//! version u32
//! count   u32
//! repeated count times:
//!   name_len u32, name bytes (UTF-8)
//!   rank u32, dims u64 * rank
//!   dtype u8 (0 = f32, 1 = f64)
//!   data: product(dims) scalars
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RTSDOACK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Ordered map of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S: Real> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.tensors.insert(name.into(), t);
    }

    /// Create and initialize a parameter.
    pub fn init(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut impl Rng) {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape.to_vec()),
            Init::Ones => Tensor::ones(shape.to_vec()),
            Init::Uniform { fan_in } => {
                let k = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape.to_vec(), |_| S::c(rng.gen_range(-k..=k)))
            }
        };
        self.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamStore<S> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.push(S::DTYPE.tag());
            for &x in t.data() {
                x.write_le(&mut buf);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a checkpoint; tensors stored in the other precision are converted.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cur.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = cur.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u64()? as usize);
            }
            let dtype = DType::from_tag(cur.take(1)?[0])
                .ok_or_else(|| Error::Checkpoint(format!("unknown dtype for `{name}`")))?;
            let n: usize = dims.iter().product();
            let raw = cur.take(n * dtype.size())?;
            let data: Vec<S> = match dtype {
                DType::F32 => raw.chunks(4).map(|c| S::c(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks(8).map(|c| S::c(f64::read_le(c))).collect(),
            };
            store.insert(name, Tensor::new(dims, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Lazily binds parameters from a store into a graph, once per name.
pub struct Binder<'a, S: Real> {
    store: &'a ParamStore<S>,
    bound: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'a, S: Real> Binder<'a, S> {
    /// `trainable = false` binds parameters as constants (inference).
    pub fn new(store: &'a ParamStore<S>, trainable: bool) -> Self {
        Binder {
            store,
            bound: BTreeMap::new(),
            trainable,
        }
    }

    pub fn get(&mut self, g: &mut Graph<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?.clone();
        let v = if self.trainable { g.param(name, t) } else { g.input(t) };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn store(&self) -> &'a ParamStore<S> {
        self.store
    }

    /// Gradients for every bound parameter, zero-filled where none flowed.
    pub fn gradients(&self, grads: &mut Gradients<S>) -> ParamStore<S> {
        let mut out = self.store.zeros_like();
        for (name, &v) in &self.bound {
            if let Some(g) = grads.take(v) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}
