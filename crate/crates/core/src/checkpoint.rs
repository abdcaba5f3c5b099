//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `b"MGSR"`, version `u32`, config block (`vocab_size`, `context_len`,
//! `n_layers`, `n_heads`, `d_model`, `d_ff` as `u32`, `seed` as `u64`),
//! sub-network hidden width `u32` (0 when absent), array count `u32`, then
//! per array: name length `u32`, UTF-8 name, rank `u32`, dims `u32` each,
//! and the values as `f64`.

use std::fs;
use std::path::Path;

use mgsr_autodiff::Tensor;

use crate::divergences::SubNetwork;
use crate::error::{Error, Result};
use crate::lm::{ModelConfig, TransformerLm};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"MGSR";
pub const VERSION: u32 = 1;

/// A language model plus, for distilled students, its quantile sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TransformerLm,
    pub subnet: Option<SubNetwork>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_arrays(out: &mut Vec<u8>, params: &ParamSet) -> Result<()> {
    for (name, t) in params.iter() {
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.rank())?;
        for &d in t.shape() {
            put_u32(out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(model: TransformerLm, subnet: Option<SubNetwork>) -> Self {
        Self { model, subnet }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [c.vocab_size, c.context_len, c.n_layers, c.n_heads, c.d_model, c.d_ff] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        put_u32(&mut out, self.subnet.as_ref().map_or(0, SubNetwork::hidden))?;
        let n_sub = self.subnet.as_ref().map_or(0, |s| s.params().len());
        put_u32(&mut out, self.model.params().len() + n_sub)?;
        put_arrays(&mut out, self.model.params())?;
        if let Some(s) = &self.subnet {
            put_arrays(&mut out, s.params())?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = ModelConfig {
            vocab_size: r.u32()?,
            context_len: r.u32()?,
            n_layers: r.u32()?,
            n_heads: r.u32()?,
            d_model: r.u32()?,
            d_ff: r.u32()?,
            seed: u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
        };
        let hidden = r.u32()?;
        let n = r.u32()?;
        let mut model_params = ParamSet::new();
        let mut sub_params = ParamSet::new();
        for _ in 0..n {
            let name_len = r.u32()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if name.starts_with("subnet.") {
                sub_params.push(name, t);
            } else {
                model_params.push(name, t);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let subnet = match hidden {
            0 if sub_params.is_empty() => None,
            0 => return Err(Error::Checkpoint("sub-network arrays without a width".into())),
            h => Some(SubNetwork::from_params(config.vocab_size, h, sub_params)?),
        };
        let model = TransformerLm::from_params(config, model_params)?;
        Ok(Self { model, subnet })
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads and checks that the stored architecture equals `expected`
    /// (ignoring the seed).
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let got = ck.model.config();
        let same = ModelConfig {
            seed: expected.seed,
            ..got.clone()
        } == *expected;
        if !same {
            return Err(Error::Checkpoint(format!(
                "{}: shape mismatch: expected {expected:?}, found {got:?}",
                path.display()
            )));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}
