//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MDNCKPT" + version byte
//! u32 header length, header: UTF-8 `key=value` lines (model config)
//! u32 block count
//! per block: u32 name length, name, u32 rank, u32 dims..., f32 data
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, Seq2SeqModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"MDNCKPT";
pub const VERSION: u8 = 1;

impl Seq2SeqModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let header: String = self
            .config
            .to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.layout.specs.len());
        for spec in &self.layout.specs {
            put_u32(&mut out, spec.name.len());
            out.extend_from_slice(spec.name.as_bytes());
            put_u32(&mut out, spec.shape.len());
            for &dim in &spec.shape {
                put_u32(&mut out, dim);
            }
            for v in &self.params[spec.range()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let header_len = r.u32()?;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::format("checkpoint", "header is not UTF-8"))?;
        let mut map = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("checkpoint", format!("bad header line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let config = ModelConfig::from_kv(&map)?;
        let mut model = Seq2SeqModel::<f32>::init_zeroed(config)?;
        let count = r.u32()?;
        if count != model.layout.specs.len() {
            return Err(Error::Shape {
                name: "block count".into(),
                expected: vec![model.layout.specs.len()],
                found: vec![count],
            });
        }
        for i in 0..count {
            let name_len = r.u32()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format("checkpoint", "block name is not UTF-8"))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let spec = &model.layout.specs[i];
            if spec.name != name {
                return Err(Error::format(
                    "checkpoint",
                    format!("expected block {} at position {i}, found {name}", spec.name),
                ));
            }
            if spec.shape != shape {
                return Err(Error::Shape {
                    name,
                    expected: spec.shape.clone(),
                    found: shape,
                });
            }
            let range = spec.range();
            let data = r.take(4 * range.len())?;
            for (dst, chunk) in model.params[range].iter_mut().zip(data.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        if r.at != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn init_zeroed(config: ModelConfig) -> Result<Self> {
        let total = super::Layout::new(&config).total;
        Seq2SeqModel::from_params(config, vec![0.0; total])
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}
