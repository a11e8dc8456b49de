//! Binary checkpoint files.
//!
//! ```text
//! "WVNT" | u32 version | u64 len | config (UTF-8 key = value) | u32 count
//! per tensor: u16 len | name | u8 rank | u32 dims... | f32 data
//! u64 number of bytes before this field
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::math::Tensor;
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"WVNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// File name of the vocabulary saved alongside.
    pub vocab_ref: String,
    pub vocab_fingerprint: u64,
    /// Training seed and the number of optimizer steps taken.
    pub rng_seed: u64,
    pub rng_step: u64,
}

impl Checkpoint {
    fn config_doc(&self) -> KvDoc {
        let mut doc = self.config.to_kv();
        doc.set("vocab_ref", &self.vocab_ref);
        doc.set("vocab_fingerprint", format!("{:016x}", self.vocab_fingerprint));
        doc.set("rng_seed", self.rng_seed);
        doc.set("rng_step", self.rng_step);
        doc
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let blob = self.config_doc().render();
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        let named = self.params.named();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.dims() {
                let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dim {d} of `{name}` too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let len = out.len() as u64;
        out.extend_from_slice(&len.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Integrity("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let body_len = bytes.len().checked_sub(8).ok_or_else(|| Error::Integrity("file too short".into()))?;
        let trailer = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
        if trailer != body_len as u64 {
            return Err(Error::Integrity(format!(
                "length check failed: trailer says {trailer} bytes, file holds {body_len}"
            )));
        }
        let r = &mut Reader {
            bytes: &bytes[..body_len],
            pos: r.pos,
        };

        let blob_len = r.u64()? as usize;
        let blob = std::str::from_utf8(r.take(blob_len)?)
            .map_err(|_| Error::Integrity("config document is not UTF-8".into()))?;
        let doc = KvDoc::parse(blob).map_err(|e| Error::Integrity(format!("config document: {e}")))?;
        let config = ModelConfig::from_kv(&doc, &ModelConfig::default())
            .map_err(|e| Error::Integrity(format!("config document: {e}")))?;
        let field = |key: &str| doc.get(key).ok_or_else(|| Error::Integrity(format!("config document lacks `{key}`")));
        let vocab_ref = field("vocab_ref")?.to_string();
        let vocab_fingerprint = u64::from_str_radix(field("vocab_fingerprint")?, 16)
            .map_err(|_| Error::Integrity("bad vocab_fingerprint".into()))?;
        let num = |key: &str| -> Result<u64> {
            field(key)?.parse().map_err(|_| Error::Integrity(format!("bad `{key}`")))
        };
        let rng_seed = num("rng_seed")?;
        let rng_step = num("rng_step")?;

        let expected = ModelParams::expected_dims(&config);
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Integrity(format!(
                "{count} tensors stored, config requires {}",
                expected.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (want_name, want_dims) in &expected {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
            if name != want_name {
                return Err(Error::Integrity(format!("expected tensor `{want_name}`, found `{name}`")));
            }
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &dims != want_dims {
                return Err(Error::Integrity(format!(
                    "tensor `{name}` has dims {dims:?}, config requires {want_dims:?}"
                )));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push(Tensor::new(dims, data)?);
        }
        if r.pos != r.bytes.len() {
            return Err(Error::Integrity(format!("{} unexpected trailing bytes", r.bytes.len() - r.pos)));
        }
        let params = ModelParams::from_tensors(&config, tensors)?;
        Ok(Self {
            config,
            params,
            vocab_ref,
            vocab_fingerprint,
            rng_seed,
            rng_step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
