//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WONN" | version u32 | metadata_len u32 | metadata (UTF-8 JSON)
//! tensor_count u32
//! per tensor: name_len u32 | name | dtype u8 | rank u8 | dims u64 * rank | payload
//! ```
//!
//! dtype 0 stores `f32` values and is used whenever every value of a tensor
//! is exactly representable in `f32`; dtype 1 stores `f64`. Either way a
//! load returns the saved values bit for bit.

use crate::error::{Result, WonnError};
use crate::network::ModelParams;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"WONN";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

fn lossless_f32(data: &[f64]) -> bool {
    data.iter().all(|&v| (v as f32) as f64 == v)
}

/// Serialize `params` with `metadata` (a JSON document, stored verbatim).
pub fn encode(params: &ModelParams, metadata: &str) -> Result<Vec<u8>> {
    serde_json::from_str::<serde_json::Value>(metadata)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(metadata.len(), "metadata")?.to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&len_u32(params.tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in &params.tensors {
        if !t.is_finite() {
            return Err(WonnError::numeric(format!("tensor {name} has non-finite values")));
        }
        let rank = u8::try_from(t.shape.len()).map_err(|_| WonnError::shape(format!("tensor {name} has rank > 255")))?;
        out.extend_from_slice(&len_u32(name.len(), "name")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let f32_ok = lossless_f32(&t.data);
        out.push(if f32_ok { DTYPE_F32 } else { DTYPE_F64 });
        out.push(rank);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        if f32_ok {
            t.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()));
        } else {
            t.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    Ok(out)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| WonnError::Size(format!("{what} length {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            WonnError::Size(format!("truncated {what}: need {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parse a checkpoint; returns the tensors and the metadata text.
pub fn decode(buf: &[u8]) -> Result<(ModelParams, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic").ok() != Some(&MAGIC[..]) {
        return Err(WonnError::Format("bad magic, not a WONN checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version > FORMAT_VERSION {
        return Err(WonnError::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    if version == 0 {
        return Err(WonnError::Format("format version 0 is invalid".into()));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| WonnError::Format("metadata is not UTF-8".into()))?
        .to_string();
    serde_json::from_str::<serde_json::Value>(&meta).map_err(|e| WonnError::Format(format!("metadata is not JSON: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| WonnError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8("dtype")?;
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            d => return Err(WonnError::Format(format!("tensor {name}: unknown dtype code {d}"))),
        };
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64("dims")?).map_err(|_| WonnError::Size(format!("tensor {name}: dim overflows")))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| WonnError::Size(format!("tensor {name}: element count overflows")))?;
        let bytes = len.checked_mul(width).ok_or_else(|| WonnError::Size(format!("tensor {name}: payload size overflows")))?;
        let payload = r.take(bytes, &format!("payload of {name}"))?;
        let data: Vec<f64> = if dtype == DTYPE_F32 {
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
        } else {
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WonnError::Format(format!("tensor {name} has non-finite values")));
        }
        if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(WonnError::Format(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(WonnError::Size(format!("{} trailing bytes after the tensor table", buf.len() - r.pos)));
    }
    Ok((ModelParams { tensors }, meta))
}

pub fn save_checkpoint(params: &ModelParams, metadata: &str, path: &Path) -> Result<()> {
    let bytes = encode(params, metadata)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let mut tensors = BTreeMap::new();
        tensors.insert("a".into(), Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 0.0, -0.0, 1e-3_f32 as f64]).unwrap());
        tensors.insert("b".into(), Tensor::new(vec![2], vec![0.1, std::f64::consts::PI]).unwrap());
        ModelParams { tensors }
    }

    fn bits(p: &ModelParams) -> Vec<(String, Vec<usize>, Vec<u64>)> {
        p.tensors.iter().map(|(k, t)| (k.clone(), t.shape.clone(), t.data.iter().map(|v| v.to_bits()).collect())).collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = params();
        let meta = r#"{"seed": 3,  "epoch":1}"#;
        let (q, m) = decode(&encode(&p, meta).unwrap()).unwrap();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(m, meta);
    }

    #[test]
    fn f32_values_use_dtype_zero() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".into(), Tensor::new(vec![1], vec![0.5]).unwrap());
        let buf = encode(&ModelParams { tensors }, "{}").unwrap();
        // magic, version, meta len, "{}", count, name len, "w", dtype
        assert_eq!(buf[4 + 4 + 4 + 2 + 4 + 4 + 1], DTYPE_F32);
        assert_eq!(buf.len(), 4 + 4 + 4 + 2 + 4 + 4 + 1 + 1 + 1 + 8 + 4);
    }

    #[test]
    fn empty_table() {
        let (q, m) = decode(&encode(&ModelParams::default(), "{}").unwrap()).unwrap();
        assert!(q.tensors.is_empty());
        assert_eq!(m, "{}");
    }

    #[test]
    fn corrupt_magic() {
        let mut buf = encode(&params(), "{}").unwrap();
        buf[0] = b'X';
        assert!(matches!(decode(&buf), Err(WonnError::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let buf = encode(&params(), "{}").unwrap();
        for cut in [buf.len() - 1, buf.len() - 9, 20] {
            assert!(matches!(decode(&buf[..cut]), Err(WonnError::Size(_))), "cut {cut}");
        }
    }

    #[test]
    fn future_version() {
        let mut buf = encode(&params(), "{}").unwrap();
        buf[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(decode(&buf), Err(WonnError::UnsupportedVersion { found: 2, supported: 1 })));
    }

    #[test]
    fn non_finite_refused() {
        let mut p = params();
        p.tensors.get_mut("b").unwrap().data[0] = f64::NAN;
        assert!(matches!(encode(&p, "{}"), Err(WonnError::Numeric(_))));
    }
}
