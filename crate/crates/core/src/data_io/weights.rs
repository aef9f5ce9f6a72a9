//! `EAM1` tensor container for model and aggregator weights.
//!
//! Magic `EAM1`, then records until end of file: name length `u16`, UTF-8
//! name, axis count `u8`, axes `u32` each, then the `f64` values. All
//! integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{MergeWeights, ModelParams};
use crate::numkernel::tensor::MAX_AXES;
use crate::numkernel::Tensor;
use crate::voting::ShaParams;

pub const MAGIC: &[u8; 4] = b"EAM1";
const MERGE_ALPHA: &str = "merge.alpha";

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &axis in t.shape() {
            let axis = u32::try_from(axis)
                .map_err(|_| Error::InvalidArgument(format!("{name}: axis {axis} exceeds u32")))?;
            out.extend_from_slice(&axis.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "EAM1",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut cur = Cursor { bytes, pos: 4, path };
    let mut out: Vec<(String, Tensor)> = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.take(1)?[0] as usize;
        if rank == 0 || rank > MAX_AXES {
            return Err(malformed(format!("{name}: axis count {rank} not in 1..={MAX_AXES}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(8).map(|_| c))
            .ok_or_else(|| Error::DimensionOverflow {
                path: path.to_path_buf(),
                detail: format!("{name}: shape {shape:?} overflows"),
            })?;
        let raw = cur.take(count * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(malformed(format!("duplicate tensor {name:?}")));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Serialised bytes for a slice model plus an optional aggregator.
pub fn encode_model(params: &ModelParams, sha: Option<&ShaParams>) -> Result<Vec<u8>> {
    let alpha = Tensor::scalar(params.merge.alpha());
    let mut named: Vec<(String, &Tensor)> = params.named_tensors();
    named.push((MERGE_ALPHA.into(), &alpha));
    if let Some(sha) = sha {
        named.extend(sha.named_tensors());
    }
    encode_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))
}

pub fn save_model(path: &Path, params: &ModelParams, sha: Option<&ShaParams>) -> Result<()> {
    let bytes = encode_model(params, sha)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<(ModelParams, Option<ShaParams>)> {
    let malformed = |detail: String| Error::Malformed {
        path: path.to_path_buf(),
        detail,
    };
    let mut map: BTreeMap<String, Tensor> = decode_tensors(bytes, path)?.into_iter().collect();
    let mut take = |name: &str| map.remove(name);

    let alpha = take(MERGE_ALPHA)
        .ok_or_else(|| malformed(format!("missing tensor {MERGE_ALPHA:?}")))?
        .item()?;
    let mut params = ModelParams::init(0, MergeWeights::new(alpha)?);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = take(name).ok_or_else(|| malformed(format!("missing tensor {name:?}")))?;
        if t.shape() != slot.shape() {
            return Err(malformed(format!(
                "{name} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    params.validate().map_err(|e| malformed(e.to_string()))?;

    let sha_names: Vec<String> = ShaParams::init(params.channels(), 0)
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let present = sha_names.iter().filter(|n| map.contains_key(*n)).count();
    let sha = match present {
        0 => None,
        n if n == sha_names.len() => {
            let mut sha = ShaParams::init(params.channels(), 0);
            for (name, slot) in sha_names.iter().zip(sha.tensors_mut()) {
                *slot = map.remove(name).expect("checked present");
            }
            sha.validate().map_err(|e| malformed(e.to_string()))?;
            Some(sha)
        }
        _ => return Err(malformed("incomplete aggregator tensor set".into())),
    };
    if let Some(extra) = map.keys().next() {
        return Err(malformed(format!("unknown tensor {extra:?}")));
    }
    Ok((params, sha))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Option<ShaParams>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_layout() {
        let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
        let bytes = encode_tensors([("ab", &t)]).unwrap();
        let mut expected = b"EAM1".to_vec();
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(2);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(bytes, expected);
        let back = decode_tensors(&bytes, Path::new("w")).unwrap();
        assert_eq!(back, vec![("ab".to_owned(), t)]);
    }

    #[test]
    fn model_roundtrip_with_and_without_sha() {
        let p = ModelParams::init(4, MergeWeights::new(0.3).unwrap());
        let sha = ShaParams::init(p.channels(), 9);
        let path = Path::new("w.eam");
        let (p2, s2) = decode_model(&encode_model(&p, Some(&sha)).unwrap(), path).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.as_ref(), Some(&sha));
        let (p3, s3) = decode_model(&encode_model(&p, None).unwrap(), path).unwrap();
        assert_eq!(p3, p);
        assert!(s3.is_none());
    }

    #[test]
    fn rejects_bad_containers() {
        let path = Path::new("w.eam");
        assert!(matches!(decode_tensors(b"EAM2", path), Err(Error::BadMagic { .. })));

        let p = ModelParams::init(4, MergeWeights::default());
        let mut bytes = encode_model(&p, None).unwrap();
        bytes.pop();
        assert!(matches!(decode_model(&bytes, path), Err(Error::Truncated { .. })));

        // Head weight with the wrong width.
        let mut q = p.clone();
        q.head_weight = Tensor::zeros(&[8, 1]);
        let bytes = encode_model(&q, None).unwrap();
        assert!(matches!(decode_model(&bytes, path), Err(Error::Malformed { .. })));

        let t = Tensor::scalar(1.0);
        let bytes = encode_tensors([("x", &t), ("x", &t)]).unwrap();
        assert!(matches!(decode_tensors(&bytes, path), Err(Error::Malformed { .. })));
    }
}
