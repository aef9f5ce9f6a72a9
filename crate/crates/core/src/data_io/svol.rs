//! `SVOL` volume files.
//!
//! Layout (all little-endian): magic `SVOL`, version `u32` (= 1), height
//! `u32`, width `u32`, slice count `u32`, then `slices * height * width`
//! `f32` pixels, slice-major and row-major within a slice.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Volume};

pub const MAGIC: &[u8; 4] = b"SVOL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const EXTENSION: &str = "svol";

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Encodes a volume into its on-disk byte form.
pub fn encode_volume(volume: &Volume) -> Result<Vec<u8>> {
    let dims = [volume.height(), volume.width(), volume.len()];
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| {
            Error::InvalidArgument(format!("volume dimension {d} does not fit in u32"))
        })?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    let mut out = header;
    out.reserve(volume.len() * volume.height() * volume.width() * 4);
    for slice in volume.slices() {
        for &p in slice.pixels() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_volume(volume: &Volume, path: &Path) -> Result<()> {
    let bytes = encode_volume(volume)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Decodes `bytes`; `path` is only used for error messages.
pub fn decode_volume(bytes: &[u8], patient_id: &str, path: &Path) -> Result<Volume> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SVOL",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let (h, w, n) = (u32_at(bytes, 8) as u64, u32_at(bytes, 12) as u64, u32_at(bytes, 16) as u64);
    if h == 0 || w == 0 || n == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("zero dimension in header ({h}x{w}, {n} slices)"),
        });
    }
    let payload = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(4))
        .filter(|&v| usize::try_from(v).is_ok())
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            detail: format!("{h}x{w}x{n} pixels overflow the addressable size"),
        })?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: payload,
            found,
        });
    }
    if found > payload {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after payload", found - payload),
        });
    }
    let (h, w) = (h as usize, w as usize);
    let mut slices = Vec::with_capacity(n as usize);
    for chunk in bytes[HEADER_LEN..].chunks_exact(h * w * 4) {
        let mut pixels = Vec::with_capacity(h * w);
        for raw in chunk.chunks_exact(4) {
            let v = f32::from_le_bytes(raw.try_into().expect("4 bytes"));
            if v.is_nan() {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    detail: "NaN pixel".into(),
                });
            }
            pixels.push(v.clamp(0.0, 1.0));
        }
        slices.push(Image::new(h, w, pixels)?);
    }
    Volume::new(patient_id, slices)
}

/// Patient identifier for a volume file: its stem.
pub fn patient_id_from_path(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot derive a patient id from {}", path.display())))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, &patient_id_from_path(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume {
        let slices = (0..3)
            .map(|s| {
                let px = (0..12).map(|i| ((i * 7 + s * 5) % 13) as f32 / 12.0).collect();
                Image::new(3, 4, px).unwrap()
            })
            .collect();
        Volume::new("p007", slices).unwrap()
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_volume(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"SVOL");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 3 * 3 * 4 * 4);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let p = Path::new("x.svol");
        let mut bytes = encode_volume(&sample()).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_volume(&bad, "x", p), Err(Error::BadMagic { .. })));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_volume(&v2, "x", p), Err(Error::UnsupportedVersion { version: 2, .. })));

        let mut huge = bytes.clone();
        for off in [8, 12, 16] {
            huge[off..off + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_volume(&huge, "x", p), Err(Error::DimensionOverflow { .. })));

        bytes.truncate(bytes.len() - 4 * 12);
        assert!(matches!(decode_volume(&bytes, "x", p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn out_of_range_pixels_are_clamped() {
        let mut bytes = encode_volume(&sample()).unwrap();
        bytes[20..24].copy_from_slice(&1.5f32.to_le_bytes());
        bytes[24..28].copy_from_slice(&(-0.25f32).to_le_bytes());
        let v = decode_volume(&bytes, "x", Path::new("x.svol")).unwrap();
        assert_eq!(v.slices()[0].get(0, 0), 1.0);
        assert_eq!(v.slices()[0].get(0, 1), 0.0);
    }
}
