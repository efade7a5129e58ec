//! IDX container (the MNIST distribution format): big-endian magic, u32
//! dimensions, raw unsigned-byte payload. Gzip-wrapped input is detected
//! and inflated transparently.

use std::io::Read;

use flate2::read::GzDecoder;

use crate::error::{Result, SnnError};

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::Images { count, .. } => *count,
            IdxData::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                let mut out = Vec::with_capacity(16 + pixels.len());
                for v in [MAGIC_IMAGES, *count as u32, *rows as u32, *cols as u32] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                out.extend_from_slice(pixels);
                out
            }
            IdxData::Labels(labels) => {
                let mut out = Vec::with_capacity(8 + labels.len());
                out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
                out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
                out.extend_from_slice(labels);
                out
            }
        }
    }
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x1f, 0x8b])
}

pub fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| SnnError::Data(format!("gzip stream: {e}")))?;
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SnnError::Idx {
            offset,
            reason: format!("header truncated ({} bytes available)", bytes.len()),
        })
}

/// Parses an IDX image or label file, inflating gzip input first.
pub fn load_idx(bytes: &[u8]) -> Result<IdxData> {
    if is_gzip(bytes) {
        return load_idx(&gunzip(bytes)?);
    }
    let magic = read_u32(bytes, 0)?;
    let ndim = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => {
            return Err(SnnError::Idx {
                offset: 0,
                reason: format!("unsupported magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndim;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(SnnError::Idx {
            offset: 4,
            reason: format!("dimensions {dims:?} overflow"),
        })?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(SnnError::Idx {
            offset: header + payload.len().min(expected),
            reason: format!(
                "payload has {} bytes, header promises {expected}",
                payload.len()
            ),
        });
    }
    Ok(match ndim {
        3 => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload.to_vec(),
        },
        _ => IdxData::Labels(payload.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::{write::GzEncoder, Compression};

    use super::*;

    fn images(count: usize) -> IdxData {
        IdxData::Images {
            count,
            rows: 28,
            cols: 28,
            pixels: (0..count * 784).map(|i| (i % 251) as u8).collect(),
        }
    }

    #[test]
    fn full_size_headers() {
        let test = images(10_000);
        let parsed = load_idx(&test.to_bytes()).unwrap();
        assert_eq!(parsed.len(), 10_000);
        let labels = IdxData::Labels(vec![3; 60_000]);
        let parsed = load_idx(&labels.to_bytes()).unwrap();
        assert_eq!(parsed, labels);
    }

    #[test]
    fn short_payload_is_an_error() {
        let mut bytes = images(3).to_bytes();
        bytes.pop();
        match load_idx(&bytes) {
            Err(SnnError::Idx { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_and_bad_magic_are_errors() {
        let mut bytes = IdxData::Labels(vec![1, 2]).to_bytes();
        bytes.push(0);
        assert!(load_idx(&bytes).is_err());
        let mut bytes = IdxData::Labels(vec![1, 2]).to_bytes();
        bytes[3] = 0x02;
        assert!(matches!(load_idx(&bytes), Err(SnnError::Idx { offset: 0, .. })));
        assert!(load_idx(&[0, 0, 8]).is_err());
    }

    #[test]
    fn overflowing_dimensions_are_rejected() {
        let mut bytes = Vec::new();
        for v in [MAGIC_IMAGES, u32::MAX, u32::MAX, u32::MAX] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert!(load_idx(&bytes).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        let raw = images(2).to_bytes();
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(load_idx(&gz).unwrap(), images(2));
    }
}
