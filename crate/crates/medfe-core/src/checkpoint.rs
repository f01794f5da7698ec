//! Flat binary parameter container.
//!
//! Layout: magic `MEDFE1`, then per entry: name length (u32 LE), UTF-8
//! name, rank (u32 LE, always 4 here), dims (u32 LE each), then the raw
//! values as little-endian f64. Entries repeat until end of buffer, so
//! round-trips are bit-exact by construction.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 6] = b"MEDFE1";

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in tensor.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Format(alloc::format!(
                "truncated checkpoint: needed {} bytes for {} at offset {}",
                len,
                what,
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(alloc::format!(
            "bad magic at offset 0: expected {:?}",
            core::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name_pos = cur.pos;
        let name = core::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| {
                Error::Format(alloc::format!("non-UTF-8 name at offset {}", name_pos))
            })?
            .into();
        let rank = cur.u32("rank")? as usize;
        if rank != 4 {
            return Err(Error::Format(alloc::format!(
                "unsupported rank {} at offset {}",
                rank,
                cur.pos - 4
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = cur.u32("dim")? as usize;
        }
        let shape = Shape(dims);
        let raw = cur.take(shape.count() * 8, "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        entries.push((name, Tensor::new(shape, values)?));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn roundtrip_is_bit_exact() {
        let entries = vec![
            (
                "a.weight".to_string(),
                Tensor::from_fn(Shape::nchw(2, 3, 1, 4), |i| (i as f64).sin() * 1e-3),
            ),
            ("b.bias".to_string(), Tensor::scalar(-0.0)),
        ];
        let bytes = encode(&entries);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(back.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data().iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let entries = vec![(
            "w".to_string(),
            Tensor::from_fn(Shape::nchw(1, 1, 2, 2), |i| i as f64),
        )];
        let bytes = encode(&entries);
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("offset"), "{msg}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(decode(b"NOPE!!rest").is_err());
    }
}
