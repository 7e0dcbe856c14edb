//! Binary parameter checkpoints, one per component.
//!
//! Layout (little-endian): magic `MDRUMCK\0`, `u32` version, `u32`-prefixed
//! group name, `u32` tensor count, then per tensor a `u32`-prefixed name, a
//! `u32` rank and `u64` dims, followed by every value as `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Component, Model};

pub const MAGIC: &[u8; 8] = b"MDRUMCK\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model, c: Component) -> Vec<u8> {
    let tensors = model.tensors(c);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, c.as_str());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        put_str(&mut out, &t.name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

/// Group name stored in a checkpoint header.
pub fn peek_group(bytes: &[u8]) -> Result<Component> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<Component> {
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.string()?.parse()
}

/// Overwrite component `c` of `model` from `bytes`. Names and shapes must
/// match the model exactly; on error the model is left untouched.
pub fn decode_into(model: &mut Model, c: Component, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let group = header(&mut r)?;
    if group != c {
        return Err(Error::Checkpoint(format!("expected group {c}, found {group}")));
    }
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors(c)
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{c}: expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let found = r.string()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &found != name || &dims != shape {
            return Err(Error::Checkpoint(format!(
                "{c}: tensor {found} {dims:?} does not match {name} {shape:?}"
            )));
        }
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let body = r.take(total * 8)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{c}: trailing bytes")));
    }
    let mut values = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
    for t in model.tensors_mut(c) {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn round_trip_is_bitwise() {
        let a = Model::new(ModelConfig::default(), 1).unwrap();
        let mut b = Model::new(ModelConfig::default(), 2).unwrap();
        for c in Component::ALL {
            let bytes = encode(&a, c);
            assert_eq!(peek_group(&bytes).unwrap(), c);
            decode_into(&mut b, c, &bytes).unwrap();
            assert!(a.group_eq(&b, c));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let a = Model::new(ModelConfig::default(), 1).unwrap();
        let mut b = a.clone();
        let bytes = encode(&a, Component::Fusion);
        assert!(decode_into(&mut b, Component::Decoder, &bytes).is_err());
        assert!(decode_into(&mut b, Component::Fusion, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_into(&mut b, Component::Fusion, &bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_into(&mut b, Component::Fusion, &long).is_err());
        assert_eq!(a, b);
    }
}
