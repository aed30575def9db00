//! `SVC1` parameter container: a flat list of named 32-bit tensors.
//!
//! Layout (little endian):
//! ```text
//! b"SVC1"  u32 version  u32 count
//! repeat count times:
//!     u32 name_len  name (utf-8)  u32 ndim  u32 dims[ndim]  f32 values[prod(dims)]
//! ```

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"SVC1";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Container(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Container("bad magic, expected SVC1".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Container(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| NnError::Container("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| NnError::Container("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(NnError::Container(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<(), NnError> {
    fs::write(path, encode(tensors)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let good = encode(&[("a".into(), Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())]);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(&good).is_ok());
    }

    proptest! {
        #[test]
        fn roundtrip(dims in proptest::collection::vec(1usize..4, 1..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(seed) as f32).sin()).collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let items = vec![("layer.0/weight".to_string(), t.clone()), ("e".to_string(), t)];
            prop_assert_eq!(decode(&encode(&items)).unwrap(), items);
        }
    }
}
