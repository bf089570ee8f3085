//! Little-endian binary checkpoint: `"PALN"`, version `u32`, tensor count `u32`,
//! then per tensor a `u16` name length, name bytes, `u8` rank, `u32` extents and
//! `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PALN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * params.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(params.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let len = u16::try_from(name.len()).map_err(|_| too_big("name"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.shape().len()).map_err(|_| too_big("rank"))?);
        for &e in t.shape() {
            out.extend_from_slice(&u32::try_from(e).map_err(|_| too_big("extent"))?.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} does not fit the checkpoint format"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic, expected PALN".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut params = ParamSet::default();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("tensor name at byte {} is not UTF-8", r.pos - len)))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| too_big("tensor"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        params.push(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::default();
        p.push("a.weight", Tensor::new([2, 3], vec![0.5, -1.25, 3.0, 0.1, 0.2, 0.3]).unwrap());
        p.push("a.bias", Tensor::new([2], vec![1.0, -2.0]).unwrap());
        p
    }

    #[test]
    fn roundtrip_within_f32() {
        let p = sample();
        let q = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(p.names(), q.names());
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn header_layout() {
        let b = encode_checkpoint(&sample()).unwrap();
        assert_eq!(&b[..4], b"PALN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(b[12..14].try_into().unwrap()), 8);
        assert_eq!(&b[14..22], b"a.weight");
        assert_eq!(b[22], 2);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut b = encode_checkpoint(&sample()).unwrap();
        b[0] = b'X';
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("magic"));
        let mut b = encode_checkpoint(&sample()).unwrap();
        b[4] = 9;
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("version"));
        let b = encode_checkpoint(&sample()).unwrap();
        assert!(decode_checkpoint(&b[..b.len() - 1]).is_err());
    }
}
