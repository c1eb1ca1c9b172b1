//! Parameter checkpoints.
//!
//! Flat binary container: header (magic `LQIQ`, format version `u32`, tensor
//! count `u32`), then per tensor: name length `u16`, UTF-8 name, rank `u8`,
//! dims as `u32`, raw `f32` data. All integers and floats little-endian.
//! Round-trips are bit-exact for f32 tensors; f64 tensors are narrowed to
//! f32 on save (the on-disk format is fixed).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: [u8; 4] = *b"LQIQ";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save(path: &Path, entries: &[TensorEntry]) -> Result<()> {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        assert!(name.len() <= u16::MAX as usize, "tensor name too long");
        let numel: usize = e.shape.iter().product();
        assert_eq!(numel, e.data.len(), "entry {}: shape/data mismatch", e.name);
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.shape.len() as u8);
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated checkpoint: need {} bytes for {} at offset {}, file has {}",
                    n,
                    what,
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Vec<TensorEntry>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic: expected {:02x?}, found {:02x?}", MAGIC, magic),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {} (expected {})", version, VERSION),
        ));
    }
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not valid UTF-8"))?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("data of {}", name))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(TensorEntry { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after offset {}", buf.len() - r.pos, r.pos),
        ));
    }
    Ok(entries)
}

/// Save named parameter tensors (narrowing to f32 for the wire format).
pub fn save_params<E: Element>(path: &Path, params: &[(String, Tensor<E>)]) -> Result<()> {
    let entries: Vec<TensorEntry> = params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v.as_f32()).collect(),
        })
        .collect();
    save(path, &entries)
}

/// Load a checkpoint into existing parameter tensors, matched by name.
/// Every parameter must be present with an identical shape.
pub fn load_params<E: Element>(path: &Path, params: &[(String, Tensor<E>)]) -> Result<()> {
    let entries = load(path)?;
    for (name, t) in params {
        let entry = entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::Contract(format!("checkpoint {} is missing tensor {}", path.display(), name)))?;
        if entry.shape != t.shape() {
            return Err(Error::Contract(format!(
                "checkpoint tensor {} has shape {:?}, model expects {:?}",
                name,
                entry.shape,
                t.shape()
            )));
        }
        let mut data = t.data_mut();
        for (dst, &src) in data.iter_mut().zip(entry.data.iter()) {
            *dst = E::from_f32(src);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(entries: &[TensorEntry]) -> Vec<TensorEntry> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(&path, entries).unwrap();
        load(&path).unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        let entries = vec![
            TensorEntry {
                name: "w".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 3.25e-7, f32::MIN_POSITIVE, 0.1, -0.0],
            },
            TensorEntry {
                name: "b".into(),
                shape: vec![1],
                data: vec![42.0],
            },
        ];
        let back = roundtrip(&entries);
        assert_eq!(back.len(), 2);
        for (a, b) in entries.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn bad_magic_reports_expected_and_found() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        assert!(err.contains("4c, 51, 49, 51") || err.contains("4c, 51"), "{err}");
    }

    #[test]
    fn truncated_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(
            &path,
            &[TensorEntry {
                name: "w".into(),
                shape: vec![4],
                data: vec![0.0; 4],
            }],
        )
        .unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains("offset"), "{err}");
    }
}
