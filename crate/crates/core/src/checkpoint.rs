//! Named-tensor checkpoints.
//!
//! Layout (all integers little-endian):
//! `"NPBGCKPT"`, version `u32`, count `u32`, then per tensor: name length
//! `u16` + UTF-8 bytes, rank `u32`, extents `u32 x rank`, values `f32 x prod(extents)`
//! row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NPBGCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, tensors: &[(String, Tensor<f32>)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor name longer than 65535 bytes")
        })?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::malformed("checkpoint", self.path, format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<Rd: Read>(input: Rd, path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { inner: input, path };
    let bad = |detail: String| Error::malformed("checkpoint", path, detail);
    if r.bytes(8, "magic")? != MAGIC {
        return Err(bad("bad magic (expected NPBGCKPT)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = u16::from_le_bytes(r.bytes(2, "name length")?.try_into().unwrap());
        let name = String::from_utf8(r.bytes(len as usize, "name")?)
            .map_err(|_| bad(format!("tensor {i}: name is not UTF-8")))?;
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(bad(format!("tensor '{name}': implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 4, "values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor '{name}' has non-finite values")));
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, tensors).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}
