use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"NPBD";

/// Learnable `N x M` per-point descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet<R> {
    values: Tensor<R>,
    pub requires_grad: bool,
}

impl<R: Real> DescriptorSet<R> {
    pub fn zeros(points: usize, width: usize) -> Self {
        DescriptorSet {
            values: Tensor::zeros(&[points, width]),
            requires_grad: true,
        }
    }

    pub fn from_tensor(values: Tensor<R>) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape(
                "descriptors",
                format!("expected [N, M], got {:?}", values.shape()),
            ));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite { op: "descriptors" });
        }
        Ok(DescriptorSet {
            values,
            requires_grad: true,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[R] {
        let m = self.width();
        &self.values.data()[i * m..(i + 1) * m]
    }

    pub fn values(&self) -> &Tensor<R> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor<R> {
        &mut self.values
    }

    /// Row-wise concatenation (`self` first).
    pub fn concat(&self, other: &DescriptorSet<R>) -> Result<Self> {
        if self.width() != other.width() {
            return Err(Error::shape(
                "descriptors",
                format!("descriptor widths differ: {} vs {}", self.width(), other.width()),
            ));
        }
        let mut data = self.values.data().to_vec();
        data.extend_from_slice(other.values.data());
        Ok(DescriptorSet {
            values: Tensor::from_vec(&[self.len() + other.len(), self.width()], data)?,
            requires_grad: self.requires_grad,
        })
    }

    pub fn cast<S: Real>(&self) -> DescriptorSet<S> {
        DescriptorSet {
            values: self.values.cast(),
            requires_grad: self.requires_grad,
        }
    }
}

/// `"NPBD"`, u32 N, u32 M, then `N*M` little-endian f32, row-major.
pub fn write_descriptors<W: Write>(mut out: W, desc: &DescriptorSet<f32>) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(desc.len() as u32).to_le_bytes())?;
    out.write_all(&(desc.width() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(desc.values().len() * 4);
    for v in desc.values().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_descriptors<Rd: Read>(mut input: Rd, path: &Path) -> Result<DescriptorSet<f32>> {
    let bad = |detail: &str| Error::malformed("descriptor file", path, detail);
    let mut header = [0u8; 12];
    input
        .read_exact(&mut header)
        .map_err(|_| bad("truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(bad("bad magic (expected NPBD)"));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = n
        .checked_mul(m)
        .ok_or_else(|| bad("descriptor extents overflow"))?;
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(bad(&format!(
            "expected {} bytes of values, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DescriptorSet::from_tensor(Tensor::from_vec(&[n, m], data)?)
        .map_err(|e| bad(&e.to_string()))
}

pub fn save_descriptors(path: &Path, desc: &DescriptorSet<f32>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_descriptors(std::io::BufWriter::new(file), desc).map_err(|e| Error::io(path, e))
}

pub fn load_descriptors(path: &Path) -> Result<DescriptorSet<f32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_descriptors(std::io::BufReader::new(file), path)
}
