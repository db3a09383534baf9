//! Binary tensor container.
//!
//! Layout: magic `CIET`, `u8` version (1), `u8` dtype (0 = f32 little-endian),
//! `u8` ndim, one `u64` (little-endian) per dimension, then the row-major
//! payload. Containers can be concatenated; parameter checkpoints and
//! out-of-line hidden states address them by byte offset.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CIET";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Tensor(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Size in bytes of the encoded container.
    pub fn encoded_len(&self) -> usize {
        4 + 3 + 8 * self.shape.len() + 4 * self.data.len()
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        match self.shape.as_slice() {
            [rows, cols] => Ok(self.data.chunks(*cols.max(&1)).take(*rows).map(<[f64]>::to_vec).collect()),
            other => Err(Error::Tensor(format!("expected a 2-D tensor, got shape {other:?}"))),
        }
    }
}

pub fn write_tensor<W: Write>(w: &mut W, shape: &[usize], data: &[f64]) -> std::io::Result<usize> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut buf = Vec::with_capacity(7 + 8 * shape.len() + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(DTYPE_F32);
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|e| Error::Tensor(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(Error::Tensor("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Tensor(format!("unsupported version {}", head[4])));
    }
    if head[5] != DTYPE_F32 {
        return Err(Error::Tensor(format!("unsupported dtype {}", head[5])));
    }
    let ndim = head[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|e| Error::Tensor(format!("truncated shape: {e}")))?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; 4 * n];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Tensor(format!("truncated payload: {e}")))?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor { shape, data })
}

pub fn read_tensor_at(path: &Path, offset: u64) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    reader
        .seek(SeekFrom::Start(offset))
        .map_err(|e| Error::io(path, e))?;
    read_tensor(&mut reader)
}
