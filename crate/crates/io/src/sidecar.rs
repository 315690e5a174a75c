//! Binary embedding sidecar.
//!
//! Layout, all little-endian: magic `RDSE`, `dim: u32`, `count: u64`, then
//! `count * dim` f32 values row-major. Row i belongs to the i-th sample of
//! the records in file order (greedy answers are not included).

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::DataError;

pub const SIDECAR_MAGIC: [u8; 4] = *b"RDSE";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    dim: usize,
    data: Vec<f32>,
}

impl Sidecar {
    pub fn new<V: AsRef<[f32]>>(rows: &[V]) -> Result<Self, DataError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        if dim == 0 {
            return Err(DataError::Sidecar("rows must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(DataError::Sidecar(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self, DataError> {
        let mut header = [0u8; HEADER_LEN];
        reader
            .read_exact(&mut header)
            .map_err(|_| DataError::Sidecar("truncated header".into()))?;
        if header[..4] != SIDECAR_MAGIC {
            return Err(DataError::Sidecar("bad magic".into()));
        }
        let dim = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        if dim == 0 {
            return Err(DataError::Sidecar("dimension is zero".into()));
        }
        let values = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dim))
            .ok_or_else(|| DataError::Sidecar("row count overflows".into()))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(DataError::Read)?;
        if bytes.len() != values * 4 {
            return Err(DataError::Sidecar(format!(
                "payload is {} bytes, header implies {}",
                bytes.len(),
                values * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dim, data })
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(&SIDECAR_MAGIC)?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        writer.write_all(&(self.len() as u64).to_le_bytes())?;
        for x in &self.data {
            writer.write_all(&x.to_le_bytes())?;
        }
        writer.flush()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        self.data.get(i * self.dim..(i + 1) * self.dim)
    }
}
