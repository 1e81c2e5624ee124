//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "WCTNASCK"
//! version      u32      1
//! genome       u32 length + UTF-8 bytes (may be empty)
//! channel plan u32 count + count x u32
//! tensors      u32 count, then per tensor:
//!                u32 name length + UTF-8 name
//!                u32 rank + rank x u64 extents
//!                numel x f64
//! ```
//!
//! The same container stores single tensors (oracle output cache) with an
//! empty genome and channel plan.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WCTNASCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub genome: String,
    pub channel_plan: Vec<usize>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn single(name: &str, tensor: Tensor) -> Self {
        Self {
            genome: String::new(),
            channel_plan: Vec::new(),
            tensors: vec![(name.to_string(), tensor)],
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_str(w, &self.genome)?;
        put_u32(w, len_u32(self.channel_plan.len())?)?;
        for &c in &self.channel_plan {
            put_u32(w, len_u32(c)?)?;
        }
        put_u32(w, len_u32(self.tensors.len())?)?;
        for (name, t) in &self.tensors {
            put_str(w, name)?;
            put_u32(w, len_u32(t.shape().len())?)?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let genome = get_str(r)?;
        let n_plan = get_u32(r)? as usize;
        let channel_plan = (0..n_plan)
            .map(|_| get_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_tensors = get_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(1024));
        for _ in 0..n_tensors {
            let name = get_str(r)?;
            let rank = get_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(
                    usize::try_from(u64::from_le_bytes(b)).map_err(|_| {
                        Error::Checkpoint(format!("tensor {name} extent overflows"))
                    })?,
                );
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let mut bytes = vec![
                0u8;
                numel.checked_mul(8).ok_or_else(|| {
                    Error::Checkpoint(format!("tensor {name} is too large"))
                })?
            ];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            genome,
            channel_plan,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{n} does not fit in u32")))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, len_u32(s.len())?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "string length {n} is implausible"
        )));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}
