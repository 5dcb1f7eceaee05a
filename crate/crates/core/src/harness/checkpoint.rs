//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  b"AEVC"
//! u32    format version
//! u64    input_dim, hidden_dim, latent_dim, image height, image width
//! f64    c
//! u64    seed
//! f64    final validation loss
//! u32    tensor count
//!        per tensor: u32 ndim, u64 dims[ndim], f64 values
//! u32    CRC-32 of every preceding byte
//! ```

use std::path::Path;

use super::output::write_atomic;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::vae::{VaeConfig, VaeParams};

pub const MAGIC: [u8; 4] = *b"AEVC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: VaeConfig,
    pub height: usize,
    pub width: usize,
    pub final_val_loss: f64,
    pub params: VaeParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.config.input_dim,
            self.config.hidden_dim,
            self.config.latent_dim,
            self.height,
            self.width,
        ] {
            b.extend_from_slice(&(v as u64).to_le_bytes());
        }
        b.extend_from_slice(&self.config.c.to_le_bytes());
        b.extend_from_slice(&self.config.seed.to_le_bytes());
        b.extend_from_slice(&self.final_val_loss.to_le_bytes());
        let tensors = self.params.tensors();
        b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch, file is corrupted".into()));
        }
        let mut r = Reader { bytes: body, at: 8 };
        let input_dim = r.usize()?;
        let hidden_dim = r.usize()?;
        let latent_dim = r.usize()?;
        let height = r.usize()?;
        let width = r.usize()?;
        let c = r.f64()?;
        let seed = r.u64()?;
        let final_val_loss = r.f64()?;
        let count = r.u32()? as usize;
        if count != 10 {
            return Err(Error::Checkpoint(format!("expected 10 tensors, found {count}")));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("implausible tensor rank {ndim}")));
            }
            let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<usize>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::Checkpoint("tensor larger than file".into()))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        let params = VaeParams::from_tensors(tensors)?;
        let config = VaeConfig {
            input_dim,
            hidden_dim,
            latent_dim,
            c,
            seed,
        };
        config.validate()?;
        if (params.input_dim(), params.hidden_dim(), params.latent_dim()) != (input_dim, hidden_dim, latent_dim)
            || height * width != input_dim
        {
            return Err(Error::Checkpoint("tensor shapes disagree with the stored config".into()));
        }
        Ok(Self {
            config,
            height,
            width,
            final_val_loss,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}
