//! Binary checkpoint format:
//!
//! ```text
//! "LSCK" | version u32 | spec length u32 | spec JSON | stage u8 (0 = none)
//! | seed u64 | epoch u32 | tensor count u32
//! | per tensor, sorted by name: name length u16 | name | kind u8 (0 param, 1 buffer)
//!   | rank u8 | extents u32... | f32 values
//! | SHA-256 of everything above
//! ```
//!
//! Integers and floats are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::arch::ArchitectureSpec;
use crate::dataset::Stage;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Network;
use crate::tensor::{softmax, ParameterSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// A trained network plus the provenance needed to reproduce it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub stage: Option<Stage>,
    pub seed: u64,
    /// Zero-based epoch whose weights were kept.
    pub epoch: usize,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

impl Checkpoint {
    pub fn new(network: Network, stage: Option<Stage>, seed: u64, epoch: usize) -> Self {
        Checkpoint { network, stage, seed, epoch }
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        self.network.spec()
    }

    /// Input resolution as (height, width).
    pub fn resolution(&self) -> (usize, usize) {
        let s = &self.spec().input_shape;
        (s.height, s.width)
    }

    /// Row-wise class probabilities for an input batch.
    pub fn probabilities(&self, x: &Tensor, exec: Exec) -> Result<Tensor> {
        softmax(&self.network.infer(x, exec)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let spec = self.spec().to_json();
        out.extend((spec.len() as u32).to_le_bytes());
        out.extend(spec.as_bytes());
        out.push(self.stage.map_or(0, Stage::number));
        out.extend(self.seed.to_le_bytes());
        out.extend((self.epoch as u32).to_le_bytes());
        let params = self.network.params();
        let mut tensors: Vec<(&str, u8, &Tensor)> =
            params.params().map(|(n, t)| (n, 0, t)).chain(params.buffers().map(|(n, t)| (n, 1, t))).collect();
        tensors.sort_by(|a, b| a.0.cmp(b.0));
        out.extend((tensors.len() as u32).to_le_bytes());
        for (name, kind, t) in tensors {
            out.extend((name.len() as u16).to_le_bytes());
            out.extend(name.as_bytes());
            out.push(kind);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend((d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: payload, pos: 8 };
        let spec_len = r.u32()? as usize;
        let spec_text =
            std::str::from_utf8(r.take(spec_len)?).map_err(|_| Error::Checkpoint("spec is not UTF-8".into()))?;
        let spec = ArchitectureSpec::from_json(spec_text)?;
        let stage = match r.u8()? {
            0 => None,
            n => Some(Stage::try_from(n)?),
        };
        let seed = r.u64()?;
        let epoch = r.u32()? as usize;
        let count = r.u32()?;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let kind = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(shape, data)?;
            match kind {
                0 => params.insert_param(name, t)?,
                1 => params.insert_buffer(name, t)?,
                k => return Err(Error::Checkpoint(format!("unknown tensor kind {k} for `{name}`"))),
            }
        }
        if r.pos != payload.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        let network = Network::from_parameters(&spec, params, seed)?;
        Ok(Checkpoint { network, stage, seed, epoch })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
