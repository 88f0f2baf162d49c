//! Binary weight files.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        b"SLCK"
//! version      u32 = 1
//! config       10 × u32   channels height width features res_blocks
//!                         patch attn_dim time_dim depth ffn_hidden
//! init_seed    u64
//! den_hidden   u32        0 when no noise predictor is stored
//! records      u32        count, then per record:
//!   name_len u32, name (UTF-8), rank u32, dims rank × u32, values f64 × Π dims
//! ```
//!
//! Every parameter of the described model must appear exactly once.

use std::collections::HashMap;
use std::path::Path;

use crate::blocks::{BlockParams, ModelConfig};
use crate::denoiser::ToyDenoiser;
use crate::error::{DiffusionError, Result};
use crate::layers::{Module, Param};

pub const MAGIC: [u8; 4] = *b"SLCK";
pub const VERSION: u32 = 1;

/// Condition branch with an optional trained noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub blocks: BlockParams,
    pub denoiser: Option<ToyDenoiser>,
}

impl Checkpoint {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.blocks.params();
        if let Some(d) = &self.denoiser {
            out.extend(d.params());
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.blocks.config;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        for v in [
            c.channels,
            c.height,
            c.width,
            c.features,
            c.res_blocks,
            c.patch,
            c.attn_dim,
            c.time_dim,
            c.depth,
            c.ffn_hidden,
        ] {
            put_u32(&mut out, v as u32);
        }
        out.extend_from_slice(&self.blocks.init_seed.to_le_bytes());
        put_u32(
            &mut out,
            self.denoiser.as_ref().map_or(0, |d| d.hidden() as u32),
        );
        let params = self.params();
        put_u32(&mut out, params.len() as u32);
        for p in params {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.shape.len() as u32);
            for &d in &p.shape {
                put_u32(&mut out, d as u32);
            }
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 10];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            features: dims[3],
            res_blocks: dims[4],
            patch: dims[5],
            attn_dim: dims[6],
            time_dim: dims[7],
            depth: dims[8],
            ffn_hidden: dims[9],
        };
        // Guard against absurd allocations from a corrupt header.
        if dims.iter().any(|&d| d > 1 << 16) {
            return Err(bad("model dimension out of range"));
        }
        let init_seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let hidden = r.u32()? as usize;
        let blocks = BlockParams::new(config, init_seed).map_err(|e| bad(e.to_string()))?;
        let denoiser = match hidden {
            0 => None,
            h => Some(ToyDenoiser::new(config.channels, h, config.time_dim, 0)?),
        };
        let mut ckpt = Checkpoint { blocks, denoiser };

        let count = r.u32()? as usize;
        let mut records: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("record name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| bad(format!("record {name} is truncated")))?;
            let values = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if records.insert(name.clone(), (shape, values)).is_some() {
                return Err(bad(format!("duplicate record {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }

        let mut failure = None;
        let mut fill = |p: &mut Param| match records.remove(&p.name) {
            Some((shape, values)) if shape == p.shape => p.value = values,
            Some((shape, _)) => {
                failure.get_or_insert(format!(
                    "{}: shape {shape:?}, expected {:?}",
                    p.name, p.shape
                ));
            }
            None => {
                failure.get_or_insert(format!("missing record {}", p.name));
            }
        };
        ckpt.blocks.visit_mut(&mut fill);
        if let Some(d) = &mut ckpt.denoiser {
            d.visit_mut(&mut fill);
        }
        if let Some(msg) = failure {
            return Err(bad(msg));
        }
        if let Some(name) = records.keys().next() {
            return Err(bad(format!("unexpected record {name}")));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn bad(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(bad("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
