//! Binary checkpoint: magic, version, shape header, hyperparameters, then
//! every tensor as a length-prefixed run of little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, FormatError};

const MAGIC: &[u8; 8] = b"RMNETCK\0";
const VERSION: u32 = 1;

/// Hyperparameters stored next to the weights for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub gamma: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub decision_steps: u64,
}

pub fn write_checkpoint(params: &NetworkParams, meta: &CheckpointMeta) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::with_capacity(64 + params.param_count() * 8 + N_TENSORS * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(spec.n_actions as u64).to_le_bytes());
    out.push(spec.lstm as u8);
    for v in [meta.gamma, meta.lr, meta.entropy_coef, meta.value_coef] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&meta.decision_steps.to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.at < n {
            return Err(FormatError::new(self.at, format!("truncated while reading {what} (byte offset)")));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(NetworkParams, CheckpointMeta), Error> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(FormatError::new(0, "not a network checkpoint (bad magic)").into());
    }
    let version = u32::from_le_bytes(c.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::new(0, format!("unsupported checkpoint version {version}")).into());
    }
    let input_dim = c.u64("input_dim")? as usize;
    let n_actions = c.u64("n_actions")? as usize;
    let lstm = match c.take(1, "lstm flag")?[0] {
        0 => false,
        1 => true,
        b => return Err(FormatError::new(c.at - 1, format!("bad lstm flag {b} (byte offset)")).into()),
    };
    if input_dim == 0 || n_actions == 0 || input_dim > 1 << 20 || n_actions > 1 << 16 {
        return Err(FormatError::new(0, format!("implausible shape {input_dim}x{n_actions}")).into());
    }
    let meta = CheckpointMeta {
        gamma: c.f64("gamma")?,
        lr: c.f64("lr")?,
        entropy_coef: c.f64("entropy_coef")?,
        value_coef: c.f64("value_coef")?,
        decision_steps: c.u64("decision_steps")?,
    };
    let spec = NetSpec {
        input_dim,
        n_actions,
        lstm,
    };
    let mut tensors = Vec::with_capacity(N_TENSORS);
    for (i, (r, cols)) in spec.shapes().iter().enumerate() {
        let len = c.u64(TENSOR_NAMES[i])? as usize;
        if len != r * cols {
            return Err(FormatError::new(
                0,
                format!("{} declares {len} values, expected {}", TENSOR_NAMES[i], r * cols),
            )
            .into());
        }
        let raw = c.take(len * 8, TENSOR_NAMES[i])?;
        tensors.push(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect());
    }
    if c.at != bytes.len() {
        return Err(FormatError::new(0, format!("{} trailing bytes", bytes.len() - c.at)).into());
    }
    Ok((NetworkParams::from_tensors(spec, tensors)?, meta))
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams, meta: &CheckpointMeta) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&write_checkpoint(params, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, CheckpointMeta), Error> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = init_params(NetSpec::new(112, 5), 3).unwrap();
        p.tensor_mut(V_B)[0] = -0.0;
        p.tensor_mut(PI_B)[2] = f64::MIN_POSITIVE / 3.0;
        let meta = CheckpointMeta {
            gamma: 0.99,
            lr: 1e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            decision_steps: 1234,
        };
        let bytes = write_checkpoint(&p, &meta);
        let (q, m) = read_checkpoint(&bytes).unwrap();
        assert_eq!(m, meta);
        for (a, b) in p.iter().zip(q.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(write_checkpoint(&q, &m), bytes);
    }

    #[test]
    fn truncation_and_garbage_are_errors() {
        let p = init_params(NetSpec::new(4, 2), 0).unwrap();
        let bytes = write_checkpoint(&p, &CheckpointMeta::default());
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
    }

    #[test]
    fn no_lstm_spec_survives() {
        let spec = NetSpec {
            lstm: false,
            ..NetSpec::new(7, 3)
        };
        let p = init_params(spec, 0).unwrap();
        let (q, _) = read_checkpoint(&write_checkpoint(&p, &CheckpointMeta::default())).unwrap();
        assert_eq!(q.spec(), spec);
        assert_eq!(q, p);
    }
}
