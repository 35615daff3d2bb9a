//! Multi-agent train rescheduling lab.
//!
//! * [`grid`], [`env`], [`path`]: the rail environment and its topology.
//! * [`gen`]: random network generator and curriculum schedule.
//! * [`obs`]: section-tree observations and decision-point detection.
//! * [`net`]: the recurrent actor-critic, its gradients and the shared optimizer.
//! * [`trainer`]: asynchronous training, masked rollouts and evaluation.
//! * [`comm`]: the two-train communication experiment.
//! * [`metrics`], [`replay`], [`config`], [`render`]: reporting and I/O.

pub mod comm;
pub mod config;
pub mod error;
pub mod env;
pub mod gen;
pub mod metrics;
pub mod grid;
pub mod net;
pub mod obs;
pub mod path;
pub mod render;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};

/// First eight bytes of the SHA-256 of `bytes`, little endian.
pub fn digest64(bytes: &[u8]) -> u64 {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&d[..8]);
    u64::from_le_bytes(out)
}
