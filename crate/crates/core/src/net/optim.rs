use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling applied before the update.
    pub clip_norm: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            decay: 0.99,
            eps: 1e-5,
            clip_norm: 40.0,
        }
    }
}

#[derive(Debug)]
struct Slot {
    values: Vec<f64>,
    sq_avg: Vec<f64>,
}

/// Parameter store shared by all workers. Each tensor sits behind its own
/// lock, so an update is atomic per tensor but not across tensors.
#[derive(Debug)]
pub struct SharedParams {
    spec: NetSpec,
    slots: Vec<Mutex<Slot>>,
    updates: AtomicU64,
    cfg: RmsPropConfig,
}

impl SharedParams {
    pub fn new(params: NetworkParams, cfg: RmsPropConfig) -> SharedParams {
        let spec = params.spec();
        let slots = params
            .tensors
            .into_iter()
            .map(|values| {
                let sq_avg = vec![0.0; values.len()];
                Mutex::new(Slot { values, sq_avg })
            })
            .collect();
        SharedParams {
            spec,
            slots,
            updates: AtomicU64::new(0),
            cfg,
        }
    }

    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    pub fn config(&self) -> RmsPropConfig {
        self.cfg
    }

    pub fn update_count(&self) -> u64 {
        self.updates.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> NetworkParams {
        let mut p = NetworkParams::zeros(self.spec);
        self.snapshot_into(&mut p);
        p
    }

    pub fn snapshot_into(&self, dst: &mut NetworkParams) {
        for (d, slot) in dst.tensors.iter_mut().zip(&self.slots) {
            let s = slot.lock().expect("parameter lock poisoned");
            d.copy_from_slice(&s.values);
        }
    }

    /// Second-moment accumulators, tensor by tensor.
    pub fn optimizer_state(&self) -> Vec<Vec<f64>> {
        self.slots
            .iter()
            .map(|s| s.lock().expect("parameter lock poisoned").sq_avg.clone())
            .collect()
    }
}

/// Clips `grads` to the configured global norm, then applies one RMSProp
/// step per tensor. Returns the gradient norm before clipping.
pub fn apply_update(shared: &SharedParams, grads: &NetworkParams, lr: f64) -> Result<f64, NetError> {
    if grads.spec() != shared.spec {
        return Err(NetError::Shape("gradient shape does not match the shared parameters".into()));
    }
    grads.check_finite()?;
    let cfg = shared.cfg;
    let norm = grads.norm();
    let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
    for (slot, g) in shared.slots.iter().zip(&grads.tensors) {
        let mut s = slot.lock().expect("parameter lock poisoned");
        let Slot { values, sq_avg } = &mut *s;
        for ((v, sq), &gi) in values.iter_mut().zip(sq_avg.iter_mut()).zip(g) {
            let gi = gi * scale;
            *sq = cfg.decay * *sq + (1.0 - cfg.decay) * gi * gi;
            *v -= lr * gi / (sq.sqrt() + cfg.eps);
        }
    }
    shared.updates.fetch_add(1, Ordering::SeqCst);
    Ok(norm)
}
