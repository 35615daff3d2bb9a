//! Recurrent actor-critic: FC128 -> FC64 -> LSTM64 -> FC64 -> {policy, value}.
//!
//! Everything is explicit 64-bit arithmetic on flat row-major buffers; the
//! backward pass is hand-written truncated backpropagation through time.

mod checkpoint;
mod forward;
mod grad;
mod linalg;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta};
pub use forward::{forward, forward_masked, masked_softmax, ForwardOutput};
pub use grad::{a3c_gradients, discounted_returns, LossCoefs, LossDiagnostics, TrajStep, Trajectory};
pub use optim::{apply_update, RmsPropConfig, SharedParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;

pub const FC1: usize = 128;
pub const FC2: usize = 64;
pub const HIDDEN: usize = 64;
pub const FC3: usize = 64;
/// Input, forget, output and candidate gates stacked in that order.
pub const GATES: usize = 4 * HIDDEN;

pub const FC1_W: usize = 0;
pub const FC1_B: usize = 1;
pub const FC2_W: usize = 2;
pub const FC2_B: usize = 3;
pub const LSTM_W: usize = 4;
pub const LSTM_B: usize = 5;
pub const FC3_W: usize = 6;
pub const FC3_B: usize = 7;
pub const PI_W: usize = 8;
pub const PI_B: usize = 9;
pub const V_W: usize = 10;
pub const V_B: usize = 11;
pub const N_TENSORS: usize = 12;

pub const TENSOR_NAMES: [&str; N_TENSORS] = [
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "lstm.weight",
    "lstm.bias",
    "fc3.weight",
    "fc3.bias",
    "policy.weight",
    "policy.bias",
    "value.weight",
    "value.bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub n_actions: usize,
    /// Without the recurrent layer FC2 feeds FC3 directly.
    pub lstm: bool,
}

impl NetSpec {
    pub fn new(input_dim: usize, n_actions: usize) -> NetSpec {
        NetSpec {
            input_dim,
            n_actions,
            lstm: true,
        }
    }

    /// (rows, cols) of each tensor; biases are (rows, 1).
    pub fn shapes(&self) -> [(usize, usize); N_TENSORS] {
        let (lw, lb) = if self.lstm {
            ((GATES, FC2 + HIDDEN), (GATES, 1))
        } else {
            ((0, 0), (0, 1))
        };
        let fc3_in = if self.lstm { HIDDEN } else { FC2 };
        [
            (FC1, self.input_dim),
            (FC1, 1),
            (FC2, FC1),
            (FC2, 1),
            lw,
            lb,
            (FC3, fc3_in),
            (FC3, 1),
            (self.n_actions, FC3),
            (self.n_actions, 1),
            (1, FC3),
            (1, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetSpec,
    tensors: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn zeros(spec: NetSpec) -> NetworkParams {
        let tensors = spec.shapes().iter().map(|(r, c)| vec![0.0; r * c]).collect();
        NetworkParams { spec, tensors }
    }

    pub fn from_tensors(spec: NetSpec, tensors: Vec<Vec<f64>>) -> Result<NetworkParams, NetError> {
        if tensors.len() != N_TENSORS {
            return Err(NetError::Shape(format!("expected {N_TENSORS} tensors, got {}", tensors.len())));
        }
        for (i, ((r, c), t)) in spec.shapes().iter().zip(&tensors).enumerate() {
            if t.len() != r * c {
                return Err(NetError::Shape(format!(
                    "{} has {} values, expected {}",
                    TENSOR_NAMES[i],
                    t.len(),
                    r * c
                )));
            }
        }
        let p = NetworkParams { spec, tensors };
        p.check_finite()?;
        Ok(p)
    }

    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flatten()
    }

    pub fn check_finite(&self) -> Result<(), NetError> {
        for (i, t) in self.tensors.iter().enumerate() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite(TENSOR_NAMES[i]));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.spec == other.spec
    }

    pub fn copy_from(&mut self, other: &NetworkParams) {
        for (d, s) in self.tensors.iter_mut().zip(&other.tensors) {
            d.copy_from_slice(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (d, s) in self.tensors.iter_mut().zip(&other.tensors) {
            linalg::axpy(scale, s, d);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Recurrent state carried between decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros() -> LstmState {
        LstmState {
            hidden: vec![0.0; HIDDEN],
            cell: vec![0.0; HIDDEN],
        }
    }
}

impl Default for LstmState {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Uniform weights in +-1/sqrt(fan_in), zero biases except the LSTM forget gate at 1.
pub fn init_params(spec: NetSpec, seed: u64) -> Result<NetworkParams, NetError> {
    if spec.input_dim == 0 || spec.n_actions == 0 {
        return Err(NetError::Shape("input_dim and n_actions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::zeros(spec);
    let shapes = spec.shapes();
    for i in [FC1_W, FC2_W, LSTM_W, FC3_W, PI_W, V_W] {
        let (_, fan_in) = shapes[i];
        if fan_in == 0 {
            continue;
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in p.tensors[i].iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
    }
    if spec.lstm {
        p.tensors[LSTM_B][HIDDEN..2 * HIDDEN].fill(1.0);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let s = NetSpec::new(112, 5);
        assert_eq!(init_params(s, 9).unwrap(), init_params(s, 9).unwrap());
        assert_ne!(init_params(s, 9).unwrap(), init_params(s, 10).unwrap());
    }

    #[test]
    fn biases_zero_except_forget_gate() {
        let p = init_params(NetSpec::new(112, 5), 1).unwrap();
        for i in [FC1_B, FC2_B, FC3_B, PI_B, V_B] {
            assert!(p.tensor(i).iter().all(|&b| b == 0.0));
        }
        let lb = p.tensor(LSTM_B);
        for (k, &b) in lb.iter().enumerate() {
            let forget = (HIDDEN..2 * HIDDEN).contains(&k);
            assert_eq!(b, if forget { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        // fc1 112*128+128, fc2 128*64+64, lstm 4*64*(64+64)+4*64,
        // fc3 64*64+64, policy 64*5+5, value 64+1
        let expected = 14_464 + 8_256 + 33_024 + 4_160 + 325 + 65;
        let p = init_params(NetSpec::new(112, 5), 0).unwrap();
        assert_eq!(p.param_count(), expected);
        assert_eq!(NetSpec::new(112, 5).param_count(), 60_294);
        let no_lstm = NetSpec {
            lstm: false,
            ..NetSpec::new(112, 5)
        };
        assert_eq!(no_lstm.param_count(), expected - 33_024);
    }

    #[test]
    fn weights_within_fan_in_bound() {
        let p = init_params(NetSpec::new(10, 3), 4).unwrap();
        let bound = 1.0 / (10f64).sqrt();
        assert!(p.tensor(FC1_W).iter().all(|w| w.abs() <= bound));
        let bound = 1.0 / (128f64).sqrt();
        assert!(p.tensor(LSTM_W).iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(init_params(NetSpec::new(0, 5), 0).is_err());
        assert!(init_params(NetSpec::new(5, 0), 0).is_err());
    }

    #[test]
    fn from_tensors_rejects_nan() {
        let s = NetSpec::new(3, 2);
        let mut t: Vec<Vec<f64>> = init_params(s, 0).unwrap().tensors().to_vec();
        t[FC2_B][0] = f64::NAN;
        assert_eq!(NetworkParams::from_tensors(s, t), Err(NetError::NonFinite("fc2.bias")));
    }
}
