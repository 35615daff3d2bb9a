use super::linalg::{affine, sigmoid};
use super::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Zero exactly on masked actions.
    pub probs: Vec<f64>,
    /// `-inf` on masked actions.
    pub log_probs: Vec<f64>,
    pub value: f64,
    pub state: LstmState,
}

impl ForwardOutput {
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs, &self.log_probs)
    }

    /// Legal action with the highest probability, lowest index on ties.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

pub(super) fn entropy(probs: &[f64], log_probs: &[f64]) -> f64 {
    probs
        .iter()
        .zip(log_probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lp)| -p * lp)
        .sum()
}

/// Softmax over the legal entries only. Masked entries get probability 0.
pub fn masked_softmax(logits: &[f64], legal: Option<&[bool]>) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    let is_legal = |i: usize| legal.map_or(true, |m| m[i]);
    if let Some(m) = legal {
        if m.len() != logits.len() {
            return Err(NetError::Shape(format!("mask has {} entries for {} actions", m.len(), logits.len())));
        }
        if !m.iter().any(|&b| b) {
            return Err(NetError::Shape("action mask excludes every action".into()));
        }
    }
    let max = (0..logits.len())
        .filter(|&i| is_legal(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(NetError::NonFinite("policy logits"));
    }
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (i, p) in probs.iter_mut().enumerate() {
        if is_legal(i) {
            *p = (logits[i] - max).exp();
            sum += *p;
        }
    }
    let log_sum = sum.ln();
    let log_probs = (0..logits.len())
        .map(|i| {
            if is_legal(i) {
                logits[i] - max - log_sum
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok((probs, log_probs))
}

/// Everything the backward pass needs from one time step.
#[derive(Debug, Clone)]
pub(super) struct StepCache {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    /// Activated gates: sigmoid for i, f, o and tanh for the candidate.
    pub gates: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
    /// Input to FC3: the new hidden state, or `a2` without the LSTM.
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub a3: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub(super) fn step(
    p: &NetworkParams,
    x: &[f64],
    state: &LstmState,
    legal: Option<&[bool]>,
) -> Result<StepCache, NetError> {
    let spec = p.spec();
    if x.len() != spec.input_dim {
        return Err(NetError::Shape(format!("input has {} features, expected {}", x.len(), spec.input_dim)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("input"));
    }
    if state.hidden.len() != HIDDEN || state.cell.len() != HIDDEN {
        return Err(NetError::Shape("recurrent state has the wrong width".into()));
    }
    let mut a1 = vec![0.0; FC1];
    affine(p.tensor(FC1_W), p.tensor(FC1_B), x, &mut a1);
    relu_in_place(&mut a1);
    let mut a2 = vec![0.0; FC2];
    affine(p.tensor(FC2_W), p.tensor(FC2_B), &a1, &mut a2);
    relu_in_place(&mut a2);

    let (gates, tanh_c, h, c) = if spec.lstm {
        let mut xh = Vec::with_capacity(FC2 + HIDDEN);
        xh.extend_from_slice(&a2);
        xh.extend_from_slice(&state.hidden);
        let mut g = vec![0.0; GATES];
        affine(p.tensor(LSTM_W), p.tensor(LSTM_B), &xh, &mut g);
        for v in &mut g[..3 * HIDDEN] {
            *v = sigmoid(*v);
        }
        for v in &mut g[3 * HIDDEN..] {
            *v = v.tanh();
        }
        let mut c = vec![0.0; HIDDEN];
        let mut tanh_c = vec![0.0; HIDDEN];
        let mut h = vec![0.0; HIDDEN];
        for k in 0..HIDDEN {
            let (i, f, o, cand) = (g[k], g[HIDDEN + k], g[2 * HIDDEN + k], g[3 * HIDDEN + k]);
            c[k] = f * state.cell[k] + i * cand;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        (g, tanh_c, h, c)
    } else {
        (Vec::new(), Vec::new(), a2.clone(), state.cell.clone())
    };

    let mut a3 = vec![0.0; FC3];
    affine(p.tensor(FC3_W), p.tensor(FC3_B), &h, &mut a3);
    relu_in_place(&mut a3);
    let mut logits = vec![0.0; spec.n_actions];
    affine(p.tensor(PI_W), p.tensor(PI_B), &a3, &mut logits);
    let mut v = [0.0];
    affine(p.tensor(V_W), p.tensor(V_B), &a3, &mut v);
    if !v[0].is_finite() {
        return Err(NetError::NonFinite("value"));
    }
    let (probs, log_probs) = masked_softmax(&logits, legal)?;

    Ok(StepCache {
        x: x.to_vec(),
        a1,
        a2,
        gates,
        c_prev: state.cell.clone(),
        h_prev: state.hidden.clone(),
        tanh_c,
        h,
        c,
        a3,
        probs,
        log_probs,
        value: v[0],
    })
}

impl StepCache {
    pub(super) fn next_state(&self, lstm: bool) -> LstmState {
        if lstm {
            LstmState {
                hidden: self.h.clone(),
                cell: self.c.clone(),
            }
        } else {
            LstmState {
                hidden: self.h_prev.clone(),
                cell: self.c_prev.clone(),
            }
        }
    }

    fn into_output(self, lstm: bool) -> ForwardOutput {
        let state = self.next_state(lstm);
        ForwardOutput {
            probs: self.probs,
            log_probs: self.log_probs,
            value: self.value,
            state,
        }
    }
}

pub fn forward(p: &NetworkParams, x: &[f64], state: &LstmState) -> Result<ForwardOutput, NetError> {
    Ok(step(p, x, state, None)?.into_output(p.spec().lstm))
}

/// Forward pass with illegal actions excluded from the softmax.
pub fn forward_masked(
    p: &NetworkParams,
    x: &[f64],
    state: &LstmState,
    legal: &[bool],
) -> Result<ForwardOutput, NetError> {
    Ok(step(p, x, state, Some(legal))?.into_output(p.spec().lstm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37) % 11) as f64 / 10.0).collect()
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let p = NetworkParams::zeros(NetSpec::new(112, 5));
        let out = forward(&p, &input(112), &LstmState::zeros()).unwrap();
        for &pr in &out.probs {
            assert!((pr - 0.2).abs() < 1e-15);
        }
        assert_eq!(out.value, 0.0);
        assert!((out.entropy() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = init_params(NetSpec::new(112, 5), 3).unwrap();
        let mut s = LstmState::zeros();
        for t in 0..5 {
            let x: Vec<f64> = input(112).iter().map(|v| v * (t as f64 + 1.0) * 0.3).collect();
            let out = forward(&p, &x, &s).unwrap();
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.probs.iter().all(|&q| q > 0.0));
            s = out.state;
        }
        assert_ne!(s, LstmState::zeros());
    }

    #[test]
    fn masked_entries_are_exactly_zero() {
        let p = init_params(NetSpec::new(20, 5), 3).unwrap();
        let legal = [false, true, false, true, true];
        let out = forward_masked(&p, &input(20), &LstmState::zeros(), &legal).unwrap();
        assert_eq!(out.probs[0], 0.0);
        assert_eq!(out.probs[2], 0.0);
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(legal[out.greedy()]);
    }

    #[test]
    fn empty_mask_and_bad_input_rejected() {
        let p = init_params(NetSpec::new(4, 3), 0).unwrap();
        let s = LstmState::zeros();
        assert!(forward_masked(&p, &[0.0; 4], &s, &[false; 3]).is_err());
        assert!(forward(&p, &[0.0; 5], &s).is_err());
        assert_eq!(forward(&p, &[0.0, f64::NAN, 0.0, 0.0], &s), Err(NetError::NonFinite("input")));
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let (a, _) = masked_softmax(&[1000.0, 1001.0, 999.0], None).unwrap();
        let (b, _) = masked_softmax(&[0.0, 1.0, -1.0], None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn no_lstm_variant_carries_state_through() {
        let spec = NetSpec {
            lstm: false,
            ..NetSpec::new(6, 3)
        };
        let p = init_params(spec, 2).unwrap();
        let s = LstmState::zeros();
        let out = forward(&p, &input(6), &s).unwrap();
        assert_eq!(out.state, s);
    }
}
