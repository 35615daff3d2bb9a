use serde::{Deserialize, Serialize};

use super::forward::{entropy, step, StepCache};
use super::linalg::{accumulate_outer, accumulate_transpose};
use super::*;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajStep {
    pub obs: Vec<f64>,
    pub legal: Option<Vec<bool>>,
    pub action: usize,
    pub reward: f64,
    /// Discount between this decision and the next; `gamma^k` when the
    /// decision spanned `k` environment steps.
    pub discount: f64,
}

/// A rollout segment for one agent. `bootstrap` is the value estimate of the
/// state after the last step, zero when that state is terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_state: LstmState,
    pub steps: Vec<TrajStep>,
    pub bootstrap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefs {
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for LossCoefs {
    fn default() -> Self {
        LossCoefs {
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossDiagnostics {
    pub policy_loss: f64,
    /// Already multiplied by the value coefficient.
    pub value_loss: f64,
    /// Summed over steps.
    pub entropy: f64,
    pub total: f64,
    pub mean_advantage: f64,
    pub steps: usize,
}

/// `R_t = r_t + d_t R_{t+1}` with `R_T = bootstrap`.
pub fn discounted_returns(rewards: &[f64], discounts: &[f64], bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut r = bootstrap;
    for t in (0..rewards.len()).rev() {
        r = rewards[t] + discounts[t] * r;
        out[t] = r;
    }
    out
}

/// Gradient of
/// `sum_t [ -log pi(a_t) A_t + c_v (R_t - V_t)^2 - c_e H_t ]`
/// with the advantages `A_t = R_t - V_t` held constant, backpropagated
/// through every step of the segment.
pub fn a3c_gradients(
    p: &NetworkParams,
    traj: &Trajectory,
    coefs: LossCoefs,
) -> Result<(NetworkParams, LossDiagnostics), NetError> {
    if traj.steps.is_empty() {
        return Err(NetError::EmptyTrajectory);
    }
    let spec = p.spec();
    let mut caches: Vec<StepCache> = Vec::with_capacity(traj.steps.len());
    let mut state = traj.initial_state.clone();
    for s in &traj.steps {
        if s.action >= spec.n_actions {
            return Err(NetError::Shape(format!("action {} out of range", s.action)));
        }
        let c = step(p, &s.obs, &state, s.legal.as_deref())?;
        if c.probs[s.action] == 0.0 {
            return Err(NetError::Shape(format!("action {} has zero probability", s.action)));
        }
        state = c.next_state(spec.lstm);
        caches.push(c);
    }
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
    let discounts: Vec<f64> = traj.steps.iter().map(|s| s.discount).collect();
    let returns = discounted_returns(&rewards, &discounts, traj.bootstrap);

    let mut g = NetworkParams::zeros(spec);
    let mut diag = LossDiagnostics {
        steps: caches.len(),
        ..Default::default()
    };
    let mut dh_next = vec![0.0; HIDDEN];
    let mut dc_next = vec![0.0; HIDDEN];

    for t in (0..caches.len()).rev() {
        let c = &caches[t];
        let action = traj.steps[t].action;
        let adv = returns[t] - c.value;
        let h_t = entropy(&c.probs, &c.log_probs);
        diag.policy_loss -= c.log_probs[action] * adv;
        diag.value_loss += coefs.value_coef * adv * adv;
        diag.entropy += h_t;
        diag.mean_advantage += adv;

        // Logit gradient; masked actions have p = 0 and receive nothing.
        let mut dz = vec![0.0; spec.n_actions];
        for (k, d) in dz.iter_mut().enumerate() {
            let pk = c.probs[k];
            if pk > 0.0 {
                let indicator = if k == action { 1.0 } else { 0.0 };
                *d = adv * (pk - indicator) + coefs.entropy_coef * pk * (c.log_probs[k] + h_t);
            }
        }
        let dv = [-2.0 * coefs.value_coef * adv];

        let (pw, rest) = g.tensors.split_at_mut(PI_B);
        accumulate_outer(&dz, &c.a3, &mut pw[PI_W], &mut rest[0]);
        let (vw, rest) = g.tensors.split_at_mut(V_B);
        accumulate_outer(&dv, &c.a3, &mut vw[V_W], &mut rest[0]);

        let mut da3 = vec![0.0; FC3];
        accumulate_transpose(p.tensor(PI_W), &dz, &mut da3);
        accumulate_transpose(p.tensor(V_W), &dv, &mut da3);
        relu_backward(&mut da3, &c.a3);
        let (w, rest) = g.tensors.split_at_mut(FC3_B);
        accumulate_outer(&da3, &c.h, &mut w[FC3_W], &mut rest[0]);

        let mut dh = vec![0.0; c.h.len()];
        accumulate_transpose(p.tensor(FC3_W), &da3, &mut dh);

        let mut da2 = vec![0.0; FC2];
        if spec.lstm {
            for (d, n) in dh.iter_mut().zip(&dh_next) {
                *d += n;
            }
            let gt = &c.gates;
            let mut dgates = vec![0.0; GATES];
            for k in 0..HIDDEN {
                let (i, f, o, cand) = (gt[k], gt[HIDDEN + k], gt[2 * HIDDEN + k], gt[3 * HIDDEN + k]);
                let tc = c.tanh_c[k];
                let d_o = dh[k] * tc;
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                dgates[k] = dc * cand * i * (1.0 - i);
                dgates[HIDDEN + k] = dc * c.c_prev[k] * f * (1.0 - f);
                dgates[2 * HIDDEN + k] = d_o * o * (1.0 - o);
                dgates[3 * HIDDEN + k] = dc * i * (1.0 - cand * cand);
                dc_next[k] = dc * f;
            }
            let mut xh = Vec::with_capacity(FC2 + HIDDEN);
            xh.extend_from_slice(&c.a2);
            xh.extend_from_slice(&c.h_prev);
            let (w, rest) = g.tensors.split_at_mut(LSTM_B);
            accumulate_outer(&dgates, &xh, &mut w[LSTM_W], &mut rest[0]);
            let mut dxh = vec![0.0; FC2 + HIDDEN];
            accumulate_transpose(p.tensor(LSTM_W), &dgates, &mut dxh);
            da2.copy_from_slice(&dxh[..FC2]);
            dh_next.copy_from_slice(&dxh[FC2..]);
        } else {
            da2.copy_from_slice(&dh);
        }

        relu_backward(&mut da2, &c.a2);
        let (w, rest) = g.tensors.split_at_mut(FC2_B);
        accumulate_outer(&da2, &c.a1, &mut w[FC2_W], &mut rest[0]);
        let mut da1 = vec![0.0; FC1];
        accumulate_transpose(p.tensor(FC2_W), &da2, &mut da1);
        relu_backward(&mut da1, &c.a1);
        let (w, rest) = g.tensors.split_at_mut(FC1_B);
        accumulate_outer(&da1, &c.x, &mut w[FC1_W], &mut rest[0]);
    }

    diag.mean_advantage /= caches.len() as f64;
    diag.total = diag.policy_loss + diag.value_loss - coefs.entropy_coef * diag.entropy;
    g.check_finite()?;
    Ok((g, diag))
}

fn relu_backward(d: &mut [f64], activated: &[f64]) {
    for (g, a) in d.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
