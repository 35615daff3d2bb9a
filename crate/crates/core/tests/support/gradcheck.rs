//! Independent scalar re-implementation of the actor-critic loss, used as a
//! finite-difference oracle for the analytic gradients.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railmarl::net::{
    a3c_gradients, init_params, LossCoefs, LstmState, NetSpec, NetworkParams, TrajStep, Trajectory, FC1, FC2, FC3,
    HIDDEN, N_TENSORS, TENSOR_NAMES,
};

fn relu(x: f64, signs: &mut Vec<bool>) -> f64 {
    signs.push(x > 0.0);
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dense(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let mut s = b[r];
            for c in 0..cols {
                s += w[r * cols + c] * x[c];
            }
            s
        })
        .collect()
}

pub struct Eval {
    pub loss: f64,
    pub values: Vec<f64>,
    /// Sign of every rectifier input, to detect kinks between probes.
    pub signs: Vec<bool>,
}

/// Loss of `traj` under `p`, with the advantage weights given explicitly
/// (`None` means use the current values, as in the unperturbed pass).
pub fn naive_loss(p: &NetworkParams, traj: &Trajectory, coefs: LossCoefs, gamma_adv: Option<&[f64]>) -> Eval {
    let spec = p.spec();
    let t = |i: usize| p.tensor(i);
    let mut h = traj.initial_state.hidden.clone();
    let mut c = traj.initial_state.cell.clone();
    let mut signs = Vec::new();
    let mut logps = Vec::new();
    let mut ents = Vec::new();
    let mut values = Vec::new();
    for s in &traj.steps {
        let z1: Vec<f64> = dense(t(0), t(1), &s.obs, FC1).into_iter().map(|v| relu(v, &mut signs)).collect();
        let z2: Vec<f64> = dense(t(2), t(3), &z1, FC2).into_iter().map(|v| relu(v, &mut signs)).collect();
        let feat = if spec.lstm {
            let mut xin = z2.clone();
            xin.extend_from_slice(&h);
            let pre = dense(t(4), t(5), &xin, 4 * HIDDEN);
            let mut nh = vec![0.0; HIDDEN];
            let mut nc = vec![0.0; HIDDEN];
            for k in 0..HIDDEN {
                let ig = sig(pre[k]);
                let fg = sig(pre[HIDDEN + k]);
                let og = sig(pre[2 * HIDDEN + k]);
                let gg = pre[3 * HIDDEN + k].tanh();
                nc[k] = fg * c[k] + ig * gg;
                nh[k] = og * nc[k].tanh();
            }
            h = nh;
            c = nc;
            h.clone()
        } else {
            z2
        };
        let z3: Vec<f64> = dense(t(6), t(7), &feat, FC3).into_iter().map(|v| relu(v, &mut signs)).collect();
        let logits = dense(t(8), t(9), &z3, spec.n_actions);
        let v = dense(t(10), t(11), &z3, 1)[0];
        let legal = |i: usize| s.legal.as_ref().map_or(true, |m| m[i]);
        let m = (0..logits.len()).filter(|&i| legal(i)).map(|i| logits[i]).fold(f64::MIN, f64::max);
        let lse = m + (0..logits.len()).filter(|&i| legal(i)).map(|i| (logits[i] - m).exp()).sum::<f64>().ln();
        let lp: Vec<Option<f64>> = (0..logits.len()).map(|i| legal(i).then(|| logits[i] - lse)).collect();
        let ent: f64 = lp.iter().flatten().map(|l| -l.exp() * l).sum();
        logps.push(lp[s.action].unwrap());
        ents.push(ent);
        values.push(v);
    }
    let mut ret = traj.bootstrap;
    let mut returns = vec![0.0; traj.steps.len()];
    for i in (0..traj.steps.len()).rev() {
        ret = traj.steps[i].reward + traj.steps[i].discount * ret;
        returns[i] = ret;
    }
    let mut loss = 0.0;
    for i in 0..returns.len() {
        let adv = match gamma_adv {
            Some(a) => a[i],
            None => returns[i] - values[i],
        };
        let err = returns[i] - values[i];
        loss += -logps[i] * adv + coefs.value_coef * err * err - coefs.entropy_coef * ents[i];
    }
    Eval { loss, values, signs }
}

pub fn random_case(seed: u64, input_dim: usize, n_actions: usize, len: usize) -> (NetworkParams, Trajectory) {
    let spec = NetSpec::new(input_dim, n_actions);
    let mut p = init_params(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // nonzero biases so every bias path is exercised
    for i in 0..N_TENSORS {
        if TENSOR_NAMES[i].ends_with("bias") {
            for b in p.tensor_mut(i) {
                *b += rng.gen_range(-0.1..0.1);
            }
        }
    }
    let initial_state = LstmState {
        hidden: (0..HIDDEN).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        cell: (0..HIDDEN).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let steps = (0..len)
        .map(|t| {
            let legal: Option<Vec<bool>> = if t % 2 == 1 {
                let mut m: Vec<bool> = (0..n_actions).map(|_| rng.gen_bool(0.6)).collect();
                let keep = rng.gen_range(0..n_actions);
                m[keep] = true;
                Some(m)
            } else {
                None
            };
            let choices: Vec<usize> =
                (0..n_actions).filter(|&a| legal.as_ref().map_or(true, |m| m[a])).collect();
            TrajStep {
                obs: (0..input_dim).map(|_| rng.gen::<f64>()).collect(),
                action: choices[rng.gen_range(0..choices.len())],
                legal,
                reward: rng.gen_range(-1.0..1.0),
                discount: 0.99,
            }
        })
        .collect();
    let traj = Trajectory {
        initial_state,
        steps,
        bootstrap: rng.gen_range(-1.0..1.0),
    };
    (p, traj)
}

pub struct CheckResult {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// Five-point central differences on every entry of small tensors and a random sample
/// of `per_tensor` entries of large ones.
pub fn check_gradients(p: &NetworkParams, traj: &Trajectory, coefs: LossCoefs, per_tensor: usize, seed: u64) -> CheckResult {
    let (grad, _) = a3c_gradients(p, traj, coefs).unwrap();
    let base = naive_loss(p, traj, coefs, None);
    let mut ret = traj.bootstrap;
    let mut adv = vec![0.0; traj.steps.len()];
    for i in (0..traj.steps.len()).rev() {
        ret = traj.steps[i].reward + traj.steps[i].discount * ret;
        adv[i] = ret - base.values[i];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = CheckResult {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    let mut q = p.clone();
    for ti in 0..N_TENSORS {
        let n = p.tensor(ti).len();
        let idx: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for k in idx {
            let orig = p.tensor(ti)[k];
            let mut probe = |offset: f64| {
                q.tensor_mut(ti)[k] = orig + offset;
                let e = naive_loss(&q, traj, coefs, Some(&adv));
                q.tensor_mut(ti)[k] = orig;
                e
            };
            let evals = [probe(-2.0 * FD_STEP), probe(-FD_STEP), probe(FD_STEP), probe(2.0 * FD_STEP)];
            if evals.iter().any(|e| e.signs != base.signs) {
                res.skipped_kinks += 1;
                continue;
            }
            let numeric =
                (evals[0].loss - 8.0 * evals[1].loss + 8.0 * evals[2].loss - evals[3].loss) / (12.0 * FD_STEP);
            let analytic = grad.tensor(ti)[k];
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            res.checked += 1;
            if rel > res.max_rel_err {
                res.max_rel_err = rel;
                res.worst = format!("{}[{k}] analytic {analytic:e} numeric {numeric:e}", TENSOR_NAMES[ti]);
            }
        }
    }
    res
}
