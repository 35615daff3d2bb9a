mod support;

use support::gradcheck::{check_gradients, random_case};
use railmarl::net::{a3c_gradients, LossCoefs, NetSpec, N_TENSORS};

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (p, traj) = random_case(seed, 6, 3, 5);
        let r = check_gradients(&p, &traj, LossCoefs::default(), 200, seed);
        assert!(r.checked > 1000);
        println!("seed {seed}: max rel {:e} checked {} skipped {}", r.max_rel_err, r.checked, r.skipped_kinks);
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {} ({})", r.max_rel_err, r.worst);
    }
}

#[test]
fn gradients_without_lstm_match_finite_differences() {
    let (p, traj) = random_case(11, 6, 3, 5);
    let spec = NetSpec {
        lstm: false,
        ..NetSpec::new(6, 3)
    };
    let mut q = railmarl::net::NetworkParams::zeros(spec);
    for i in 0..N_TENSORS {
        if q.tensor(i).len() == p.tensor(i).len() {
            q.tensor_mut(i).copy_from_slice(p.tensor(i));
        }
    }
    let r = check_gradients(&q, &traj, LossCoefs::default(), 200, 11);
    assert!(r.max_rel_err < 1e-4, "{} ({})", r.max_rel_err, r.worst);
}

#[test]
fn zero_coefficients_and_zero_advantage_give_zero_gradient() {
    let (p, mut traj) = random_case(4, 6, 3, 5);
    let coefs = LossCoefs {
        value_coef: 0.0,
        entropy_coef: 0.0,
    };
    // Make every return equal the current value estimate.
    let values: Vec<f64> = {
        let mut s = traj.initial_state.clone();
        traj.steps
            .iter()
            .map(|st| {
                let out = railmarl::net::forward(&p, &st.obs, &s).unwrap();
                s = out.state;
                out.value
            })
            .collect()
    };
    let n = traj.steps.len();
    traj.bootstrap = 0.0;
    for t in 0..n {
        traj.steps[t].discount = 1.0;
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        traj.steps[t].reward = values[t] - next;
    }
    let (g, d) = a3c_gradients(&p, &traj, coefs).unwrap();
    assert!(d.mean_advantage.abs() < 1e-12);
    assert!(g.norm() < 1e-10, "norm {}", g.norm());
}
