//! Random-action episodes with per-step invariant checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use railmarl::env::{ActionKind, AgentStatus, EnvState, MalfunctionParams};
use railmarl::gen::{generate_env, GeneratorParams};
use railmarl::obs::{observe, ObsContext, OBS_DIM};

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub episodes: u64,
    pub steps: u64,
    pub observations: u64,
    pub occupancy_violations: u64,
    pub out_of_range: u64,
    pub unsound_moves: u64,
    pub replay_mismatches: u64,
}

impl FuzzTally {
    pub fn clean(&self) -> bool {
        self.occupancy_violations == 0 && self.out_of_range == 0 && self.unsound_moves == 0 && self.replay_mismatches == 0
    }
}

pub fn fuzz_params(seed: u64) -> GeneratorParams {
    let mut p = GeneratorParams::new(25, 25, 4, 4, seed);
    p.mixed_speeds = seed % 2 == 1;
    if seed % 3 == 0 {
        p.malfunction = MalfunctionParams::stress();
    }
    p
}

/// One random episode; every state is checked and the whole episode is
/// replayed from its initial state and compared byte for byte.
pub fn fuzz_episode(seed: u64, tally: &mut FuzzTally) {
    let initial = generate_env(&fuzz_params(seed)).expect("generator");
    let mut env = initial.clone();
    let ctx = ObsContext::new(&env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut log = Vec::new();
    let mut states = Vec::new();
    while !env.is_finished() {
        let actions: Vec<ActionKind> = (0..env.n_agents())
            .map(|_| ActionKind::ALL[rng.gen_range(0..ActionKind::COUNT)])
            .collect();
        let before = env.agents.clone();
        env.step(&actions).expect("step");
        tally.steps += 1;
        check_moves(&env, &before, tally);
        check_occupancy(&env, tally);
        for id in 0..env.n_agents() {
            if env.agents[id].status == AgentStatus::Done {
                continue;
            }
            let o = observe(&env, &ctx, id);
            tally.observations += 1;
            if o.as_slice().len() != OBS_DIM || o.as_slice().iter().any(|x| !(0.0..=1.0).contains(x)) {
                tally.out_of_range += 1;
            }
        }
        log.push(actions);
        states.push(env.to_bytes());
    }
    let mut again = initial;
    for (a, bytes) in log.iter().zip(&states) {
        again.step(a).expect("replay step");
        if &again.to_bytes() != bytes {
            tally.replay_mismatches += 1;
            break;
        }
    }
    tally.episodes += 1;
}

fn check_occupancy(env: &EnvState, tally: &mut FuzzTally) {
    let active: Vec<_> = env.agents.iter().filter(|a| a.is_active()).map(|a| a.position).collect();
    for i in 0..active.len() {
        for j in i + 1..active.len() {
            if active[i] == active[j] {
                tally.occupancy_violations += 1;
            }
        }
    }
}

fn check_moves(env: &EnvState, before: &[railmarl::env::AgentState], tally: &mut FuzzTally) {
    for (a, b) in env.agents.iter().zip(before) {
        if b.status != AgentStatus::Active || a.position == b.position {
            continue;
        }
        let ok = env.grid.get(b.position).allows(b.heading, a.heading)
            && env.grid.neighbor(b.position, a.heading) == Some(a.position);
        if !ok {
            tally.unsound_moves += 1;
        }
    }
}
