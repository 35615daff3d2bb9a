//! Asynchronous advantage actor-critic training over generated rail networks.
//!
//! One episode driver serves training, evaluation and scripted policies:
//! with masking on, agents off a decision point are sent Forward and only
//! decision points reach the controller.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionKind, AgentStatus, EnvState};
use crate::error::{Error, Result};
use crate::gen::{default_curriculum, generate_env, validate_curriculum, Curriculum, CurriculumStage};
use crate::net::{
    a3c_gradients, apply_update, forward, init_params, LossCoefs, LstmState, NetSpec, NetworkParams,
    RmsPropConfig, SharedParams, TrajStep, Trajectory,
};
use crate::obs::{is_decision_point, observe, ObsContext, OBS_DIM};

/// Probability that at least one of `n_agents` independent agents deviates
/// from its best action, each choosing it with probability `p_best`.
pub fn chain_reaction_probability(p_best: f64, n_agents: u32) -> f64 {
    1.0 - p_best.powi(n_agents as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Sample,
    Argmax,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Sample => "sample",
            EvalMode::Argmax => "argmax",
        })
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(EvalMode::Sample),
            "argmax" => Ok(EvalMode::Argmax),
            other => Err(Error::Config(format!("unknown eval mode {other:?} (sample|argmax)"))),
        }
    }
}

/// Draws an index from `probs` with one uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn select_action(probs: &[f64], mode: EvalMode, rng: &mut impl Rng) -> usize {
    match mode {
        EvalMode::Sample => sample_index(probs, rng),
        EvalMode::Argmax => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
    }
}

/// Receives decision points and rewards from [`run_episode`].
pub trait Controller {
    fn episode_start(&mut self, _env: &EnvState) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, env: &EnvState, ctx: &ObsContext, id: usize) -> Result<ActionKind>;

    /// Reward for an agent that was unfinished before the step.
    fn reward(&mut self, _id: usize, _reward: f64, _done: bool) -> Result<()> {
        Ok(())
    }

    fn episode_end(&mut self, _env: &EnvState) -> Result<()> {
        Ok(())
    }

    /// Checked before every step; `false` cuts the episode short.
    fn keep_going(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub n_agents: usize,
    pub arrived: usize,
    pub steps: u32,
    pub decisions: u64,
    pub returns: Vec<f64>,
    /// The controller stopped the episode before the environment finished.
    pub truncated: bool,
}

impl EpisodeStats {
    pub fn arrival_rate(&self) -> f64 {
        self.arrived as f64 / self.n_agents as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.n_agents as f64
    }
}

pub fn run_episode(env: &mut EnvState, ctrl: &mut dyn Controller, masking: bool) -> Result<EpisodeStats> {
    run_episode_logged(env, ctrl, masking, None)
}

/// As [`run_episode`], appending the joint action of every step to `log`.
pub fn run_episode_logged(
    env: &mut EnvState,
    ctrl: &mut dyn Controller,
    masking: bool,
    mut log: Option<&mut Vec<Vec<ActionKind>>>,
) -> Result<EpisodeStats> {
    let ctx = ObsContext::new(env);
    let n = env.n_agents();
    let mut stats = EpisodeStats {
        n_agents: n,
        arrived: 0,
        steps: 0,
        decisions: 0,
        returns: vec![0.0; n],
        truncated: false,
    };
    ctrl.episode_start(env)?;
    let mut actions = vec![ActionKind::Nothing; n];
    let mut live = vec![false; n];
    while !env.is_finished() {
        if !ctrl.keep_going() {
            stats.truncated = true;
            break;
        }
        for id in 0..n {
            live[id] = env.agents[id].status != AgentStatus::Done;
            actions[id] = if !live[id] {
                ActionKind::Nothing
            } else if !masking || is_decision_point(env, id) {
                stats.decisions += 1;
                ctrl.decide(env, &ctx, id)?
            } else {
                ActionKind::Forward
            };
        }
        if let Some(log) = log.as_mut() {
            log.push(actions.clone());
        }
        let out = env.step(&actions)?;
        for id in (0..n).filter(|&id| live[id]) {
            stats.returns[id] += out.rewards[id];
            ctrl.reward(id, out.rewards[id], out.done[id])?;
        }
    }
    stats.steps = env.step_count;
    stats.arrived = env.arrived_count();
    ctrl.episode_end(env)?;
    Ok(stats)
}

/// Plays one fixed action at every decision point.
pub struct ConstantPolicy(pub ActionKind);

impl Controller for ConstantPolicy {
    fn decide(&mut self, _: &EnvState, _: &ObsContext, _: usize) -> Result<ActionKind> {
        Ok(self.0)
    }
}

/// Uniform over the five actions.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> RandomPolicy {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomPolicy {
    fn decide(&mut self, _: &EnvState, _: &ObsContext, _: usize) -> Result<ActionKind> {
        Ok(ActionKind::ALL[self.rng.gen_range(0..ActionKind::COUNT)])
    }
}

/// The network acting on its own; recurrent state per agent advances only
/// at decisions.
pub struct NetPolicy<'a> {
    params: &'a NetworkParams,
    states: Vec<LstmState>,
    mode: EvalMode,
    rng: ChaCha8Rng,
}

impl<'a> NetPolicy<'a> {
    pub fn new(params: &'a NetworkParams, mode: EvalMode, seed: u64) -> NetPolicy<'a> {
        NetPolicy {
            params,
            states: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for NetPolicy<'_> {
    fn episode_start(&mut self, env: &EnvState) -> Result<()> {
        self.states = vec![LstmState::zeros(); env.n_agents()];
        Ok(())
    }

    fn decide(&mut self, env: &EnvState, ctx: &ObsContext, id: usize) -> Result<ActionKind> {
        let obs = observe(env, ctx, id);
        let out = forward(self.params, obs.as_slice(), &self.states[id])?;
        let a = select_action(&out.probs, self.mode, &mut self.rng);
        self.states[id] = out.state;
        Ok(ActionKind::ALL[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub arrival_rate: f64,
    pub mean_return: f64,
    pub episodes: Vec<EpisodeStats>,
}

impl EvalStats {
    pub fn from_episodes(episodes: Vec<EpisodeStats>) -> EvalStats {
        let agents: usize = episodes.iter().map(|e| e.n_agents).sum();
        let arrived: usize = episodes.iter().map(|e| e.arrived).sum();
        let total_return: f64 = episodes.iter().flat_map(|e| e.returns.iter()).sum();
        EvalStats {
            arrival_rate: if agents == 0 { 0.0 } else { arrived as f64 / agents as f64 },
            mean_return: if agents == 0 { 0.0 } else { total_return / agents as f64 },
            episodes,
        }
    }
}

/// Runs every environment once from its current (reset) state. Sampling
/// uses a stream seeded by `seed`, so both modes are reproducible.
pub fn evaluate(
    params: &NetworkParams,
    envs: &[EnvState],
    mode: EvalMode,
    masking: bool,
    seed: u64,
) -> Result<EvalStats> {
    if envs.is_empty() {
        return Err(Error::Config("evaluation needs at least one environment".into()));
    }
    let mut policy = NetPolicy::new(params, mode, seed);
    evaluate_with(&mut policy, envs, masking)
}

pub fn evaluate_with(ctrl: &mut dyn Controller, envs: &[EnvState], masking: bool) -> Result<EvalStats> {
    let mut episodes = Vec::with_capacity(envs.len());
    for e in envs {
        let mut env = e.clone();
        episodes.push(run_episode(&mut env, ctrl, masking)?);
    }
    Ok(EvalStats::from_episodes(episodes))
}

/// Per-agent experience under construction. Rewards between decisions are
/// summed onto the latest step, whose discount becomes `gamma^k` after `k`
/// environment steps.
#[derive(Debug, Clone)]
pub struct SegmentBuffer {
    t_max: usize,
    gamma: f64,
    segments: Vec<Vec<TrajStep>>,
    starts: Vec<LstmState>,
}

impl SegmentBuffer {
    pub fn new(n_agents: usize, t_max: usize, gamma: f64) -> SegmentBuffer {
        SegmentBuffer {
            t_max,
            gamma,
            segments: vec![Vec::new(); n_agents],
            starts: vec![LstmState::zeros(); n_agents],
        }
    }

    pub fn len(&self, id: usize) -> usize {
        self.segments[id].len()
    }

    pub fn is_full(&self, id: usize) -> bool {
        self.segments[id].len() >= self.t_max
    }

    /// `state` is the recurrent state the step's forward pass started from.
    pub fn push(&mut self, id: usize, obs: Vec<f64>, legal: Option<Vec<bool>>, action: usize, state: &LstmState) {
        if self.segments[id].is_empty() {
            self.starts[id] = state.clone();
        }
        self.segments[id].push(TrajStep {
            obs,
            legal,
            action,
            reward: 0.0,
            discount: 1.0,
        });
    }

    /// Credits one environment step's reward to the open step, if any.
    pub fn credit(&mut self, id: usize, reward: f64) {
        if let Some(s) = self.segments[id].last_mut() {
            s.reward += reward;
            s.discount *= self.gamma;
        }
    }

    pub fn take(&mut self, id: usize, bootstrap: f64) -> Option<Trajectory> {
        if self.segments[id].is_empty() {
            return None;
        }
        Some(Trajectory {
            initial_state: std::mem::take(&mut self.starts[id]),
            steps: std::mem::take(&mut self.segments[id]),
            bootstrap,
        })
    }
}

/// One agent-by-agent record of a complete episode under a fixed network.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Segments per agent, in order, each at most `t_max` long.
    pub segments: Vec<Vec<Trajectory>>,
    pub stats: EpisodeStats,
}

struct Recorder<'a> {
    params: &'a NetworkParams,
    states: Vec<LstmState>,
    buf: SegmentBuffer,
    rng: ChaCha8Rng,
    out: Vec<Vec<Trajectory>>,
}

impl Controller for Recorder<'_> {
    fn decide(&mut self, env: &EnvState, ctx: &ObsContext, id: usize) -> Result<ActionKind> {
        let obs = observe(env, ctx, id).into_inner();
        let out = forward(self.params, &obs, &self.states[id])?;
        if self.buf.is_full(id) {
            self.out[id].extend(self.buf.take(id, out.value));
        }
        let a = sample_index(&out.probs, &mut self.rng);
        self.buf.push(id, obs, None, a, &self.states[id]);
        self.states[id] = out.state;
        Ok(ActionKind::ALL[a])
    }

    fn reward(&mut self, id: usize, reward: f64, done: bool) -> Result<()> {
        self.buf.credit(id, reward);
        if done {
            self.out[id].extend(self.buf.take(id, 0.0));
        }
        Ok(())
    }

    fn episode_end(&mut self, env: &EnvState) -> Result<()> {
        for id in 0..env.n_agents() {
            self.out[id].extend(self.buf.take(id, 0.0));
        }
        Ok(())
    }
}

/// Plays `env` to the end with `params`, sampling actions, and returns the
/// per-agent training segments that episode would produce. `states` holds
/// the recurrent state per agent and is advanced in place.
pub fn masked_rollout(
    env: &mut EnvState,
    params: &NetworkParams,
    states: &mut Vec<LstmState>,
    masking: bool,
    t_max: usize,
    gamma: f64,
    seed: u64,
) -> Result<Rollout> {
    let n = env.n_agents();
    if states.len() != n {
        *states = vec![LstmState::zeros(); n];
    }
    let mut rec = Recorder {
        params,
        states: std::mem::take(states),
        buf: SegmentBuffer::new(n, t_max, gamma),
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: vec![Vec::new(); n],
    };
    let stats = run_episode(env, &mut rec, masking)?;
    *states = rec.states;
    Ok(Rollout {
        segments: rec.out,
        stats,
    })
}

fn default_workers() -> usize {
    8
}
fn default_budget() -> u64 {
    200_000
}
fn default_t_max() -> usize {
    20
}
fn default_gamma() -> f64 {
    0.99
}
fn default_lr() -> f64 {
    1e-4
}
fn default_entropy() -> f64 {
    0.01
}
fn default_value() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_eval_every() -> u64 {
    10_000
}
fn default_eval_episodes() -> usize {
    20
}
fn default_eval_mode() -> EvalMode {
    EvalMode::Sample
}
fn default_eval_seed() -> u64 {
    1 << 32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default = "default_workers")]
    pub n_workers: usize,
    #[serde(default = "default_budget")]
    pub total_decision_steps: u64,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_entropy")]
    pub entropy_coef: f64,
    #[serde(default = "default_value")]
    pub value_coef: f64,
    #[serde(default = "default_curriculum")]
    pub curriculum: Vec<CurriculumStage>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub masking_enabled: bool,
    #[serde(default = "default_true")]
    pub lstm: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_eval_mode")]
    pub eval_mode: EvalMode,
    /// Held-out environments are generated from the last curriculum stage
    /// with seeds `eval_seed`, `eval_seed + 1`, ...
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default)]
    pub rmsprop: RmsPropConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_workers == 0 {
            return bad("n_workers must be at least 1".into());
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} not in (0,1]", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive".into());
        }
        let r = &self.rmsprop;
        if !((0.0..1.0).contains(&r.decay) && r.eps > 0.0 && r.clip_norm > 0.0) {
            return bad("rmsprop needs decay in [0,1), eps > 0 and clip_norm > 0".into());
        }
        validate_curriculum(&self.curriculum)?;
        Ok(())
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            input_dim: OBS_DIM,
            n_actions: ActionKind::COUNT,
            lstm: self.lstm,
        }
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }

    /// Held-out environments, in reset state.
    pub fn eval_envs(&self) -> Result<Vec<EnvState>> {
        let last = &self.curriculum.last().expect("validated curriculum").params;
        (0..self.eval_episodes as u64)
            .map(|i| Ok(generate_env(&last.with_seed(self.eval_seed.wrapping_add(i)))?))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub decision_steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub stage: usize,
    pub arrival_rate: f64,
    pub mean_return: f64,
    /// Mean policy entropy per decision over updates since the previous row.
    pub train_entropy: f64,
    /// Not part of the deterministic record; kept out of [`TrainMetrics::to_csv`].
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub records: Vec<EvalRecord>,
}

impl TrainMetrics {
    pub const CSV_HEADER: &'static str = "decision_steps,episodes,updates,stage,arrival_rate,mean_return,train_entropy";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                r.decision_steps, r.episodes, r.updates, r.stage, r.arrival_rate, r.mean_return, r.train_entropy
            ));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("decision_steps,wall_clock_ms\n");
        for r in &self.records {
            s.push_str(&format!("{},{}\n", r.decision_steps, r.wall_clock_ms));
        }
        s
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: TrainMetrics,
    pub params: NetworkParams,
    pub decision_steps: u64,
    pub episodes: u64,
    pub final_stage: usize,
}

/// Called after each evaluation row with the parameters evaluated.
pub type EvalHook<'a> = &'a (dyn Fn(&EvalRecord, &NetworkParams) -> Result<()> + Sync);

struct Shared<'a> {
    cfg: &'a TrainerConfig,
    params: SharedParams,
    eval_envs: Vec<EnvState>,
    decisions: AtomicU64,
    episodes: AtomicU64,
    next_eval: AtomicU64,
    abort: AtomicBool,
    curriculum: Mutex<Curriculum>,
    metrics: Mutex<TrainMetrics>,
    entropy_acc: Mutex<(f64, u64)>,
    started: Instant,
    hook: Option<EvalHook<'a>>,
    eval_lock: Mutex<()>,
}

impl Shared<'_> {
    fn evaluate_now(&self, params: &NetworkParams, decision_steps: u64) -> Result<()> {
        let _serial = self.eval_lock.lock().expect("eval lock poisoned");
        let stats = evaluate(
            params,
            &self.eval_envs,
            self.cfg.eval_mode,
            self.cfg.masking_enabled,
            self.cfg.eval_seed,
        )?;
        let (ent_sum, ent_n) = std::mem::take(&mut *self.entropy_acc.lock().expect("entropy lock poisoned"));
        let rec = EvalRecord {
            decision_steps,
            episodes: self.episodes.load(Ordering::SeqCst),
            updates: self.params.update_count(),
            stage: self.curriculum.lock().expect("curriculum lock poisoned").stage_index(),
            arrival_rate: stats.arrival_rate,
            mean_return: stats.mean_return,
            train_entropy: if ent_n == 0 { 0.0 } else { ent_sum / ent_n as f64 },
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        };
        if let Some(h) = self.hook {
            h(&rec, params)?;
        }
        self.metrics.lock().expect("metrics lock poisoned").records.push(rec);
        Ok(())
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    let bytes: Vec<u8> = parts.iter().flat_map(|p| p.to_le_bytes()).collect();
    crate::digest64(&bytes)
}

struct Worker<'a, 's> {
    shared: &'s Shared<'a>,
    local: NetworkParams,
    buf: SegmentBuffer,
    states: Vec<LstmState>,
    rng: ChaCha8Rng,
    exhausted: bool,
}

impl Worker<'_, '_> {
    fn learn(&mut self, traj: Trajectory) -> Result<()> {
        let cfg = self.shared.cfg;
        let (g, diag) = a3c_gradients(&self.local, &traj, cfg.coefs()).map_err(|e| {
            Error::Aborted(format!(
                "gradient fault after {} decisions: {e}",
                self.shared.decisions.load(Ordering::SeqCst)
            ))
        })?;
        apply_update(&self.shared.params, &g, cfg.lr)?;
        self.shared.params.snapshot_into(&mut self.local);
        self.local
            .check_finite()
            .map_err(|e| Error::Aborted(format!("parameters became non-finite: {e}")))?;
        let mut acc = self.shared.entropy_acc.lock().expect("entropy lock poisoned");
        acc.0 += diag.entropy;
        acc.1 += diag.steps as u64;
        Ok(())
    }

    fn maybe_evaluate(&mut self, count: u64) -> Result<()> {
        let s = self.shared;
        let due = s.next_eval.load(Ordering::SeqCst);
        if count >= due
            && s
                .next_eval
                .compare_exchange(due, due + s.cfg.eval_every, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
        {
            s.evaluate_now(&self.local, count)?;
        }
        Ok(())
    }
}

impl Controller for Worker<'_, '_> {
    fn episode_start(&mut self, env: &EnvState) -> Result<()> {
        let n = env.n_agents();
        self.states = vec![LstmState::zeros(); n];
        self.buf = SegmentBuffer::new(n, self.shared.cfg.t_max, self.shared.cfg.gamma);
        Ok(())
    }

    fn decide(&mut self, env: &EnvState, ctx: &ObsContext, id: usize) -> Result<ActionKind> {
        let obs = observe(env, ctx, id).into_inner();
        let out = forward(&self.local, &obs, &self.states[id])?;
        if self.buf.is_full(id) {
            let traj = self.buf.take(id, out.value).expect("full segment");
            self.learn(traj)?;
        }
        let a = sample_index(&out.probs, &mut self.rng);
        let before = self.shared.decisions.fetch_add(1, Ordering::SeqCst);
        if before >= self.shared.cfg.total_decision_steps {
            self.exhausted = true;
            return Ok(ActionKind::ALL[a]);
        }
        self.buf.push(id, obs, None, a, &self.states[id]);
        self.states[id] = out.state;
        if before + 1 >= self.shared.cfg.total_decision_steps {
            self.exhausted = true;
        }
        self.maybe_evaluate(before + 1)?;
        Ok(ActionKind::ALL[a])
    }

    fn reward(&mut self, id: usize, reward: f64, done: bool) -> Result<()> {
        self.buf.credit(id, reward);
        if done {
            if let Some(t) = self.buf.take(id, 0.0) {
                self.learn(t)?;
            }
        }
        Ok(())
    }

    fn episode_end(&mut self, env: &EnvState) -> Result<()> {
        // Running out of steps counts as terminal: nothing is collected after it.
        for id in 0..env.n_agents() {
            if let Some(t) = self.buf.take(id, 0.0) {
                self.learn(t)?;
            }
        }
        Ok(())
    }

    fn keep_going(&self) -> bool {
        !self.exhausted && !self.shared.abort.load(Ordering::SeqCst)
    }
}

fn worker_loop(shared: &Shared<'_>, worker: usize) -> Result<()> {
    let cfg = shared.cfg;
    let mut w = Worker {
        shared,
        local: shared.params.snapshot(),
        buf: SegmentBuffer::new(0, cfg.t_max, cfg.gamma),
        states: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, worker as u64, 1])),
        exhausted: false,
    };
    let mut local_episode = 0u64;
    while !w.exhausted && !shared.abort.load(Ordering::SeqCst) {
        if shared.decisions.load(Ordering::SeqCst) >= cfg.total_decision_steps {
            break;
        }
        let stage_params = shared.curriculum.lock().expect("curriculum lock poisoned").stage().params.clone();
        let seed = mix_seed(&[cfg.seed, worker as u64, local_episode]);
        local_episode += 1;
        let mut env = generate_env(&stage_params.with_seed(seed))?;
        shared.params.snapshot_into(&mut w.local);
        let stats = run_episode(&mut env, &mut w, cfg.masking_enabled)?;
        if stats.truncated {
            break;
        }
        shared.episodes.fetch_add(1, Ordering::SeqCst);
        shared
            .curriculum
            .lock()
            .expect("curriculum lock poisoned")
            .record(stats.arrival_rate());
    }
    Ok(())
}

pub fn train(cfg: &TrainerConfig) -> Result<TrainOutcome> {
    train_with(cfg, None)
}

/// Trains with `n_workers` threads sharing one parameter store. A baseline
/// row is evaluated before any update and a final row at the end of the
/// budget; `hook` sees every row.
pub fn train_with(cfg: &TrainerConfig, hook: Option<EvalHook<'_>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = init_params(cfg.net_spec(), mix_seed(&[cfg.seed, u64::MAX]))?;
    let shared = Shared {
        cfg,
        params: SharedParams::new(init, cfg.rmsprop),
        eval_envs: cfg.eval_envs()?,
        decisions: AtomicU64::new(0),
        episodes: AtomicU64::new(0),
        next_eval: AtomicU64::new(cfg.eval_every),
        abort: AtomicBool::new(false),
        curriculum: Mutex::new(Curriculum::new(cfg.curriculum.clone())?),
        metrics: Mutex::new(TrainMetrics::default()),
        entropy_acc: Mutex::new((0.0, 0)),
        started: Instant::now(),
        hook,
        eval_lock: Mutex::new(()),
    };
    shared.evaluate_now(&shared.params.snapshot(), 0)?;

    if cfg.total_decision_steps > 0 {
        let results: Vec<Result<()>> = if cfg.n_workers == 1 {
            vec![worker_loop(&shared, 0)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..cfg.n_workers)
                    .map(|w| {
                        let sh = &shared;
                        s.spawn(move || {
                            let r = worker_loop(sh, w);
                            if r.is_err() {
                                sh.abort.store(true, Ordering::SeqCst);
                            }
                            r
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Aborted("worker panicked".into()))))
                    .collect()
            })
        };
        for r in results {
            r?;
        }
        let used = shared.decisions.load(Ordering::SeqCst).min(cfg.total_decision_steps);
        let last = shared.metrics.lock().expect("metrics lock poisoned").last().map(|r| r.decision_steps);
        if last != Some(used) {
            shared.evaluate_now(&shared.params.snapshot(), used)?;
        }
    }

    let decision_steps = shared.decisions.load(Ordering::SeqCst).min(cfg.total_decision_steps);
    let final_stage = shared.curriculum.lock().expect("curriculum lock poisoned").stage_index();
    Ok(TrainOutcome {
        metrics: shared.metrics.into_inner().expect("metrics lock poisoned"),
        params: shared.params.snapshot(),
        decision_steps,
        episodes: shared.episodes.load(Ordering::SeqCst),
        final_stage,
    })
}
