//! Two trains swapping ends of a line with one single-track section and a
//! detour, optionally talking through a shared symbol buffer first.
//!
//! ```text
//!  col 0 1 2 3 4 5 6
//!  row0 - * - - - * -      main line, single track between the switches
//!  row1   \ - - - /        detour
//! ```
//!
//! The west train observes the world as is, the east train observes its
//! left-right mirror image, so both learner slots face the same problem.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{resolve_direction, ActionKind, AgentSpec, AgentStatus, EnvState, MalfunctionParams, Speed};
use crate::error::{Error, Result};
use crate::grid::{Heading, Pos, RailGrid, TrackBuilder};
use crate::net::{a3c_gradients, apply_update, forward_masked, init_params, LossCoefs, LstmState, NetSpec, NetworkParams, RmsPropConfig, SharedParams, Trajectory};
use crate::obs::{observe, ObsContext, AGENT_FEATURES, OBS_DIM, TREE_DIM};
use crate::trainer::{sample_index, SegmentBuffer};

pub const WIDTH: usize = 7;
pub const HEIGHT: usize = 2;
pub const BUFFER_CAPACITY: usize = 8;
pub const MAX_ROUNDS: u32 = 8;
pub const N_SYMBOLS: usize = 6;
pub const N_COMM_ACTIONS: usize = ActionKind::COUNT + N_SYMBOLS;
/// One-hot symbol plus a bit that is set when the observer wrote it.
pub const SLOT_FEATURES: usize = N_SYMBOLS + 1;
pub const BUFFER_DIM: usize = BUFFER_CAPACITY * SLOT_FEATURES;
pub const COMM_OBS_DIM: usize = OBS_DIM + BUFFER_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    C1,
    C2,
    C3,
    C4,
    C5,
    Eot,
}

impl Symbol {
    pub const ALL: [Symbol; N_SYMBOLS] = [Symbol::C1, Symbol::C2, Symbol::C3, Symbol::C4, Symbol::C5, Symbol::Eot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Symbol> {
        Symbol::ALL.into_iter().find(|x| x.to_string() == s)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Eot => write!(f, "EOT"),
            s => write!(f, "C{}", s.index() + 1),
        }
    }
}

/// Movement action or buffer symbol; indices 0..5 are movement, 5..11 symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommAction {
    Move(ActionKind),
    Say(Symbol),
}

impl CommAction {
    pub fn index(self) -> usize {
        match self {
            CommAction::Move(a) => a.index(),
            CommAction::Say(s) => ActionKind::COUNT + s.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<CommAction> {
        if i < ActionKind::COUNT {
            ActionKind::from_index(i).map(CommAction::Move)
        } else {
            Symbol::ALL.get(i - ActionKind::COUNT).copied().map(CommAction::Say)
        }
    }
}

/// The fixed two-row layout with its two trains.
pub fn comm_layout() -> (RailGrid, [AgentSpec; 2]) {
    let mut b = TrackBuilder::new(WIDTH, HEIGHT);
    b.connect_path(&(0..WIDTH).map(|c| Pos::new(0, c)).collect::<Vec<_>>());
    let mut detour = vec![Pos::new(0, 1)];
    detour.extend((1..WIDTH - 1).map(|c| Pos::new(1, c)));
    detour.push(Pos::new(0, WIDTH - 2));
    b.connect_path(&detour);
    let grid = b.build().expect("comm layout is consistent");
    let agents = [
        AgentSpec {
            start: Pos::new(0, 0),
            heading: Heading::East,
            target: Pos::new(0, WIDTH - 1),
            speed: Speed::FULL,
        },
        AgentSpec {
            start: Pos::new(0, WIDTH - 1),
            heading: Heading::West,
            target: Pos::new(0, 0),
            speed: Speed::FULL,
        },
    ];
    (grid, agents)
}

/// Which single-track span a cell belongs to: 0 main, 1 detour.
pub fn span_of(p: Pos) -> Option<usize> {
    match (p.row, p.col) {
        (0, 2..=4) => Some(0),
        (1, 1..=5) => Some(1),
        _ => None,
    }
}

pub fn comm_max_steps() -> u32 {
    crate::env::default_max_steps(WIDTH, HEIGHT)
}

/// Fresh environment for the layout, trains not yet departed.
pub fn comm_env(seed: u64) -> EnvState {
    let (grid, agents) = comm_layout();
    EnvState::reset(Arc::new(grid), &agents, comm_max_steps(), seed, MalfunctionParams::default())
        .expect("comm layout placement is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub slot: u8,
    pub symbol: Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSession {
    /// Oldest first; at most [`BUFFER_CAPACITY`] entries.
    pub buffer: VecDeque<Utterance>,
    pub eot_flags: [bool; 2],
    pub round_count: u32,
    pub max_rounds: u32,
}

impl CommSession {
    pub fn new(max_rounds: u32) -> CommSession {
        CommSession {
            buffer: VecDeque::with_capacity(BUFFER_CAPACITY),
            eot_flags: [false; 2],
            round_count: 0,
            max_rounds,
        }
    }

    fn write(&mut self, slot: usize, symbol: Symbol) {
        if self.buffer.len() == BUFFER_CAPACITY {
            self.buffer.pop_front();
        }
        self.buffer.push_back(Utterance {
            slot: slot as u8,
            symbol,
        });
        if symbol == Symbol::Eot {
            self.eot_flags[slot] = true;
        }
    }

    /// Flattened buffer as seen by `slot`.
    pub fn encode(&self, slot: usize) -> [f64; BUFFER_DIM] {
        let mut v = [0.0; BUFFER_DIM];
        for (i, u) in self.buffer.iter().enumerate() {
            v[i * SLOT_FEATURES + u.symbol.index()] = 1.0;
            if u.slot as usize == slot {
                v[i * SLOT_FEATURES + N_SYMBOLS] = 1.0;
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Movement,
    /// `order[turn]` writes next.
    Loop { order: [usize; 2], turn: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ending {
    Running,
    Collision,
    Success,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommOutcome {
    pub rewards: [f64; 2],
    pub done: bool,
    /// Environment time advanced (false inside the loop).
    pub env_stepped: bool,
}

#[derive(Debug, Clone)]
pub struct CommEnvState {
    pub env: EnvState,
    mirror: EnvState,
    ctx: [ObsContext; 2],
    /// Physical train driven by each learner slot.
    pub slot_agent: [usize; 2],
    pub session: CommSession,
    pub phase: Phase,
    pub comm_enabled: bool,
    /// Symbols are off for a slot's decision right after a loop.
    comm_blocked: [bool; 2],
    pub ending: Ending,
    pub transcript: Vec<Utterance>,
    pub rounds_total: u32,
    pub forced_end: bool,
    rng: ChaCha8Rng,
    pub seed: u64,
}

fn mirror_pos(p: Pos) -> Pos {
    Pos::new(p.row, WIDTH - 1 - p.col)
}

fn mirror_env_from(env: &EnvState, mirror: &mut EnvState) {
    // Train 1 becomes train 0 of the mirror image and vice versa.
    for (dst, src) in mirror.agents.iter_mut().zip(env.agents.iter().rev()) {
        let id = dst.id;
        *dst = src.clone();
        dst.id = id;
        dst.position = mirror_pos(src.position);
        dst.heading = src.heading.mirrored();
        dst.target = mirror_pos(src.target);
        dst.start = mirror_pos(src.start);
        dst.start_heading = src.start_heading.mirrored();
        dst.exit = src.exit.map(Heading::mirrored);
    }
    mirror.step_count = env.step_count;
}

impl CommEnvState {
    /// Slot-to-train assignment and the in-loop coin come from `seed`.
    pub fn reset(seed: u64, comm_enabled: bool, max_rounds: u32) -> CommEnvState {
        let env = comm_env(seed);
        let (grid, agents) = comm_layout();
        let mgrid = Arc::new(grid.mirrored());
        let mroster: Vec<AgentSpec> = agents
            .iter()
            .rev()
            .map(|a| AgentSpec {
                start: mirror_pos(a.start),
                heading: a.heading.mirrored(),
                target: mirror_pos(a.target),
                speed: a.speed,
            })
            .collect();
        let mirror = EnvState::reset(mgrid, &mroster, comm_max_steps(), seed, MalfunctionParams::default())
            .expect("mirrored layout is valid");
        let ctx = [ObsContext::new(&env), ObsContext::new(&mirror)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slot_agent = if rng.gen::<bool>() { [1, 0] } else { [0, 1] };
        let mut s = CommEnvState {
            env,
            mirror,
            ctx,
            slot_agent,
            session: CommSession::new(max_rounds),
            phase: Phase::Movement,
            comm_enabled,
            comm_blocked: [false; 2],
            ending: Ending::Running,
            transcript: Vec::new(),
            rounds_total: 0,
            forced_end: false,
            rng,
            seed,
        };
        s.depart();
        s
    }

    /// Both trains enter their start cells; departure is not a choice here.
    fn depart(&mut self) {
        self.env
            .step(&[ActionKind::Forward, ActionKind::Forward])
            .expect("departure step");
        mirror_env_from(&self.env, &mut self.mirror);
    }

    pub fn is_done(&self) -> bool {
        self.ending != Ending::Running
    }

    pub fn in_loop(&self) -> bool {
        matches!(self.phase, Phase::Loop { .. })
    }

    fn at_decision(&self, agent: usize) -> bool {
        let a = &self.env.agents[agent];
        a.status == AgentStatus::Active
            && a.progress == 0
            && self.env.grid.moves(a.position, a.heading).len() >= 2
    }

    /// Slots that must act in the next call to [`CommEnvState::step`].
    pub fn pending(&self) -> Vec<usize> {
        if self.is_done() {
            return Vec::new();
        }
        match self.phase {
            Phase::Loop { order, turn } => vec![order[turn]],
            Phase::Movement => (0..2).filter(|&s| self.at_decision(self.slot_agent[s])).collect(),
        }
    }

    /// Physical action for a movement choice made in the slot's own frame.
    fn physical(&self, slot: usize, a: ActionKind) -> ActionKind {
        if self.slot_agent[slot] == 1 {
            a.mirrored()
        } else {
            a
        }
    }

    pub fn legal(&self, slot: usize) -> [bool; N_COMM_ACTIONS] {
        let mut m = [false; N_COMM_ACTIONS];
        let symbols_ok = self.comm_enabled && !self.comm_blocked[slot];
        if self.in_loop() {
            for s in Symbol::ALL {
                m[CommAction::Say(s).index()] = true;
            }
            return m;
        }
        let a = &self.env.agents[self.slot_agent[slot]];
        let allowed = self.env.grid.moves(a.position, a.heading);
        for k in [ActionKind::Left, ActionKind::Forward, ActionKind::Right] {
            m[k.index()] = resolve_direction(allowed, a.heading, self.physical(slot, k)).is_some();
        }
        if symbols_ok {
            for s in Symbol::ALL {
                m[CommAction::Say(s).index()] = true;
            }
        }
        m
    }

    pub fn observe(&self, slot: usize) -> Vec<f64> {
        let agent = self.slot_agent[slot];
        let base = if agent == 0 {
            observe(&self.env, &self.ctx[0], 0)
        } else {
            observe(&self.mirror, &self.ctx[1], 0)
        };
        let mut v = base.into_inner();
        if self.in_loop() {
            v[..TREE_DIM].fill(0.0);
        }
        debug_assert_eq!(v.len(), TREE_DIM + AGENT_FEATURES);
        v.extend_from_slice(&self.session.encode(slot));
        v.push(if self.in_loop() { 1.0 } else { 0.0 });
        v
    }

    fn say(&mut self, slot: usize, symbol: Symbol) {
        self.session.write(slot, symbol);
        self.transcript.push(Utterance {
            slot: slot as u8,
            symbol,
        });
    }

    fn end_loop(&mut self, forced: bool) {
        if forced {
            self.session.eot_flags = [true; 2];
            self.forced_end = true;
        }
        self.rounds_total += self.session.round_count;
        self.phase = Phase::Movement;
        self.comm_blocked = [true; 2];
    }

    /// Moves the turn on after a write, closing rounds and the loop.
    fn advance_turn(&mut self, order: [usize; 2], mut turn: usize) {
        if self.session.eot_flags == [true; 2] {
            self.end_loop(false);
            return;
        }
        loop {
            turn += 1;
            if turn == 2 {
                if self.session.round_count >= self.session.max_rounds {
                    self.end_loop(true);
                    return;
                }
                self.session.round_count += 1;
                turn = 0;
            }
            if !self.session.eot_flags[order[turn]] {
                break;
            }
        }
        self.phase = Phase::Loop { order, turn };
    }

    fn start_loop(&mut self, initiators: &[(usize, Symbol)]) {
        let first = match initiators {
            [(s, _)] => *s,
            _ => {
                if self.rng.gen::<bool>() {
                    1
                } else {
                    0
                }
            }
        };
        let order = [first, 1 - first];
        self.session.eot_flags = [false; 2];
        self.session.round_count = 1;
        self.phase = Phase::Loop { order, turn: 0 };
        // The initiating symbols are each writer's first turn.
        for turn in 0..2 {
            let slot = order[turn];
            if let Some(&(_, sym)) = initiators.iter().find(|(s, _)| *s == slot) {
                let Phase::Loop { turn: now, .. } = self.phase else {
                    return;
                };
                if now != turn {
                    continue;
                }
                self.say(slot, sym);
                self.advance_turn(order, turn);
            }
        }
    }

    pub fn step(&mut self, actions: &[Option<CommAction>; 2]) -> Result<CommOutcome> {
        if self.is_done() {
            return Err(Error::Comm("episode already finished".into()));
        }
        let idle = CommOutcome {
            rewards: [0.0; 2],
            done: false,
            env_stepped: false,
        };
        if let Phase::Loop { order, turn } = self.phase {
            let slot = order[turn];
            return match actions[slot] {
                Some(CommAction::Say(sym)) => {
                    self.say(slot, sym);
                    self.advance_turn(order, turn);
                    Ok(idle)
                }
                Some(CommAction::Move(_)) => Err(Error::Comm(format!("slot {slot} moved during the loop"))),
                None => Err(Error::Comm(format!("slot {slot} must write a symbol"))),
            };
        }

        let pending = self.pending();
        let mut initiators = Vec::new();
        let mut chosen = [None; 2];
        for &slot in &pending {
            let Some(a) = actions[slot] else {
                return Err(Error::Comm(format!("slot {slot} is at a decision point")));
            };
            if !self.legal(slot)[a.index()] {
                return Err(Error::Comm(format!("slot {slot}: {a:?} is not legal here")));
            }
            match a {
                CommAction::Say(sym) => initiators.push((slot, sym)),
                CommAction::Move(k) => chosen[slot] = Some(k),
            }
        }
        if !initiators.is_empty() {
            self.start_loop(&initiators);
            return Ok(idle);
        }

        let mut phys = [ActionKind::Forward; 2];
        for slot in 0..2 {
            if let Some(k) = chosen[slot] {
                phys[self.slot_agent[slot]] = self.physical(slot, k);
            }
        }
        self.env.step(&phys)?;
        mirror_env_from(&self.env, &mut self.mirror);
        self.comm_blocked = [false; 2];

        let a = &self.env.agents;
        let collided = a.iter().all(|x| x.status == AgentStatus::Active)
            && span_of(a[0].position).is_some()
            && span_of(a[0].position) == span_of(a[1].position);
        let mut out = CommOutcome {
            rewards: [0.0; 2],
            done: false,
            env_stepped: true,
        };
        if collided {
            self.ending = Ending::Collision;
            out.rewards = [-1.0; 2];
        } else if self.env.all_done() {
            self.ending = Ending::Success;
            out.rewards = [1.0; 2];
        } else if self.env.is_finished() {
            self.ending = Ending::Timeout;
        }
        out.done = self.is_done();
        Ok(out)
    }

    pub fn record(&self) -> EpisodeTranscript {
        EpisodeTranscript {
            seed: self.seed,
            success: self.ending == Ending::Success,
            rounds: self.rounds_total,
            symbols: self.transcript.clone(),
            forced: self.forced_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub seed: u64,
    pub success: bool,
    pub rounds: u32,
    pub symbols: Vec<Utterance>,
    /// A loop hit the round cap and was closed by the environment.
    pub forced: bool,
}

impl EpisodeTranscript {
    /// `seed <TAB> success <TAB> rounds <TAB> symbols <TAB> forced`, symbols as
    /// `slot:SYM` separated by spaces or `-` when nothing was said.
    pub fn to_line(&self) -> String {
        let syms = if self.symbols.is_empty() {
            "-".to_string()
        } else {
            self.symbols
                .iter()
                .map(|u| format!("{}:{}", u.slot, u.symbol))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.seed, self.success as u8, self.rounds, syms, self.forced as u8
        )
    }

    pub fn symbol_sequence(&self) -> Vec<Symbol> {
        self.symbols.iter().map(|u| u.symbol).collect()
    }
}

/// Fraction of distinct symbol sequences among the successful episodes of
/// the last `window` entries. `None` if none of them succeeded.
pub fn transcript_variability(log: &[EpisodeTranscript], window: usize) -> Option<f64> {
    let tail = &log[log.len().saturating_sub(window)..];
    let ok: Vec<Vec<Symbol>> = tail.iter().filter(|t| t.success).map(|t| t.symbol_sequence()).collect();
    if ok.is_empty() {
        return None;
    }
    let distinct: BTreeSet<&Vec<Symbol>> = ok.iter().collect();
    Some(distinct.len() as f64 / ok.len() as f64)
}

/// Rounds per successful episode over the last `window` entries.
pub fn round_histogram(log: &[EpisodeTranscript], window: usize) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for t in log[log.len().saturating_sub(window)..].iter().filter(|t| t.success) {
        *h.entry(t.rounds).or_insert(0) += 1;
    }
    h
}

pub fn success_rate(log: &[EpisodeTranscript], window: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|t| t.success).count() as f64 / tail.len() as f64
}

fn default_episodes() -> u64 {
    100_000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_gamma() -> f64 {
    0.99
}
fn default_entropy() -> f64 {
    0.01
}
fn default_value() -> f64 {
    0.05
}
fn default_t_max() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_log_every() -> u64 {
    1_000
}
fn default_window() -> usize {
    1_000
}
fn default_max_rounds() -> u32 {
    MAX_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub comm_enabled: bool,
    #[serde(default = "default_entropy")]
    pub entropy_coef: f64,
    #[serde(default = "default_value")]
    pub value_coef: f64,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    /// Curve resolution in episodes.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Trailing window for the success curve.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default)]
    pub rmsprop: RmsPropConfig,
}

impl Default for CommConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl CommConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("comm gamma must be in (0,1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("comm lr must be positive");
        }
        if self.t_max == 0 || self.log_every == 0 || self.window == 0 || self.max_rounds == 0 {
            return bad("comm t_max, log_every, window and max_rounds must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("comm loss coefficients must be non-negative");
        }
        Ok(())
    }

    pub fn coefs(&self) -> LossCoefs {
        LossCoefs {
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

pub fn comm_net_spec() -> NetSpec {
    NetSpec::new(COMM_OBS_DIM, N_COMM_ACTIONS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: u64,
    pub success_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CommRun {
    pub curve: Vec<CurvePoint>,
    pub log: Vec<EpisodeTranscript>,
    pub params: NetworkParams,
}

impl CommRun {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("episode,success_rate\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:.6}\n", p.episode, p.success_rate));
        }
        s
    }

    pub fn transcript_text(&self) -> String {
        let mut s = String::new();
        for t in &self.log {
            s.push_str(&t.to_line());
            s.push('\n');
        }
        s
    }
}

fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&base.to_le_bytes());
    bytes[8..].copy_from_slice(&episode.to_le_bytes());
    crate::digest64(&bytes)
}

/// Plays one episode with `params`, sampling actions. With `buf` present,
/// every decision is recorded and finished segments go to `learn`.
pub fn play_comm_episode(
    env: &mut CommEnvState,
    params: &NetworkParams,
    rng: &mut ChaCha8Rng,
    mut learner: Option<(&mut SegmentBuffer, &mut dyn FnMut(Trajectory) -> Result<()>)>,
) -> Result<()> {
    let mut states = [LstmState::zeros(), LstmState::zeros()];
    while !env.is_done() {
        let mut actions = [None; 2];
        for slot in env.pending() {
            let obs = env.observe(slot);
            let legal = env.legal(slot);
            let out = forward_masked(params, &obs, &states[slot], &legal)?;
            let a = sample_index(&out.probs, rng);
            if let Some((buf, learn)) = learner.as_mut() {
                if buf.is_full(slot) {
                    let t = buf.take(slot, out.value).expect("full segment");
                    learn(t)?;
                }
                buf.push(slot, obs, Some(legal.to_vec()), a, &states[slot]);
            }
            states[slot] = out.state;
            actions[slot] = CommAction::from_index(a);
        }
        let out = env.step(&actions)?;
        if let Some((buf, learn)) = learner.as_mut() {
            for slot in 0..2 {
                buf.credit(slot, out.rewards[slot]);
                if out.done {
                    if let Some(t) = buf.take(slot, 0.0) {
                        learn(t)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Trains one shared policy for both slots, single worker, one update per
/// finished segment.
pub fn train_comm(cfg: &CommConfig) -> Result<CommRun> {
    cfg.validate()?;
    let params = init_params(comm_net_spec(), episode_seed(cfg.seed, u64::MAX))?;
    let shared = SharedParams::new(params, cfg.rmsprop);
    let mut local = shared.snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, u64::MAX - 1));
    let mut log = Vec::with_capacity(cfg.episodes as usize);
    let mut curve = Vec::new();
    let coefs = cfg.coefs();
    for ep in 0..cfg.episodes {
        let mut env = CommEnvState::reset(episode_seed(cfg.seed, ep), cfg.comm_enabled, cfg.max_rounds);
        let mut buf = SegmentBuffer::new(2, cfg.t_max, cfg.gamma);
        let mut pending_updates: Vec<Trajectory> = Vec::new();
        {
            let mut collect = |t: Trajectory| -> Result<()> {
                pending_updates.push(t);
                Ok(())
            };
            play_comm_episode(&mut env, &local, &mut rng, Some((&mut buf, &mut collect)))?;
        }
        for t in pending_updates {
            let (g, _) = a3c_gradients(&local, &t, coefs)
                .map_err(|e| Error::Aborted(format!("comm episode {ep}: {e}")))?;
            apply_update(&shared, &g, cfg.lr)?;
            shared.snapshot_into(&mut local);
        }
        log.push(env.record());
        if (ep + 1) % cfg.log_every == 0 || ep + 1 == cfg.episodes {
            curve.push(CurvePoint {
                episode: ep + 1,
                success_rate: success_rate(&log, cfg.window),
            });
        }
    }
    Ok(CommRun {
        curve,
        log,
        params: local,
    })
}
