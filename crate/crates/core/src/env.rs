//! Multi-agent rail environment: movement with fractional speeds,
//! malfunctions, conflict resolution, rewards and episode lifecycle.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::grid::{Heading, HeadingSet, Pos, RailGrid};

/// Cell progress is counted in twelfths so speeds 1, 1/2, 1/3, 1/4 are exact.
pub const PROGRESS_UNITS: u8 = 12;

/// Speed as a fraction `1 / denominator` cells per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Speed(u8);

impl Speed {
    pub const FULL: Speed = Speed(1);

    pub fn from_denominator(den: u8) -> Option<Speed> {
        (1..=4).contains(&den).then_some(Speed(den))
    }

    pub fn denominator(self) -> u8 {
        self.0
    }

    pub fn units(self) -> u8 {
        PROGRESS_UNITS / self.0
    }

    pub fn as_f64(self) -> f64 {
        1.0 / self.0 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentStatus {
    Ready,
    Active,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Nothing = 0,
    Left = 1,
    Forward = 2,
    Right = 3,
    Stop = 4,
}

impl ActionKind {
    pub const COUNT: usize = 5;
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Nothing,
        ActionKind::Left,
        ActionKind::Forward,
        ActionKind::Right,
        ActionKind::Stop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            ActionKind::Nothing => 'N',
            ActionKind::Left => 'L',
            ActionKind::Forward => 'F',
            ActionKind::Right => 'R',
            ActionKind::Stop => 'S',
        }
    }

    pub fn from_char(c: char) -> Option<ActionKind> {
        match c.to_ascii_uppercase() {
            'N' => Some(ActionKind::Nothing),
            'L' => Some(ActionKind::Left),
            'F' => Some(ActionKind::Forward),
            'R' => Some(ActionKind::Right),
            'S' => Some(ActionKind::Stop),
            _ => None,
        }
    }

    /// The same manoeuvre seen in a left/right mirrored world.
    pub fn mirrored(self) -> ActionKind {
        match self {
            ActionKind::Left => ActionKind::Right,
            ActionKind::Right => ActionKind::Left,
            a => a,
        }
    }
}

/// Exit chosen by a directional action, or `None` if the cell does not offer it.
pub fn resolve_direction(allowed: HeadingSet, heading: Heading, action: ActionKind) -> Option<Heading> {
    let want = match action {
        ActionKind::Left => heading.left(),
        ActionKind::Right => heading.right(),
        ActionKind::Forward | ActionKind::Nothing => {
            if allowed.contains(heading) {
                return Some(heading);
            }
            return allowed.single();
        }
        ActionKind::Stop => return None,
    };
    allowed.contains(want).then_some(want)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MalfunctionParams {
    /// Probability per active agent-step of a breakdown.
    pub rate: f64,
    pub min_duration: u32,
    pub max_duration: u32,
}

impl Default for MalfunctionParams {
    fn default() -> Self {
        MalfunctionParams {
            rate: 0.0,
            min_duration: 2,
            max_duration: 10,
        }
    }
}

impl MalfunctionParams {
    pub fn stress() -> Self {
        MalfunctionParams {
            rate: 1.0 / 2000.0,
            min_duration: 2,
            max_duration: 10,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.rate) || !self.rate.is_finite() {
            return Err(EnvError::Malfunction(format!("rate {} not in [0,1]", self.rate)));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return Err(EnvError::Malfunction(format!(
                "durations {}..{} invalid",
                self.min_duration, self.max_duration
            )));
        }
        Ok(())
    }
}

/// Roster entry used to place an agent at reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Pos,
    pub heading: Heading,
    pub target: Pos,
    pub speed: Speed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub position: Pos,
    pub heading: Heading,
    pub target: Pos,
    pub speed: Speed,
    /// Twelfths of a cell travelled in the current cell.
    pub progress: u8,
    pub malfunction_remaining: u32,
    pub status: AgentStatus,
    /// Whether the agent is trying to move (false after Stop).
    pub moving: bool,
    /// Exit picked for the current cell; locked once progress > 0.
    pub exit: Option<Heading>,
    pub start: Pos,
    pub start_heading: Heading,
}

impl AgentState {
    pub fn cell_progress(&self) -> f64 {
        self.progress as f64 / PROGRESS_UNITS as f64
    }

    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }

    pub fn spec(&self) -> AgentSpec {
        AgentSpec {
            start: self.start,
            heading: self.start_heading,
            target: self.target,
            speed: self.speed,
        }
    }
}

/// Per-agent flags reported by [`EnvState::step`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepInfo {
    /// A directional action named an exit the cell does not offer; treated as Stop.
    pub invalid_action: bool,
    pub blocked: bool,
    pub malfunctioning: bool,
    pub arrived: bool,
    pub moved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
    pub info: Vec<StepInfo>,
    pub episode_done: bool,
}

pub fn default_max_steps(width: usize, height: usize) -> u32 {
    (4 * (width + height)) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub grid: Arc<RailGrid>,
    pub agents: Vec<AgentState>,
    pub step_count: u32,
    pub max_steps: u32,
    pub seed: u64,
    pub malfunction: MalfunctionParams,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn reset(
        grid: Arc<RailGrid>,
        roster: &[AgentSpec],
        max_steps: u32,
        seed: u64,
        malfunction: MalfunctionParams,
    ) -> Result<EnvState, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::ZeroMaxSteps);
        }
        malfunction.validate()?;
        if roster.is_empty() {
            return Err(EnvError::InvalidPlacement("no agents".into()));
        }
        for (i, a) in roster.iter().enumerate() {
            for (what, p) in [("start", a.start), ("target", a.target)] {
                if !grid.is_rail(p) {
                    return Err(EnvError::InvalidPlacement(format!(
                        "agent {i} {what} {p} is not a rail cell"
                    )));
                }
            }
            if a.start == a.target {
                return Err(EnvError::InvalidPlacement(format!("agent {i} starts on its target")));
            }
            if grid.moves(a.start, a.heading).is_empty() {
                return Err(EnvError::InvalidPlacement(format!(
                    "agent {i} cannot leave {} heading {:?}",
                    a.start, a.heading
                )));
            }
            if roster[..i].iter().any(|b| b.start == a.start) {
                return Err(EnvError::InvalidPlacement(format!(
                    "agent {i} shares start cell {}",
                    a.start
                )));
            }
        }
        let agents = roster
            .iter()
            .enumerate()
            .map(|(id, a)| AgentState {
                id,
                position: a.start,
                heading: a.heading,
                target: a.target,
                speed: a.speed,
                progress: 0,
                malfunction_remaining: 0,
                status: AgentStatus::Ready,
                moving: false,
                exit: None,
                start: a.start,
                start_heading: a.heading,
            })
            .collect();
        Ok(EnvState {
            grid,
            agents,
            step_count: 0,
            max_steps,
            seed,
            malfunction,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn roster(&self) -> Vec<AgentSpec> {
        self.agents.iter().map(AgentState::spec).collect()
    }

    pub fn all_done(&self) -> bool {
        self.agents.iter().all(|a| a.status == AgentStatus::Done)
    }

    pub fn is_finished(&self) -> bool {
        self.all_done() || self.step_count >= self.max_steps
    }

    pub fn arrived_count(&self) -> usize {
        self.agents.iter().filter(|a| a.status == AgentStatus::Done).count()
    }

    /// Id of the active agent occupying `cell`, if any.
    pub fn occupant(&self, cell: Pos) -> Option<usize> {
        self.agents
            .iter()
            .find(|a| a.status == AgentStatus::Active && a.position == cell)
            .map(|a| a.id)
    }

    fn occupied_by_other(&self, cell: Pos, me: usize) -> bool {
        self.agents
            .iter()
            .any(|a| a.id != me && a.status == AgentStatus::Active && a.position == cell)
    }

    /// Steps with one action per agent, indexed by agent id. Actions of
    /// finished agents are ignored.
    pub fn step(&mut self, actions: &[ActionKind]) -> Result<StepOutcome, EnvError> {
        if self.is_finished() {
            return Err(EnvError::EpisodeFinished);
        }
        let n = self.agents.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        let penalty = 1.0 / self.max_steps as f64;
        let mut rewards = vec![0.0; n];
        let mut info = vec![StepInfo::default(); n];
        for (r, a) in rewards.iter_mut().zip(&self.agents) {
            if a.status != AgentStatus::Done {
                *r -= penalty;
            }
        }

        if self.malfunction.rate > 0.0 {
            let m = self.malfunction;
            for a in self.agents.iter_mut() {
                if a.status == AgentStatus::Active
                    && a.malfunction_remaining == 0
                    && self.rng.gen::<f64>() < m.rate
                {
                    a.malfunction_remaining = self.rng.gen_range(m.min_duration..=m.max_duration);
                }
            }
        }

        for id in 0..n {
            let action = actions[id];
            match self.agents[id].status {
                AgentStatus::Done => {}
                AgentStatus::Ready => match action {
                    ActionKind::Forward => {
                        let start = self.agents[id].start;
                        if self.occupied_by_other(start, id) {
                            info[id].blocked = true;
                        } else {
                            let a = &mut self.agents[id];
                            a.status = AgentStatus::Active;
                            a.position = start;
                            a.heading = a.start_heading;
                            a.progress = 0;
                            a.moving = true;
                            a.exit = None;
                            info[id].moved = true;
                        }
                    }
                    ActionKind::Left | ActionKind::Right => info[id].invalid_action = true,
                    ActionKind::Nothing | ActionKind::Stop => {}
                },
                AgentStatus::Active => {
                    if self.agents[id].malfunction_remaining > 0 {
                        self.agents[id].malfunction_remaining -= 1;
                        info[id].malfunctioning = true;
                        continue;
                    }
                    self.apply_action(id, action, &mut info[id]);
                    self.advance(id, &mut rewards[id], &mut info[id]);
                }
            }
        }

        self.step_count += 1;
        let done: Vec<bool> = self.agents.iter().map(|a| a.status == AgentStatus::Done).collect();
        Ok(StepOutcome {
            rewards,
            done,
            info,
            episode_done: self.is_finished(),
        })
    }

    /// Steps with actions keyed by agent id; every unfinished agent needs one.
    pub fn step_map(&mut self, actions: &BTreeMap<usize, ActionKind>) -> Result<StepOutcome, EnvError> {
        if let Some(&bad) = actions.keys().find(|&&id| id >= self.agents.len()) {
            return Err(EnvError::UnknownAgent(bad));
        }
        let mut flat = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            match actions.get(&a.id) {
                Some(&act) => flat.push(act),
                None if a.status == AgentStatus::Done => flat.push(ActionKind::Nothing),
                None => return Err(EnvError::MissingAction(a.id)),
            }
        }
        self.step(&flat)
    }

    fn apply_action(&mut self, id: usize, action: ActionKind, info: &mut StepInfo) {
        let grid = Arc::clone(&self.grid);
        let a = &mut self.agents[id];
        if action == ActionKind::Stop {
            a.moving = false;
            return;
        }
        if a.progress > 0 {
            // committed to the exit picked on entry
            if action != ActionKind::Nothing {
                a.moving = true;
            }
            return;
        }
        let choose = match action {
            ActionKind::Nothing => a.moving && a.exit.is_none(),
            _ => true,
        };
        if !choose {
            return;
        }
        let allowed = grid.moves(a.position, a.heading);
        match resolve_direction(allowed, a.heading, action) {
            Some(h) => {
                a.exit = Some(h);
                a.moving = true;
            }
            None => {
                a.moving = false;
                info.invalid_action = true;
            }
        }
    }

    fn advance(&mut self, id: usize, reward: &mut f64, info: &mut StepInfo) {
        let (moving, exit, units, progress, position) = {
            let a = &self.agents[id];
            (a.moving, a.exit, a.speed.units(), a.progress, a.position)
        };
        let Some(exit) = exit else { return };
        if !moving {
            return;
        }
        let next_progress = progress + units;
        if next_progress < PROGRESS_UNITS {
            self.agents[id].progress = next_progress;
            return;
        }
        let next = self
            .grid
            .neighbor(position, exit)
            .expect("validated grid keeps exits in bounds");
        if self.occupied_by_other(next, id) {
            info.blocked = true;
            return;
        }
        let a = &mut self.agents[id];
        a.position = next;
        a.heading = exit;
        a.progress = 0;
        a.exit = None;
        info.moved = true;
        if next == a.target {
            a.status = AgentStatus::Done;
            a.moving = false;
            *reward += 1.0;
            info.arrived = true;
        }
    }

    /// Canonical bytes of the full state, including the generator position.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    /// Digest of everything that changes during an episode (agents, clock, rng).
    pub fn dynamic_digest(&self) -> u64 {
        let mut b = Vec::with_capacity(64 + self.agents.len() * 48);
        b.extend_from_slice(&self.step_count.to_le_bytes());
        for a in &self.agents {
            b.extend_from_slice(&(a.position.row as u32).to_le_bytes());
            b.extend_from_slice(&(a.position.col as u32).to_le_bytes());
            b.push(a.heading as u8);
            b.push(a.progress);
            b.extend_from_slice(&a.malfunction_remaining.to_le_bytes());
            b.push(a.status as u8);
            b.push(a.moving as u8);
            b.push(a.exit.map_or(0xFF, |h| h as u8));
        }
        b.extend_from_slice(&self.rng.get_seed());
        b.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        b.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        crate::digest64(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TrackBuilder;
    use ActionKind::*;

    fn corridor(len: usize) -> Arc<RailGrid> {
        let mut b = TrackBuilder::new(len, 1);
        let path: Vec<Pos> = (0..len).map(|c| Pos::new(0, c)).collect();
        b.connect_path(&path);
        Arc::new(b.build().unwrap())
    }

    fn spec(start: usize, heading: Heading, target: usize) -> AgentSpec {
        AgentSpec {
            start: Pos::new(0, start),
            heading,
            target: Pos::new(0, target),
            speed: Speed::FULL,
        }
    }

    #[test]
    fn corridor_arrival_and_return() {
        // 6-cell corridor: one step to enter, five moves to the far end.
        let len = 6;
        let max_steps = 40;
        let mut env = EnvState::reset(
            corridor(len),
            &[spec(0, Heading::East, len - 1)],
            max_steps,
            1,
            MalfunctionParams::default(),
        )
        .unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        while !env.is_finished() {
            let out = env.step(&[Forward]).unwrap();
            total += out.rewards[0];
            steps += 1;
        }
        assert_eq!(steps, len);
        assert!((total - (1.0 - len as f64 / max_steps as f64)).abs() < 1e-12);
        assert!(matches!(env.step(&[Forward]), Err(EnvError::EpisodeFinished)));
    }

    #[test]
    fn malfunction_freezes_for_its_duration() {
        let mut env = EnvState::reset(
            corridor(8),
            &[spec(0, Heading::East, 7)],
            50,
            3,
            MalfunctionParams::default(),
        )
        .unwrap();
        env.step(&[Forward]).unwrap();
        env.agents[0].malfunction_remaining = 3;
        let before = env.agents[0].position;
        for _ in 0..3 {
            let out = env.step(&[Forward]).unwrap();
            assert!(out.info[0].malfunctioning);
            assert_eq!(env.agents[0].position, before);
        }
        env.step(&[Forward]).unwrap();
        assert_eq!(env.agents[0].position, Pos::new(0, 1));
    }

    #[test]
    fn head_on_agents_block_each_other() {
        let mut env = EnvState::reset(
            corridor(6),
            &[spec(2, Heading::East, 5), spec(3, Heading::West, 0)],
            30,
            0,
            MalfunctionParams::default(),
        )
        .unwrap();
        env.step(&[Forward, Forward]).unwrap();
        let out = env.step(&[Forward, Forward]).unwrap();
        assert!(out.info[0].blocked && out.info[1].blocked);
        assert_eq!(env.agents[0].position, Pos::new(0, 2));
        assert_eq!(env.agents[1].position, Pos::new(0, 3));
    }

    #[test]
    fn slow_agent_takes_denominator_steps_per_cell() {
        let mut s = spec(0, Heading::East, 3);
        s.speed = Speed::from_denominator(3).unwrap();
        let mut env = EnvState::reset(corridor(4), &[s], 40, 0, MalfunctionParams::default()).unwrap();
        env.step(&[Forward]).unwrap();
        let mut steps = 0;
        while !env.is_finished() {
            env.step(&[Forward]).unwrap();
            steps += 1;
            assert!(env.agents[0].progress < PROGRESS_UNITS);
        }
        assert_eq!(steps, 9);
    }

    #[test]
    fn invalid_direction_degrades_to_stop() {
        let mut env = EnvState::reset(
            corridor(5),
            &[spec(0, Heading::East, 4)],
            20,
            0,
            MalfunctionParams::default(),
        )
        .unwrap();
        env.step(&[Forward]).unwrap();
        let out = env.step(&[Left]).unwrap();
        assert!(out.info[0].invalid_action);
        assert_eq!(env.agents[0].position, Pos::new(0, 0));
        assert!(!env.agents[0].moving);
        // Nothing keeps a stopped train stopped
        env.step(&[Nothing]).unwrap();
        assert_eq!(env.agents[0].position, Pos::new(0, 0));
        env.step(&[Forward]).unwrap();
        assert_eq!(env.agents[0].position, Pos::new(0, 1));
        // and keeps a moving train moving
        env.step(&[Nothing]).unwrap();
        assert_eq!(env.agents[0].position, Pos::new(0, 2));
    }

    #[test]
    fn reset_rejects_bad_rosters() {
        let g = corridor(5);
        let same = [spec(1, Heading::East, 4), spec(1, Heading::East, 3)];
        assert!(matches!(
            EnvState::reset(g.clone(), &same, 10, 0, MalfunctionParams::default()),
            Err(EnvError::InvalidPlacement(_))
        ));
        let off = [AgentSpec {
            start: Pos::new(0, 9),
            ..spec(0, Heading::East, 4)
        }];
        assert!(EnvState::reset(g.clone(), &off, 10, 0, MalfunctionParams::default()).is_err());
        let ok = EnvState::reset(g, &[spec(0, Heading::East, 4)], 10, 0, MalfunctionParams::default()).unwrap();
        assert_eq!(ok.step_count, 0);
        assert!(ok.agents.iter().all(|a| a.status == AgentStatus::Ready));
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let g = corridor(5);
        let mk = || {
            EnvState::reset(g.clone(), &[spec(0, Heading::East, 4)], 10, 42, MalfunctionParams::stress()).unwrap()
        };
        assert_eq!(mk().to_bytes(), mk().to_bytes());
        assert_eq!(mk().dynamic_digest(), mk().dynamic_digest());
    }

    #[test]
    fn step_map_checks_ids() {
        let g = corridor(5);
        let mut env = EnvState::reset(g, &[spec(0, Heading::East, 4)], 10, 0, MalfunctionParams::default()).unwrap();
        let mut m = BTreeMap::new();
        m.insert(3, Forward);
        assert_eq!(env.step_map(&m), Err(EnvError::UnknownAgent(3)));
        assert_eq!(env.step_map(&BTreeMap::new()), Err(EnvError::MissingAction(0)));
        m.clear();
        m.insert(0, Forward);
        assert!(env.step_map(&m).is_ok());
    }
}
