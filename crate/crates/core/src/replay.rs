//! Plain-text environment files and episode replays.
//!
//! Environment file:
//!
//! ```text
//! railenv v1
//! seed 42 max_steps 120
//! malfunction 0 2 10
//! agents 2
//! 3 4 E 10 12 1        start row/col, heading, target row/col, speed denominator
//! 7 1 N 0 3 2
//! railgrid v1          followed by the grid block
//! ...
//! ```
//!
//! A replay is `railreplay v1`, an environment block, `init <digest>`,
//! `steps <n>` and one line per step: the joint action as one character per
//! agent and the state digest after the step, in hex.

use std::sync::Arc;

use crate::env::{ActionKind, AgentSpec, EnvState, MalfunctionParams, Speed};
use crate::error::{Error, FormatError, Result};
use crate::grid::{Heading, Pos, RailGrid};
use crate::trainer::{run_episode_logged, Controller, EpisodeStats};

const ENV_MAGIC: &str = "railenv v1";
const REPLAY_MAGIC: &str = "railreplay v1";

pub fn env_to_text(env: &EnvState) -> String {
    let mut s = format!("{ENV_MAGIC}\nseed {} max_steps {}\n", env.seed, env.max_steps);
    let m = env.malfunction;
    s.push_str(&format!("malfunction {} {} {}\n", m.rate, m.min_duration, m.max_duration));
    s.push_str(&format!("agents {}\n", env.n_agents()));
    for a in env.roster() {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            a.start.row,
            a.start.col,
            a.heading.as_char(),
            a.target.row,
            a.target.col,
            a.speed.denominator()
        ));
    }
    s.push_str(&env.grid.to_text());
    s
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    /// 1-based number of the next line.
    next_no: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Lines<'a> {
        Lines {
            inner: text.lines(),
            next_no: 1,
        }
    }

    fn next(&mut self, what: &str) -> std::result::Result<(usize, &'a str), FormatError> {
        let no = self.next_no;
        let l = self
            .inner
            .next()
            .ok_or_else(|| FormatError::new(no, format!("unexpected end of file, expected {what}")))?;
        self.next_no += 1;
        Ok((no, l))
    }

    /// `key v1 v2 ...` with the key checked.
    fn fields(&mut self, key: &str) -> std::result::Result<(usize, Vec<&'a str>), FormatError> {
        let (no, l) = self.next(key)?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(FormatError::new(no, format!("expected '{key}'")));
        }
        Ok((no, it.collect()))
    }
}

fn num<T: std::str::FromStr>(tok: Option<&&str>, line: usize, what: &str) -> std::result::Result<T, FormatError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError::new(line, format!("bad {what}")))
}

fn parse_env(lines: &mut Lines<'_>) -> Result<EnvState> {
    let (no, magic) = lines.next(ENV_MAGIC)?;
    if magic.trim() != ENV_MAGIC {
        return Err(FormatError::new(no, format!("expected '{ENV_MAGIC}'")).into());
    }
    let (no, f) = lines.fields("seed")?;
    if f.len() != 3 || f[1] != "max_steps" {
        return Err(FormatError::new(no, "expected 'seed <n> max_steps <n>'").into());
    }
    let seed: u64 = num(f.first(), no, "seed")?;
    let max_steps: u32 = num(f.get(2), no, "max_steps")?;
    let (no, f) = lines.fields("malfunction")?;
    let malfunction = MalfunctionParams {
        rate: num(f.first(), no, "malfunction rate")?,
        min_duration: num(f.get(1), no, "malfunction duration")?,
        max_duration: num(f.get(2), no, "malfunction duration")?,
    };
    let (no, f) = lines.fields("agents")?;
    let n: usize = num(f.first(), no, "agent count")?;
    if n == 0 || n > 1 << 16 {
        return Err(FormatError::new(no, "agent count out of range").into());
    }
    let mut roster = Vec::with_capacity(n);
    for _ in 0..n {
        let (no, l) = lines.next("agent line")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 6 {
            return Err(FormatError::new(no, "agent line needs 6 fields").into());
        }
        let heading = t[2]
            .chars()
            .next()
            .filter(|_| t[2].len() == 1)
            .and_then(Heading::from_char)
            .ok_or_else(|| FormatError::new(no, "bad heading"))?;
        let den: u8 = num(t.get(5), no, "speed")?;
        roster.push(AgentSpec {
            start: Pos::new(num(t.first(), no, "row")?, num(t.get(1), no, "col")?),
            heading,
            target: Pos::new(num(t.get(3), no, "row")?, num(t.get(4), no, "col")?),
            speed: Speed::from_denominator(den).ok_or_else(|| FormatError::new(no, "speed denominator not in 1..=4"))?,
        });
    }
    let grid_line = lines.next_no;
    let (grid, next) = RailGrid::parse_lines(&mut lines.inner, grid_line)?;
    lines.next_no = next;
    grid.validate()
        .map_err(|e| FormatError::new(grid_line, format!("inconsistent grid: {e}")))?;
    EnvState::reset(Arc::new(grid), &roster, max_steps, seed, malfunction)
        .map_err(|e| FormatError::new(grid_line, e.to_string()).into())
}

/// Environment in reset state from the text written by [`env_to_text`].
pub fn env_from_text(text: &str) -> Result<EnvState> {
    let mut lines = Lines::new(text);
    let env = parse_env(&mut lines)?;
    expect_end(&mut lines)?;
    Ok(env)
}

fn expect_end(lines: &mut Lines<'_>) -> Result<()> {
    let no = lines.next_no;
    if lines.inner.any(|l| !l.trim().is_empty()) {
        return Err(FormatError::new(no, "unexpected trailing content").into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStep {
    pub actions: Vec<ActionKind>,
    /// State digest after the step.
    pub digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Environment as it was before the first step.
    pub initial: EnvState,
    pub initial_digest: u64,
    pub steps: Vec<ReplayStep>,
}

impl Replay {
    pub fn to_text(&self) -> String {
        let mut s = format!("{REPLAY_MAGIC}\n");
        s.push_str(&env_to_text(&self.initial));
        s.push_str(&format!("init {:016x}\nsteps {}\n", self.initial_digest, self.steps.len()));
        for st in &self.steps {
            let acts: String = st.actions.iter().map(|a| a.as_char()).collect();
            s.push_str(&format!("{acts} {:016x}\n", st.digest));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Replay> {
        let mut lines = Lines::new(text);
        let (no, magic) = lines.next(REPLAY_MAGIC)?;
        if magic.trim() != REPLAY_MAGIC {
            return Err(FormatError::new(no, format!("expected '{REPLAY_MAGIC}'")).into());
        }
        let initial = parse_env(&mut lines)?;
        let hex = |t: Option<&&str>, no: usize| {
            t.and_then(|t| u64::from_str_radix(t, 16).ok())
                .ok_or_else(|| FormatError::new(no, "bad digest"))
        };
        let (no, f) = lines.fields("init")?;
        let initial_digest = hex(f.first(), no)?;
        let (no, f) = lines.fields("steps")?;
        let n: usize = num(f.first(), no, "step count")?;
        let mut steps = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let (no, l) = lines.next("step line")?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 2 {
                return Err(FormatError::new(no, "step line needs actions and digest").into());
            }
            let actions = t[0]
                .chars()
                .map(|c| ActionKind::from_char(c).ok_or_else(|| FormatError::new(no, format!("bad action '{c}'"))))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if actions.len() != initial.n_agents() {
                return Err(FormatError::new(no, "one action per agent expected").into());
            }
            steps.push(ReplayStep {
                actions,
                digest: hex(t.get(1), no)?,
            });
        }
        expect_end(&mut lines)?;
        Ok(Replay {
            initial,
            initial_digest,
            steps,
        })
    }
}

/// Steps a copy of `initial` through `actions` and records the digests.
pub fn record_replay(initial: &EnvState, actions: &[Vec<ActionKind>]) -> Result<Replay> {
    let mut env = initial.clone();
    let mut steps = Vec::with_capacity(actions.len());
    for a in actions {
        env.step(a)?;
        steps.push(ReplayStep {
            actions: a.clone(),
            digest: env.dynamic_digest(),
        });
    }
    Ok(Replay {
        initial: initial.clone(),
        initial_digest: initial.dynamic_digest(),
        steps,
    })
}

/// Plays an episode and keeps its replay.
pub fn record_episode(env: &mut EnvState, ctrl: &mut dyn Controller, masking: bool) -> Result<(EpisodeStats, Replay)> {
    let initial = env.clone();
    let mut log = Vec::new();
    let stats = run_episode_logged(env, ctrl, masking, Some(&mut log))?;
    Ok((stats, record_replay(&initial, &log)?))
}

/// Re-runs the replay, checking every digest. Returns the states after each
/// step, the initial state first.
pub fn replay(r: &Replay) -> Result<Vec<EnvState>> {
    let mut env = r.initial.clone();
    if env.dynamic_digest() != r.initial_digest {
        return Err(Error::Aborted("initial state digest mismatch".into()));
    }
    let mut out = Vec::with_capacity(r.steps.len() + 1);
    out.push(env.clone());
    for (i, st) in r.steps.iter().enumerate() {
        env.step(&st.actions)?;
        let d = env.dynamic_digest();
        if d != st.digest {
            return Err(Error::Aborted(format!(
                "digest mismatch after step {}: file {:016x}, replayed {d:016x}",
                i + 1,
                st.digest
            )));
        }
        out.push(env.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_env, GeneratorParams};
    use crate::trainer::RandomPolicy;

    fn sample_env() -> EnvState {
        let mut p = GeneratorParams::new(12, 12, 3, 2, 5);
        p.mixed_speeds = true;
        p.malfunction = MalfunctionParams::stress();
        generate_env(&p).unwrap()
    }

    #[test]
    fn env_text_round_trip() {
        let env = sample_env();
        let text = env_to_text(&env);
        let back = env_from_text(&text).unwrap();
        assert_eq!(back, env);
        assert_eq!(env_to_text(&back), text);
    }

    #[test]
    fn replay_reproduces_digests() {
        let mut env = sample_env();
        let (stats, r) = record_episode(&mut env, &mut RandomPolicy::new(3), false).unwrap();
        assert_eq!(r.steps.len(), stats.steps as usize);
        let parsed = Replay::from_text(&r.to_text()).unwrap();
        assert_eq!(parsed, r);
        let states = replay(&parsed).unwrap();
        assert_eq!(states.last().unwrap(), &env);
    }

    #[test]
    fn tampered_step_is_caught() {
        let mut env = sample_env();
        let (_, mut r) = record_episode(&mut env, &mut RandomPolicy::new(4), true).unwrap();
        r.steps[0].digest ^= 1;
        assert!(replay(&r).is_err());
    }

    #[test]
    fn truncated_files_report_a_line() {
        let mut env = sample_env();
        let (_, r) = record_episode(&mut env, &mut RandomPolicy::new(1), true).unwrap();
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        for keep in [0, 1, 3, 6, lines.len() - 1] {
            let cut = lines[..keep].join("\n");
            match Replay::from_text(&cut) {
                Err(Error::Format(e)) => assert!(e.line >= 1 && e.line <= keep + 1, "{e}"),
                other => panic!("expected a format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn garbage_fields_are_rejected() {
        let text = env_to_text(&sample_env());
        for (from, to) in [("seed", "sead"), (" E ", " Q "), ("agents 3", "agents 0")] {
            if text.contains(from) {
                assert!(env_from_text(&text.replacen(from, to, 1)).is_err(), "{from}");
            }
        }
        assert!(env_from_text(&format!("{text}junk\n")).is_err());
    }
}
