//! Random rail networks and the curriculum that grows them during training.
//!
//! Hubs sit on a jittered lattice, each with a short three-cell platform.
//! Hubs are joined by L-shaped corridors along a minimum spanning tree plus a
//! few extra links, and straight corridor runs get passing loops. Junction
//! cells become two-way switches (three ports) or plain diamond crossings
//! (four ports), so no switch ever offers more than two exits.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{default_max_steps, AgentSpec, EnvState, MalfunctionParams, Speed};
use crate::error::GenError;
use crate::grid::{Heading, Pos, RailGrid, TrackBuilder};
use crate::path::DistanceField;

const MAX_ATTEMPTS: usize = 20;
const PLACEMENT_TRIES: usize = 60;

fn default_density() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_hubs: usize,
    #[serde(default = "default_density")]
    pub corridor_density: f64,
    #[serde(default)]
    pub seed: u64,
    /// Draw speeds uniformly from {1, 1/2, 1/3, 1/4} instead of all 1.
    #[serde(default)]
    pub mixed_speeds: bool,
    #[serde(default)]
    pub malfunction: MalfunctionParams,
    /// Defaults to `4 * (width + height)`.
    #[serde(default)]
    pub max_steps: Option<u32>,
}

impl GeneratorParams {
    pub fn new(width: usize, height: usize, n_agents: usize, n_hubs: usize, seed: u64) -> Self {
        GeneratorParams {
            width,
            height,
            n_agents,
            n_hubs,
            corridor_density: default_density(),
            seed,
            mixed_speeds: false,
            malfunction: MalfunctionParams::default(),
            max_steps: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GeneratorParams { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidParams(m));
        if self.n_agents < 1 {
            return bad("n_agents must be at least 1".into());
        }
        if self.n_hubs < 2 {
            return bad("n_hubs must be at least 2".into());
        }
        if !(self.corridor_density > 0.0 && self.corridor_density <= 1.0) {
            return bad(format!("corridor_density {} not in (0,1]", self.corridor_density));
        }
        if self.width < 5 || self.height < 5 {
            return bad(format!("grid {}x{} smaller than 5x5", self.width, self.height));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        self.malfunction
            .validate()
            .map_err(|e| GenError::InvalidParams(e.to_string()))
    }

    pub fn episode_steps(&self) -> u32 {
        self.max_steps
            .unwrap_or_else(|| default_max_steps(self.width, self.height))
    }
}

struct Hub {
    center: Pos,
    platform: Vec<Pos>,
}

fn lattice_hubs(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<Vec<Hub>, String> {
    let aspect = p.width as f64 / p.height as f64;
    let cols = ((p.n_hubs as f64 * aspect).sqrt().round() as usize).clamp(1, p.n_hubs);
    let rows = p.n_hubs.div_ceil(cols);
    let cell_w = p.width / cols;
    let cell_h = p.height / rows;
    if cell_w < 3 || cell_h < 3 {
        return Err(format!(
            "{} hubs do not fit a {}x{} grid",
            p.n_hubs, p.width, p.height
        ));
    }
    let jitter = |span: usize, rng: &mut ChaCha8Rng| -> isize {
        let j = (span / 4) as isize;
        if j == 0 {
            0
        } else {
            rng.gen_range(-j..=j)
        }
    };
    let mut hubs: Vec<Hub> = Vec::with_capacity(p.n_hubs);
    for k in 0..p.n_hubs {
        let (cx, cy) = (k % cols, k / cols);
        let col = (cx * cell_w + cell_w / 2) as isize + jitter(cell_w, rng);
        let row = (cy * cell_h + cell_h / 2) as isize + jitter(cell_h, rng);
        let col = col.clamp(2, p.width as isize - 3) as usize;
        let row = row.clamp(2, p.height as isize - 3) as usize;
        let center = Pos::new(row, col);
        if hubs.iter().any(|h| h.center == center) {
            return Err("hub centres collide".into());
        }
        let horizontal = rng.gen_bool(0.5);
        let platform = if horizontal {
            vec![Pos::new(row, col - 1), center, Pos::new(row, col + 1)]
        } else {
            vec![Pos::new(row - 1, col), center, Pos::new(row + 1, col)]
        };
        hubs.push(Hub { center, platform });
    }
    Ok(hubs)
}

fn manhattan(a: Pos, b: Pos) -> usize {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

/// Prim's spanning tree over hub centres plus density-driven extra links.
fn hub_links(hubs: &[Hub], density: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = hubs.len();
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    let mut links = Vec::new();
    for _ in 1..n {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in (0..n).filter(|&i| in_tree[i]) {
            for j in (0..n).filter(|&j| !in_tree[j]) {
                let d = manhattan(hubs[i].center, hubs[j].center);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("some hub outside the tree");
        in_tree[j] = true;
        links.push((i.min(j), i.max(j)));
    }
    for i in 0..n {
        if !rng.gen_bool(density * 0.5) {
            continue;
        }
        let nearest = (0..n)
            .filter(|&j| j != i && !links.contains(&(i.min(j), i.max(j))))
            .min_by_key(|&j| (manhattan(hubs[i].center, hubs[j].center), j));
        if let Some(j) = nearest {
            links.push((i.min(j), i.max(j)));
        }
    }
    links
}

fn l_path(a: Pos, b: Pos, horizontal_first: bool) -> Vec<Pos> {
    let mut path = vec![a];
    let mut cur = a;
    let step_col = |cur: &mut Pos, path: &mut Vec<Pos>| {
        while cur.col != b.col {
            cur.col = if cur.col < b.col { cur.col + 1 } else { cur.col - 1 };
            path.push(*cur);
        }
    };
    let step_row = |cur: &mut Pos, path: &mut Vec<Pos>| {
        while cur.row != b.row {
            cur.row = if cur.row < b.row { cur.row + 1 } else { cur.row - 1 };
            path.push(*cur);
        }
    };
    if horizontal_first {
        step_col(&mut cur, &mut path);
        step_row(&mut cur, &mut path);
    } else {
        step_row(&mut cur, &mut path);
        step_col(&mut cur, &mut path);
    }
    path
}

/// Adds a parallel siding next to a straight stretch of `path`, if there is room.
fn add_passing_loop(builder: &mut TrackBuilder, path: &[Pos], rng: &mut ChaCha8Rng) {
    // maximal straight runs
    let mut runs: Vec<&[Pos]> = Vec::new();
    let mut start = 0;
    for i in 1..path.len() {
        let turn = i + 1 < path.len()
            && (path[i - 1].row == path[i].row) != (path[i].row == path[i + 1].row);
        if turn || i + 1 == path.len() {
            runs.push(&path[start..=i]);
            start = i;
        }
    }
    let candidates: Vec<&[Pos]> = runs.into_iter().filter(|r| r.len() >= 7).collect();
    let Some(run) = candidates.choose(rng) else {
        return;
    };
    let horizontal = run[0].row == run[1].row;
    let len = rng.gen_range(4..=(run.len() - 3).min(7));
    let s = rng.gen_range(1..=run.len() - 2 - len);
    let side: isize = if rng.gen_bool(0.5) { 1 } else { -1 };
    let shift = |p: Pos| -> Option<Pos> {
        let (r, c) = if horizontal {
            (p.row as isize + side, p.col as isize)
        } else {
            (p.row as isize, p.col as isize + side)
        };
        (r >= 0 && c >= 0 && (r as usize) < builder.height() && (c as usize) < builder.width())
            .then(|| Pos::new(r as usize, c as usize))
    };
    let mut siding = Vec::with_capacity(len + 1);
    for p in &run[s..=s + len] {
        match shift(*p) {
            Some(q) if !builder.is_track(q) => siding.push(q),
            _ => return,
        }
    }
    builder.connect(run[s], siding[0]);
    builder.connect_path(&siding);
    builder.connect(siding[len], run[s + len]);
}

fn build_network(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<(RailGrid, Vec<Hub>), String> {
    let hubs = lattice_hubs(p, rng)?;
    let mut builder = TrackBuilder::new(p.width, p.height);
    for h in &hubs {
        builder.connect_path(&h.platform);
    }
    for (i, j) in hub_links(&hubs, p.corridor_density, rng) {
        let path = l_path(hubs[i].center, hubs[j].center, rng.gen_bool(0.5));
        builder.connect_path(&path);
        if rng.gen_bool(p.corridor_density) {
            add_passing_loop(&mut builder, &path, rng);
        }
    }
    let grid = builder.build().map_err(|e| e.to_string())?;
    Ok((grid, hubs))
}

fn place_agents(
    p: &GeneratorParams,
    grid: &RailGrid,
    hubs: &[Hub],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AgentSpec>, String> {
    let mut fields: HashMap<Pos, DistanceField> = HashMap::new();
    let mut roster: Vec<AgentSpec> = Vec::with_capacity(p.n_agents);
    for i in 0..p.n_agents {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let hs = rng.gen_range(0..hubs.len());
            let mut ht = rng.gen_range(0..hubs.len() - 1);
            if ht >= hs {
                ht += 1;
            }
            let start = *hubs[hs].platform.choose(rng).expect("platform cells");
            let target = *hubs[ht].platform.choose(rng).expect("platform cells");
            if start == target || roster.iter().any(|a| a.start == start) {
                continue;
            }
            let field = fields
                .entry(target)
                .or_insert_with(|| DistanceField::new(grid, target));
            let mut headings: Vec<Heading> = Heading::ALL
                .into_iter()
                .filter(|&h| !grid.moves(start, h).is_empty())
                .collect();
            headings.shuffle(rng);
            if let Some(&heading) = headings.iter().find(|&&h| field.get(start, h).is_some()) {
                let speed = if p.mixed_speeds {
                    Speed::from_denominator(rng.gen_range(1..=4)).expect("1..=4")
                } else {
                    Speed::FULL
                };
                placed = Some(AgentSpec {
                    start,
                    heading,
                    target,
                    speed,
                });
                break;
            }
        }
        roster.push(placed.ok_or_else(|| format!("could not place agent {i}"))?);
    }
    Ok(roster)
}

/// Generates a validated environment; pure in `params` (including its seed).
pub fn generate_env(params: &GeneratorParams) -> Result<EnvState, GenError> {
    params.validate()?;
    if params.n_agents > params.n_hubs * 3 {
        return Err(GenError::Infeasible {
            attempts: 0,
            reason: format!(
                "{} agents exceed the {} platform cells of {} hubs",
                params.n_agents,
                params.n_hubs * 3,
                params.n_hubs
            ),
        });
    }
    let mut last_reason = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(attempt as u64);
        let (grid, hubs) = match build_network(params, &mut rng) {
            Ok(v) => v,
            Err(e) => {
                last_reason = e;
                continue;
            }
        };
        match place_agents(params, &grid, &hubs, &mut rng) {
            Ok(roster) => {
                return EnvState::reset(
                    Arc::new(grid),
                    &roster,
                    params.episode_steps(),
                    params.seed,
                    params.malfunction,
                )
                .map_err(|e| GenError::Infeasible {
                    attempts: attempt + 1,
                    reason: e.to_string(),
                });
            }
            Err(e) => last_reason = e,
        }
    }
    Err(GenError::Infeasible {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub params: GeneratorParams,
    pub promote_threshold: f64,
    pub window: usize,
}

impl CurriculumStage {
    pub fn new(width: usize, n_agents: usize, n_hubs: usize) -> CurriculumStage {
        CurriculumStage {
            params: GeneratorParams::new(width, width, n_agents, n_hubs, 0),
            promote_threshold: 0.8,
            window: 200,
        }
    }
}

/// Square grids growing from 10x10 with two trains to 50x50 with fourteen.
pub fn default_curriculum() -> Vec<CurriculumStage> {
    vec![
        CurriculumStage::new(10, 2, 2),
        CurriculumStage::new(15, 3, 3),
        CurriculumStage::new(25, 4, 4),
        CurriculumStage::new(35, 8, 6),
        CurriculumStage::new(50, 14, 8),
    ]
}

pub fn validate_curriculum(stages: &[CurriculumStage]) -> Result<(), GenError> {
    if stages.is_empty() {
        return Err(GenError::InvalidParams("curriculum has no stages".into()));
    }
    for (i, s) in stages.iter().enumerate() {
        s.params.validate()?;
        if !(0.0..=1.0).contains(&s.promote_threshold) {
            return Err(GenError::InvalidParams(format!(
                "stage {i}: promote_threshold {} not in [0,1]",
                s.promote_threshold
            )));
        }
        if s.window == 0 {
            return Err(GenError::InvalidParams(format!("stage {i}: window must be positive")));
        }
    }
    for (i, w) in stages.windows(2).enumerate() {
        let (a, b) = (&w[0].params, &w[1].params);
        if b.width * b.height < a.width * a.height || b.n_agents < a.n_agents {
            return Err(GenError::InvalidParams(format!(
                "stage {} is smaller than stage {i}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Next stage index given the arrival rates recorded at the current stage.
/// Promotes by one when the trailing-window mean reaches the threshold.
pub fn curriculum_advance(stages: &[CurriculumStage], current: usize, history: &[f64]) -> usize {
    let Some(stage) = stages.get(current) else {
        return current;
    };
    if current + 1 >= stages.len() || history.len() < stage.window {
        return current;
    }
    let tail = &history[history.len() - stage.window..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    if mean >= stage.promote_threshold {
        current + 1
    } else {
        current
    }
}

/// Running curriculum position with per-stage history.
#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    stages: Vec<CurriculumStage>,
    current: usize,
    history: Vec<f64>,
}

impl Curriculum {
    pub fn new(stages: Vec<CurriculumStage>) -> Result<Curriculum, GenError> {
        validate_curriculum(&stages)?;
        Ok(Curriculum {
            stages,
            current: 0,
            history: Vec::new(),
        })
    }

    pub fn stage_index(&self) -> usize {
        self.current
    }

    pub fn stage(&self) -> &CurriculumStage {
        &self.stages[self.current]
    }

    pub fn stages(&self) -> &[CurriculumStage] {
        &self.stages
    }

    /// Records one episode's arrival rate; returns true on promotion.
    pub fn record(&mut self, arrival_rate: f64) -> bool {
        self.history.push(arrival_rate);
        let next = curriculum_advance(&self.stages, self.current, &self.history);
        if next != self.current {
            self.current = next;
            self.history.clear();
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let p = GeneratorParams::new(25, 25, 4, 4, 7);
        let a = generate_env(&p).unwrap();
        let b = generate_env(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn single_hub_rejected() {
        let p = GeneratorParams::new(25, 25, 4, 1, 7);
        assert!(matches!(generate_env(&p), Err(GenError::InvalidParams(_))));
        let p = GeneratorParams::new(25, 25, 0, 3, 7);
        assert!(matches!(generate_env(&p), Err(GenError::InvalidParams(_))));
    }

    #[test]
    fn too_many_agents_is_infeasible() {
        let p = GeneratorParams::new(10, 10, 9, 2, 1);
        assert!(matches!(generate_env(&p), Err(GenError::Infeasible { .. })));
        let p = GeneratorParams::new(6, 6, 2, 12, 1);
        assert!(generate_env(&p).is_err());
    }

    #[test]
    fn switches_are_binary() {
        for seed in 0..20 {
            let env = generate_env(&GeneratorParams::new(25, 25, 4, 4, seed)).unwrap();
            env.grid.validate().unwrap();
            for cell in env.grid.rail_cells() {
                for h in Heading::ALL {
                    assert!(env.grid.moves(cell, h).len() <= 2);
                }
            }
        }
    }

    fn stages() -> Vec<CurriculumStage> {
        let mut s = default_curriculum();
        s.truncate(3);
        for st in &mut s {
            st.window = 4;
        }
        s
    }

    #[test]
    fn advance_rules() {
        let s = stages();
        assert_eq!(curriculum_advance(&s, 0, &[0.83; 4]), 1);
        assert_eq!(curriculum_advance(&s, 0, &[0.5; 4]), 0);
        assert_eq!(curriculum_advance(&s, 2, &[1.0; 4]), 2);
        // too little history
        assert_eq!(curriculum_advance(&s, 0, &[1.0; 3]), 0);
        // only the trailing window counts
        assert_eq!(curriculum_advance(&s, 0, &[0.0, 0.0, 0.9, 0.9, 0.9, 0.9]), 1);
    }

    #[test]
    fn default_curriculum_is_ordered() {
        validate_curriculum(&default_curriculum()).unwrap();
        let mut bad = default_curriculum();
        bad.swap(0, 1);
        assert!(validate_curriculum(&bad).is_err());
    }

    #[test]
    fn tracker_resets_history_on_promotion() {
        let mut c = Curriculum::new(stages()).unwrap();
        for _ in 0..3 {
            assert!(!c.record(1.0));
        }
        assert!(c.record(1.0));
        assert_eq!(c.stage_index(), 1);
        for _ in 0..3 {
            c.record(0.9);
        }
        assert_eq!(c.stage_index(), 1);
    }
}
