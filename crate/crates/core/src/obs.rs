//! Section-tree observations.
//!
//! A section is the run of track an agent would follow without choosing, up
//! to the next switch that offers it a choice. The sections ahead of an agent
//! form a binary tree (two exits per switch); three levels below the root give
//! 15 node slots. Each slot carries 7 attributes normalised to [0, 1], and the
//! flattened tree is followed by 7 features of the agent itself.

use std::collections::HashMap;

use crate::env::{AgentState, AgentStatus, EnvState};
use crate::grid::{Heading, Pos};
use crate::path::DistanceField;

pub const TREE_DEPTH: usize = 3;
pub const N_NODES: usize = 15;
pub const NODE_FEATURES: usize = 7;
pub const AGENT_FEATURES: usize = 7;
pub const TREE_DIM: usize = N_NODES * NODE_FEATURES;
pub const OBS_DIM: usize = TREE_DIM + AGENT_FEATURES;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionNode {
    pub present: bool,
    pub length_cells: u32,
    /// Other active trains on the section.
    pub agent_count: u32,
    /// Those of them that can move towards the observer.
    pub opposing_count: u32,
    /// Moves from the section end to the observer's target; `None` if unreachable.
    pub dist_to_target: Option<u32>,
    pub contains_target: bool,
    pub min_malfunction: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionEnd {
    /// A switch usable in this direction; its exits start the child sections.
    Switch(Pos, Heading),
    /// Dead end, the observer's target, or a loop back onto the start.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionTree {
    /// Breadth-first: children of slot `i` are `2i + 1` (left) and `2i + 2`.
    pub nodes: [SectionNode; N_NODES],
    /// Switches whose exits were cut down to two.
    pub truncations: u32,
}

impl SectionTree {
    pub fn empty() -> SectionTree {
        SectionTree {
            nodes: [SectionNode::default(); N_NODES],
            truncations: 0,
        }
    }

    pub fn present_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.present).count()
    }

    /// Absent nodes are all-zero and never have present children.
    pub fn validate(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.present && *n != SectionNode::default() {
                return Err(format!("absent node {i} carries attributes"));
            }
            if n.opposing_count > n.agent_count {
                return Err(format!("node {i}: opposing_count exceeds agent_count"));
            }
            if i > 0 && n.present && !self.nodes[(i - 1) / 2].present {
                return Err(format!("node {i} present under an absent parent"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector(pub Vec<f64>);

impl ObservationVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Distance fields to every agent target, built once per episode.
#[derive(Debug, Clone)]
pub struct ObsContext {
    fields: HashMap<Pos, DistanceField>,
}

impl ObsContext {
    pub fn new(env: &EnvState) -> ObsContext {
        let mut fields = HashMap::new();
        for a in &env.agents {
            fields
                .entry(a.target)
                .or_insert_with(|| DistanceField::new(&env.grid, a.target));
        }
        ObsContext { fields }
    }

    pub fn field(&self, target: Pos) -> &DistanceField {
        self.fields
            .get(&target)
            .expect("context built from this environment")
    }
}

/// Walks forced moves from `start` until a usable switch, a dead end, the
/// observer's target or a loop, collecting the section's attributes.
pub fn trace_section(
    env: &EnvState,
    ctx: &ObsContext,
    observer: usize,
    start: (Pos, Heading),
) -> (SectionNode, SectionEnd) {
    let grid = &env.grid;
    let me = &env.agents[observer];
    let field = ctx.field(me.target);
    let (mut pos, mut heading) = start;
    let mut node = SectionNode {
        present: true,
        ..SectionNode::default()
    };
    let mut min_malf: Option<u32> = None;
    let limit = grid.n_cells() * 4;
    let end = loop {
        node.length_cells += 1;
        for other in &env.agents {
            if other.id == observer || other.status != AgentStatus::Active || other.position != pos {
                continue;
            }
            node.agent_count += 1;
            if grid.moves(pos, other.heading).contains(heading.reverse()) {
                node.opposing_count += 1;
            }
            min_malf = Some(min_malf.map_or(other.malfunction_remaining, |m| m.min(other.malfunction_remaining)));
        }
        if pos == me.target {
            node.contains_target = true;
            break SectionEnd::Terminal;
        }
        let moves = grid.moves(pos, heading);
        if moves.len() >= 2 {
            break SectionEnd::Switch(pos, heading);
        }
        let Some(m) = moves.single() else {
            break SectionEnd::Terminal;
        };
        if m == heading.reverse() || node.length_cells as usize >= limit {
            break SectionEnd::Terminal;
        }
        let next = grid.neighbor(pos, m).expect("validated grid");
        if (next, m) == start {
            break SectionEnd::Terminal;
        }
        pos = next;
        heading = m;
    };
    node.dist_to_target = if node.contains_target {
        Some(0)
    } else {
        field.get(pos, heading)
    };
    node.min_malfunction = min_malf.unwrap_or(0);
    (node, end)
}

/// Rank of an exit relative to the direction of travel, leftmost first.
fn turn_rank(heading: Heading, exit: Heading) -> u8 {
    if exit == heading.left() {
        0
    } else if exit == heading {
        1
    } else if exit == heading.right() {
        2
    } else {
        3
    }
}

fn fill(env: &EnvState, ctx: &ObsContext, observer: usize, slot: usize, start: (Pos, Heading), tree: &mut SectionTree) {
    let (node, end) = trace_section(env, ctx, observer, start);
    tree.nodes[slot] = node;
    let SectionEnd::Switch(pos, heading) = end else {
        return;
    };
    if 2 * slot + 2 >= N_NODES {
        return;
    }
    let grid = &env.grid;
    let mut exits: Vec<(Heading, Pos)> = grid
        .moves(pos, heading)
        .iter()
        .map(|h| (h, grid.neighbor(pos, h).expect("validated grid")))
        .collect();
    if exits.len() > 2 {
        let field = ctx.field(env.agents[observer].target);
        exits.sort_by_key(|&(h, p)| (field.get(p, h).unwrap_or(u32::MAX), turn_rank(heading, h)));
        exits.truncate(2);
        tree.truncations += 1;
    }
    exits.sort_by_key(|&(h, _)| turn_rank(heading, h));
    for (k, (h, p)) in exits.into_iter().enumerate() {
        fill(env, ctx, observer, 2 * slot + 1 + k, (p, h), tree);
    }
}

pub fn build_tree(env: &EnvState, ctx: &ObsContext, agent_id: usize) -> SectionTree {
    let mut tree = SectionTree::empty();
    let a = &env.agents[agent_id];
    if a.status != AgentStatus::Done {
        fill(env, ctx, agent_id, 0, (a.position, a.heading), &mut tree);
    }
    tree
}

fn unit(x: f64, scale: f64) -> f64 {
    if scale <= 0.0 {
        0.0
    } else {
        (x / scale).clamp(0.0, 1.0)
    }
}

pub fn flatten_normalize(tree: &SectionTree, agent: &AgentState, env: &EnvState) -> ObservationVector {
    let span = (env.grid.width() + env.grid.height()) as f64;
    let n_agents = env.n_agents() as f64;
    let malf_scale = if env.malfunction.rate > 0.0 {
        env.malfunction.max_duration as f64
    } else {
        0.0
    };
    let mut v = Vec::with_capacity(OBS_DIM);
    for n in &tree.nodes {
        if !n.present {
            v.extend_from_slice(&[0.0; NODE_FEATURES]);
            continue;
        }
        v.push(1.0);
        v.push(unit(n.length_cells as f64, span));
        v.push(unit(n.agent_count as f64, n_agents));
        v.push(unit(n.opposing_count as f64, n_agents));
        v.push(n.dist_to_target.map_or(1.0, |d| unit(d as f64, span)));
        v.push(if n.contains_target { 1.0 } else { 0.0 });
        v.push(unit(n.min_malfunction as f64, malf_scale));
    }
    v.push(agent.speed.as_f64());
    for h in Heading::ALL {
        v.push(if agent.heading == h { 1.0 } else { 0.0 });
    }
    v.push(unit(agent.malfunction_remaining as f64, malf_scale));
    v.push(agent.cell_progress());
    debug_assert_eq!(v.len(), OBS_DIM);
    ObservationVector(v)
}

pub fn observe(env: &EnvState, ctx: &ObsContext, agent_id: usize) -> ObservationVector {
    let tree = build_tree(env, ctx, agent_id);
    flatten_normalize(&tree, &env.agents[agent_id], env)
}

/// Departure, or standing at the entry of a cell that is a usable switch
/// for the agent's heading. Everywhere else the default is Forward.
pub fn is_decision_point(env: &EnvState, agent_id: usize) -> bool {
    let a = &env.agents[agent_id];
    match a.status {
        AgentStatus::Ready => true,
        AgentStatus::Done => false,
        AgentStatus::Active => {
            a.progress == 0 && a.malfunction_remaining == 0 && env.grid.moves(a.position, a.heading).len() >= 2
        }
    }
}
