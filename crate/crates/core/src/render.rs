//! ASCII frames of an environment: track glyphs, train ids and targets.

use crate::env::{AgentStatus, EnvState};
use crate::grid::{Heading, Pos, RailGrid};

fn track_glyph(grid: &RailGrid, p: Pos) -> char {
    let ports = grid.get(p).ports();
    let has = |h| ports.contains(h);
    match ports.len() {
        0 => ' ',
        1 => {
            if has(Heading::East) || has(Heading::West) {
                '-'
            } else {
                '|'
            }
        }
        2 => match (has(Heading::North), has(Heading::East), has(Heading::South), has(Heading::West)) {
            (false, true, false, true) => '-',
            (true, false, true, false) => '|',
            (true, true, false, false) | (false, false, true, true) => '\\',
            _ => '/',
        },
        3 => '*',
        _ => '+',
    }
}

/// Single-character label for agent `id`: 0-9, then a-z, then '#'.
pub fn agent_glyph(id: usize) -> char {
    match id {
        0..=9 => (b'0' + id as u8) as char,
        10..=35 => (b'a' + (id - 10) as u8) as char,
        _ => '#',
    }
}

/// Track only, one text line per grid row.
pub fn render_grid(grid: &RailGrid) -> String {
    let mut s = String::with_capacity((grid.width() + 1) * grid.height());
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            s.push(track_glyph(grid, Pos::new(row, col)));
        }
        s.push('\n');
    }
    s
}

/// Track with waiting and active trains drawn as their id and unreached targets as `@`,
/// followed by a one-line legend per agent.
pub fn render_frame(env: &EnvState) -> String {
    let grid = &env.grid;
    let mut cells: Vec<Vec<char>> = (0..grid.height())
        .map(|row| (0..grid.width()).map(|col| track_glyph(grid, Pos::new(row, col))).collect())
        .collect();
    for a in &env.agents {
        if a.status != AgentStatus::Done {
            cells[a.target.row][a.target.col] = '@';
        }
    }
    // waiting trains first so an active one on the same cell wins
    for a in env.agents.iter().filter(|a| a.status == AgentStatus::Ready) {
        cells[a.start.row][a.start.col] = agent_glyph(a.id);
    }
    for a in env.agents.iter().filter(|a| a.status == AgentStatus::Active) {
        cells[a.position.row][a.position.col] = agent_glyph(a.id);
    }
    let mut s = format!("step {}/{}\n", env.step_count, env.max_steps);
    for row in cells {
        s.extend(row);
        s.push('\n');
    }
    for a in &env.agents {
        s.push_str(&format!(
            "{} {:?} at {} heading {} target {} speed 1/{}{}\n",
            agent_glyph(a.id),
            a.status,
            a.position,
            a.heading.as_char(),
            a.target,
            a.speed.denominator(),
            if a.malfunction_remaining > 0 {
                format!(" malfunction {}", a.malfunction_remaining)
            } else {
                String::new()
            }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::comm_env;
    use crate::env::ActionKind;

    #[test]
    fn comm_layout_frame() {
        let mut env = comm_env(0);
        let f = render_frame(&env);
        let rows: Vec<&str> = f.lines().collect();
        assert_eq!(rows[0], "step 0/36");
        assert_eq!(rows[1], "0*---*1");
        assert_eq!(rows[2], " \\---/ ");
        assert!(rows[3].contains("target (0,6)") && rows[4].contains("target (0,0)"));
        env.step(&[ActionKind::Forward, ActionKind::Forward]).unwrap();
        env.step(&[ActionKind::Forward, ActionKind::Forward]).unwrap();
        let f = render_frame(&env);
        assert_eq!(f.lines().nth(1), Some("@0---1@"));
    }

    #[test]
    fn grid_only_has_no_agents() {
        assert_eq!(render_grid(&comm_env(0).grid), "-*---*-\n \\---/ \n");
    }
}
