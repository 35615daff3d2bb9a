//! Forward breadth-first search from one (cell, heading) state, written
//! against the raw transition flags only.

#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use railmarl::grid::{Heading, Pos, RailGrid};

const HEADINGS: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

fn step(p: Pos, h: Heading, width: usize, height: usize) -> Option<Pos> {
    let (r, c) = (p.row as i64, p.col as i64);
    let (r, c) = match h {
        Heading::North => (r - 1, c),
        Heading::East => (r, c + 1),
        Heading::South => (r + 1, c),
        Heading::West => (r, c - 1),
    };
    (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then(|| Pos::new(r as usize, c as usize))
}

pub fn bfs_distance(grid: &RailGrid, from: (Pos, Heading), target: Pos) -> Option<u32> {
    if from.0 == target {
        return Some(0);
    }
    let mut seen = HashSet::from([from]);
    let mut queue = VecDeque::from([(from, 0u32)]);
    while let Some(((cell, heading), d)) = queue.pop_front() {
        let t = grid.get(cell);
        for out in HEADINGS {
            if !t.allows(heading, out) {
                continue;
            }
            let Some(next) = step(cell, out, grid.width(), grid.height()) else {
                continue;
            };
            if next == target {
                return Some(d + 1);
            }
            if seen.insert((next, out)) {
                queue.push_back(((next, out), d + 1));
            }
        }
    }
    None
}
