//! Shortest-path distances over the directed (cell, heading) graph.

use std::collections::VecDeque;

use crate::grid::{Heading, Pos, RailGrid};

/// Marker value stored for states that cannot reach the target.
pub const UNREACHABLE: u32 = u32::MAX;

/// Distance from every (cell, heading) state to one target cell, computed
/// with a single backward breadth-first search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    target: Pos,
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn new(grid: &RailGrid, target: Pos) -> DistanceField {
        let width = grid.width();
        let n = grid.n_cells();
        let mut dist = vec![UNREACHABLE; n * 4];
        let mut queue = VecDeque::new();
        if grid.is_rail(target) {
            let t = grid.index(target);
            for h in Heading::ALL {
                dist[t * 4 + h.index()] = 0;
                queue.push_back((target, h));
            }
        }
        while let Some((cell, heading)) = queue.pop_front() {
            let d = dist[grid.index(cell) * 4 + heading.index()];
            // predecessors: a train on `prev` whose exit `heading` led here
            let Some(prev) = grid.neighbor(cell, heading.reverse()) else {
                continue;
            };
            let pt = grid.get(prev);
            if !pt.is_rail() {
                continue;
            }
            let pi = grid.index(prev);
            for ph in Heading::ALL {
                if pt.allows(ph, heading) && dist[pi * 4 + ph.index()] == UNREACHABLE {
                    dist[pi * 4 + ph.index()] = d + 1;
                    queue.push_back((prev, ph));
                }
            }
        }
        DistanceField { target, width, dist }
    }

    pub fn target(&self) -> Pos {
        self.target
    }

    /// Moves needed from `cell` with `heading`, or `None` if unreachable.
    pub fn get(&self, cell: Pos, heading: Heading) -> Option<u32> {
        let i = (cell.row * self.width + cell.col) * 4 + heading.index();
        match self.dist.get(i) {
            Some(&d) if d != UNREACHABLE => Some(d),
            _ => None,
        }
    }
}

/// Minimum number of cell-to-cell moves from `from` to `target`; `None` if
/// the target cannot be reached.
pub fn shortest_path_distance(grid: &RailGrid, from: (Pos, Heading), target: Pos) -> Option<u32> {
    let (cell, heading) = from;
    if !grid.in_bounds(cell) || !grid.in_bounds(target) {
        return None;
    }
    if cell == target {
        return Some(0);
    }
    DistanceField::new(grid, target).get(cell, heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TrackBuilder;

    #[test]
    fn corridor_distances() {
        let mut b = TrackBuilder::new(8, 1);
        let path: Vec<Pos> = (0..8).map(|c| Pos::new(0, c)).collect();
        b.connect_path(&path);
        let g = b.build().unwrap();
        assert_eq!(shortest_path_distance(&g, (Pos::new(0, 2), Heading::East), Pos::new(0, 2)), Some(0));
        assert_eq!(shortest_path_distance(&g, (Pos::new(0, 2), Heading::East), Pos::new(0, 7)), Some(5));
        // facing away: run to the west dead end (2 moves), reverse, then 7
        assert_eq!(shortest_path_distance(&g, (Pos::new(0, 2), Heading::West), Pos::new(0, 7)), Some(9));
    }

    #[test]
    fn disconnected_target_is_unreachable() {
        let mut b = TrackBuilder::new(5, 1);
        b.connect(Pos::new(0, 0), Pos::new(0, 1));
        b.connect(Pos::new(0, 3), Pos::new(0, 4));
        let g = b.build().unwrap();
        assert_eq!(shortest_path_distance(&g, (Pos::new(0, 0), Heading::East), Pos::new(0, 4)), None);
    }
}
