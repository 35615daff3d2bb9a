//! Rail topology: headings, per-cell transition maps and the grid that holds them.
//!
//! A train occupying a cell carries the heading it had when it entered that
//! cell. The cell's [`TransitionMap`] lists, for each incoming heading, the
//! headings the train may leave by. Leaving by heading `h` moves the train to
//! the neighbour in direction `h` and its new heading is `h`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, GridError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    pub fn reverse(self) -> Heading {
        Self::from_index(self.index() + 2)
    }

    /// Row/column offset of one step in this direction.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    /// Left/right mirror image (east and west swap).
    pub fn mirrored(self) -> Heading {
        match self {
            Heading::East => Heading::West,
            Heading::West => Heading::East,
            h => h,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Heading::North => 'N',
            Heading::East => 'E',
            Heading::South => 'S',
            Heading::West => 'W',
        }
    }

    pub fn from_char(c: char) -> Option<Heading> {
        match c {
            'N' => Some(Heading::North),
            'E' => Some(Heading::East),
            'S' => Some(Heading::South),
            'W' => Some(Heading::West),
            _ => None,
        }
    }
}

/// Small set of headings stored as a 4-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct HeadingSet(u8);

impl HeadingSet {
    pub const EMPTY: HeadingSet = HeadingSet(0);

    pub fn from_bits(bits: u8) -> HeadingSet {
        HeadingSet(bits & 0xF)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, h: Heading) {
        self.0 |= 1 << h.index();
    }

    pub fn contains(self, h: Heading) -> bool {
        self.0 & (1 << h.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Heading> {
        Heading::ALL.into_iter().filter(move |h| self.contains(*h))
    }

    /// The only member, if the set is a singleton.
    pub fn single(self) -> Option<Heading> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

impl FromIterator<Heading> for HeadingSet {
    fn from_iter<I: IntoIterator<Item = Heading>>(iter: I) -> Self {
        let mut s = HeadingSet::EMPTY;
        for h in iter {
            s.insert(h);
        }
        s
    }
}

/// Sixteen (incoming, outgoing) flags; bit `4 * incoming + outgoing`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TransitionMap(pub u16);

impl TransitionMap {
    pub const EMPTY: TransitionMap = TransitionMap(0);

    fn bit(incoming: Heading, outgoing: Heading) -> u16 {
        1 << (incoming.index() * 4 + outgoing.index())
    }

    pub fn allows(self, incoming: Heading, outgoing: Heading) -> bool {
        self.0 & Self::bit(incoming, outgoing) != 0
    }

    pub fn set(&mut self, incoming: Heading, outgoing: Heading) {
        self.0 |= Self::bit(incoming, outgoing);
    }

    pub fn clear(&mut self, incoming: Heading, outgoing: Heading) {
        self.0 &= !Self::bit(incoming, outgoing);
    }

    pub fn with(mut self, incoming: Heading, outgoing: Heading) -> Self {
        self.set(incoming, outgoing);
        self
    }

    pub fn is_rail(self) -> bool {
        self.0 != 0
    }

    pub fn outgoing(self, incoming: Heading) -> HeadingSet {
        HeadingSet::from_bits(((self.0 >> (incoming.index() * 4)) & 0xF) as u8)
    }

    /// Directions in which this cell is physically connected to a neighbour.
    pub fn ports(self) -> HeadingSet {
        let mut s = HeadingSet::EMPTY;
        for incoming in Heading::ALL {
            for out in self.outgoing(incoming).iter() {
                s.insert(out);
            }
        }
        s
    }

    /// Builds the transitions for a cell from its undirected connections.
    ///
    /// * one port: dead end; a train arriving reverses, a train standing on it
    ///   facing the port may depart.
    /// * two ports: plain track or curve.
    /// * three ports: switch; every entry may leave by either other port.
    /// * four ports: diamond crossing, straight through only.
    pub fn from_ports(ports: HeadingSet) -> TransitionMap {
        let mut t = TransitionMap::EMPTY;
        match ports.len() {
            0 => {}
            1 => {
                let p = ports.single().expect("singleton");
                t.set(p.reverse(), p);
                t.set(p, p);
            }
            4 => {
                for h in Heading::ALL {
                    t.set(h, h);
                }
            }
            _ => {
                for entry in ports.iter() {
                    let incoming = entry.reverse();
                    for exit in ports.iter().filter(|&x| x != entry) {
                        t.set(incoming, exit);
                    }
                }
            }
        }
        t
    }

    /// Left/right mirror image of this map.
    pub fn mirrored(self) -> TransitionMap {
        let mut t = TransitionMap::EMPTY;
        for i in Heading::ALL {
            for o in self.outgoing(i).iter() {
                t.set(i.mirrored(), o.mirrored());
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Pos {
        Pos { row, col }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RailGrid {
    width: usize,
    height: usize,
    cells: Vec<TransitionMap>,
}

const GRID_MAGIC: &str = "railgrid v1";

impl RailGrid {
    /// An empty grid; fill it with [`RailGrid::set`] and call [`RailGrid::validate`].
    pub fn empty(width: usize, height: usize) -> Result<RailGrid, GridError> {
        if width < 2 || height < 1 {
            return Err(GridError::BadSize { width, height });
        }
        Ok(RailGrid {
            width,
            height,
            cells: vec![TransitionMap::EMPTY; width * height],
        })
    }

    /// Builds and validates a grid from raw masks given row-major.
    pub fn from_masks(width: usize, height: usize, masks: &[u16]) -> Result<RailGrid, GridError> {
        let mut g = RailGrid::empty(width, height)?;
        if masks.len() != width * height {
            return Err(GridError::BadSize { width, height });
        }
        g.cells = masks.iter().map(|&m| TransitionMap(m)).collect();
        g.validate()?;
        Ok(g)
    }

    /// Builds a grid from undirected port masks (bit `h` = connected towards `h`).
    pub fn from_ports(width: usize, height: usize, ports: &[u8]) -> Result<RailGrid, GridError> {
        let mut g = RailGrid::empty(width, height)?;
        if ports.len() != width * height {
            return Err(GridError::BadSize { width, height });
        }
        for (cell, &p) in g.cells.iter_mut().zip(ports) {
            *cell = TransitionMap::from_ports(HeadingSet::from_bits(p));
        }
        g.validate()?;
        Ok(g)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn get(&self, p: Pos) -> TransitionMap {
        if self.in_bounds(p) {
            self.cells[self.index(p)]
        } else {
            TransitionMap::EMPTY
        }
    }

    pub fn set(&mut self, p: Pos, t: TransitionMap) {
        let i = self.index(p);
        self.cells[i] = t;
    }

    pub fn masks(&self) -> impl Iterator<Item = u16> + '_ {
        self.cells.iter().map(|t| t.0)
    }

    pub fn is_rail(&self, p: Pos) -> bool {
        self.get(p).is_rail()
    }

    pub fn neighbor(&self, p: Pos, h: Heading) -> Option<Pos> {
        let (dr, dc) = h.delta();
        let row = p.row.checked_add_signed(dr)?;
        let col = p.col.checked_add_signed(dc)?;
        let q = Pos::new(row, col);
        self.in_bounds(q).then_some(q)
    }

    pub fn rail_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].is_rail())
            .map(|i| self.pos_of(i))
    }

    fn check_rail(&self, p: Pos) -> Result<TransitionMap, GridError> {
        if !self.in_bounds(p) {
            return Err(GridError::OutOfBounds(p));
        }
        let t = self.get(p);
        if !t.is_rail() {
            return Err(GridError::NotRail(p));
        }
        Ok(t)
    }

    /// Headings a train standing on `cell` with `heading` may leave by.
    pub fn allowed_moves(&self, cell: Pos, heading: Heading) -> Result<HeadingSet, GridError> {
        Ok(self.check_rail(cell)?.outgoing(heading))
    }

    /// Unchecked variant for hot loops over cells already known to be rail.
    pub fn moves(&self, cell: Pos, heading: Heading) -> HeadingSet {
        self.get(cell).outgoing(heading)
    }

    /// A usable switch offers at least two exits for this direction of travel.
    pub fn is_switch_for(&self, cell: Pos, heading: Heading) -> Result<bool, GridError> {
        Ok(self.allowed_moves(cell, heading)?.len() >= 2)
    }

    /// Checks neighbour consistency and the dead-end reversal rule on every cell.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.width < 2 || self.height < 1 || self.cells.len() != self.width * self.height {
            return Err(GridError::BadSize {
                width: self.width,
                height: self.height,
            });
        }
        for i in 0..self.cells.len() {
            let p = self.pos_of(i);
            let t = self.cells[i];
            for incoming in Heading::ALL {
                let outs = t.outgoing(incoming);
                for out in outs.iter() {
                    let q = self.neighbor(p, out).ok_or(GridError::Inconsistent {
                        cell: p,
                        incoming,
                        outgoing: out,
                        reason: "exit leaves the grid",
                    })?;
                    if self.get(q).outgoing(out).is_empty() {
                        return Err(GridError::Inconsistent {
                            cell: p,
                            incoming,
                            outgoing: out,
                            reason: "neighbour cannot be entered with this heading",
                        });
                    }
                    if out == incoming.reverse() && outs.len() != 1 {
                        return Err(GridError::Inconsistent {
                            cell: p,
                            incoming,
                            outgoing: out,
                            reason: "reversal outside a dead end",
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Left/right mirror image of the whole grid.
    pub fn mirrored(&self) -> RailGrid {
        let mut g = self.clone();
        for row in 0..self.height {
            for col in 0..self.width {
                let src = self.get(Pos::new(row, col));
                g.set(Pos::new(row, self.width - 1 - col), src.mirrored());
            }
        }
        g
    }

    /// Stable 64-bit digest of the grid contents.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + 2 * self.cells.len());
        bytes.extend_from_slice(&(self.width as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u64).to_le_bytes());
        for t in &self.cells {
            bytes.extend_from_slice(&t.0.to_le_bytes());
        }
        crate::digest64(&bytes)
    }

    /// Text form: magic line, `width height`, then one line per row of
    /// four-digit hex masks separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(16 + self.cells.len() * 5);
        s.push_str(GRID_MAGIC);
        s.push('\n');
        s.push_str(&format!("{} {}\n", self.width, self.height));
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width)
                .map(|col| format!("{:04x}", self.get(Pos::new(row, col)).0))
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses the form written by [`RailGrid::to_text`] from a line iterator.
    /// `first_line` is the 1-based number of the first line, used in errors.
    pub fn parse_lines<'a, I>(lines: &mut I, first_line: usize) -> Result<(RailGrid, usize), FormatError>
    where
        I: Iterator<Item = &'a str>,
    {
        let mut line_no = first_line;
        let mut next = |line_no: &mut usize| -> Result<&'a str, FormatError> {
            let l = lines
                .next()
                .ok_or_else(|| FormatError::new(*line_no, "unexpected end of grid"))?;
            *line_no += 1;
            Ok(l)
        };
        let magic = next(&mut line_no)?;
        if magic.trim() != GRID_MAGIC {
            return Err(FormatError::new(line_no - 1, format!("expected '{GRID_MAGIC}'")));
        }
        let dims = next(&mut line_no)?;
        let mut it = dims.split_whitespace();
        let parse_dim = |s: Option<&str>, l: usize| -> Result<usize, FormatError> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| FormatError::new(l, "bad grid dimensions"))
        };
        let width = parse_dim(it.next(), line_no - 1)?;
        let height = parse_dim(it.next(), line_no - 1)?;
        if width < 2 || height < 1 || width.saturating_mul(height) > 1 << 24 {
            return Err(FormatError::new(line_no - 1, "grid dimensions out of range"));
        }
        let mut masks = Vec::with_capacity(width * height);
        for _ in 0..height {
            let row = next(&mut line_no)?;
            let before = masks.len();
            for tok in row.split_whitespace() {
                let m = u16::from_str_radix(tok, 16)
                    .map_err(|_| FormatError::new(line_no - 1, format!("bad mask '{tok}'")))?;
                masks.push(m);
            }
            if masks.len() - before != width {
                return Err(FormatError::new(line_no - 1, "row has the wrong number of cells"));
            }
        }
        let grid = RailGrid::from_masks(width, height, &masks)
            .map_err(|e| FormatError::new(line_no - 1, e.to_string()))?;
        Ok((grid, line_no))
    }

    pub fn from_text(text: &str) -> Result<RailGrid, FormatError> {
        let mut lines = text.lines();
        Ok(Self::parse_lines(&mut lines, 1)?.0)
    }
}

/// Accumulates undirected connections between adjacent cells.
#[derive(Debug, Clone)]
pub struct TrackBuilder {
    width: usize,
    height: usize,
    ports: Vec<u8>,
}

impl TrackBuilder {
    pub fn new(width: usize, height: usize) -> TrackBuilder {
        TrackBuilder {
            width,
            height,
            ports: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ports(&self, p: Pos) -> HeadingSet {
        HeadingSet::from_bits(self.ports[p.row * self.width + p.col])
    }

    pub fn is_track(&self, p: Pos) -> bool {
        self.ports[p.row * self.width + p.col] != 0
    }

    /// Connects two 4-adjacent cells. Returns false for non-adjacent cells.
    pub fn connect(&mut self, a: Pos, b: Pos) -> bool {
        let h = match (b.row as isize - a.row as isize, b.col as isize - a.col as isize) {
            (-1, 0) => Heading::North,
            (1, 0) => Heading::South,
            (0, 1) => Heading::East,
            (0, -1) => Heading::West,
            _ => return false,
        };
        if a.row >= self.height || a.col >= self.width || b.row >= self.height || b.col >= self.width {
            return false;
        }
        self.ports[a.row * self.width + a.col] |= 1 << h.index();
        self.ports[b.row * self.width + b.col] |= 1 << h.reverse().index();
        true
    }

    /// Connects consecutive cells of a 4-connected path.
    pub fn connect_path(&mut self, path: &[Pos]) {
        for w in path.windows(2) {
            self.connect(w[0], w[1]);
        }
    }

    pub fn build(&self) -> Result<RailGrid, GridError> {
        RailGrid::from_ports(self.width, self.height, &self.ports)
    }
}
