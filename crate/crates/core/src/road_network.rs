//! Structured bidirectional grid road topology: lanes, turn connectivity,
//! one-hot lane embeddings and the flattened adjacency matrix.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("grid needs at least 2x2 intersections, got {rows}x{cols}")]
    InvalidDimensions { rows: usize, cols: usize },
    #[error("lane length must be positive, got {0}")]
    InvalidLaneLength(f64),
}

/// Index of a directed lane, stable across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LaneId(pub u32);

impl LaneId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The three-way action space at an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TurnAction {
    Straight,
    Left,
    Right,
}

impl TurnAction {
    pub const ALL: [TurnAction; 3] = [TurnAction::Straight, TurnAction::Left, TurnAction::Right];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            TurnAction::Straight => 0,
            TurnAction::Left => 1,
            TurnAction::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<TurnAction> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TurnAction::Straight => "straight",
            TurnAction::Left => "left",
            TurnAction::Right => "right",
        }
    }
}

/// Compass heading of a directed lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    fn unit(self) -> (f64, f64) {
        match self {
            Direction::North => (0.0, 1.0),
            Direction::East => (1.0, 0.0),
            Direction::South => (0.0, -1.0),
            Direction::West => (-1.0, 0.0),
        }
    }

    fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    /// Heading after a left turn (counter-clockwise).
    fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    /// Heading after a right turn (clockwise).
    fn right(self) -> Direction {
        self.left().opposite()
    }

    /// Signal axis this heading belongs to.
    pub fn axis(self) -> Axis {
        match self {
            Direction::North | Direction::South => Axis::NorthSouth,
            Direction::East | Direction::West => Axis::EastWest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    NorthSouth,
    EastWest,
}

/// Endpoint of a lane: a signalised intersection or a boundary dead end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Intersection(u32),
    DeadEnd(u32),
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub direction: Direction,
    pub start_node: Node,
    pub end_node: Node,
}

/// Immutable grid road network. Safe to share read-only across workers.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    rows: usize,
    cols: usize,
    lane_length: f64,
    lanes: Vec<Lane>,
    /// successors[lane][action] -> next lane, if the turn exists.
    successors: Vec<[Option<LaneId>; 3]>,
    /// Opposite-direction lane of the same edge.
    reverse: Vec<LaneId>,
    /// L x L row-major binary adjacency, 1 iff some turn connects the lanes.
    adjacency: Vec<f64>,
    /// Flattened indices of the ones in `adjacency`, ascending.
    adjacency_ones: Vec<u32>,
}

/// Builds a rows x cols grid with one stub edge per boundary-side exposure.
/// Every edge contributes two directed lanes; stub lanes U-turn at the dead
/// end via `TurnAction::Left`.
pub fn build_grid(rows: usize, cols: usize, lane_length: f64) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::InvalidDimensions { rows, cols });
    }
    if lane_length <= 0.0 || lane_length.is_nan() {
        return Err(NetworkError::InvalidLaneLength(lane_length));
    }

    let inter_pos = |r: usize, c: usize| -> (f64, f64) { (c as f64 * lane_length, r as f64 * lane_length) };
    let inter_id = |r: usize, c: usize| -> u32 { (r * cols + c) as u32 };

    let mut lanes: Vec<Lane> = Vec::new();
    let mut reverse: Vec<LaneId> = Vec::new();
    let mut dead_ends = 0u32;

    let push_edge = |lanes: &mut Vec<Lane>,
                         reverse: &mut Vec<LaneId>,
                         a_pos: (f64, f64),
                         a_node: Node,
                         b_pos: (f64, f64),
                         b_node: Node,
                         dir_ab: Direction| {
        let fwd = LaneId(lanes.len() as u32);
        let bwd = LaneId(lanes.len() as u32 + 1);
        lanes.push(Lane {
            start: a_pos,
            end: b_pos,
            direction: dir_ab,
            start_node: a_node,
            end_node: b_node,
        });
        lanes.push(Lane {
            start: b_pos,
            end: a_pos,
            direction: dir_ab.opposite(),
            start_node: b_node,
            end_node: a_node,
        });
        reverse.push(bwd);
        reverse.push(fwd);
    };

    for r in 0..rows {
        for c in 0..cols {
            let u = Node::Intersection(inter_id(r, c));
            let up = inter_pos(r, c);
            if c + 1 < cols {
                push_edge(&mut lanes, &mut reverse, up, u, inter_pos(r, c + 1), Node::Intersection(inter_id(r, c + 1)), Direction::East);
            }
            if r + 1 < rows {
                push_edge(&mut lanes, &mut reverse, up, u, inter_pos(r + 1, c), Node::Intersection(inter_id(r + 1, c)), Direction::North);
            }
            // boundary stubs, one per exposed side
            let mut stub = |lanes: &mut Vec<Lane>, reverse: &mut Vec<LaneId>, dir: Direction| {
                let (dx, dy) = dir.unit();
                let end = (up.0 + dx * lane_length, up.1 + dy * lane_length);
                push_edge(lanes, reverse, up, u, end, Node::DeadEnd(dead_ends), dir);
                dead_ends += 1;
            };
            if r + 1 == rows {
                stub(&mut lanes, &mut reverse, Direction::North);
            }
            if c + 1 == cols {
                stub(&mut lanes, &mut reverse, Direction::East);
            }
            if r == 0 {
                stub(&mut lanes, &mut reverse, Direction::South);
            }
            if c == 0 {
                stub(&mut lanes, &mut reverse, Direction::West);
            }
        }
    }

    let num_lanes = lanes.len();

    // (intersection, outgoing direction) -> lane leaving it
    let num_inter = rows * cols;
    let mut leaving: Vec<[Option<LaneId>; 4]> = vec![[None; 4]; num_inter];
    let dir_slot = |d: Direction| -> usize {
        match d {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    };
    for (i, lane) in lanes.iter().enumerate() {
        if let Node::Intersection(v) = lane.start_node {
            leaving[v as usize][dir_slot(lane.direction)] = Some(LaneId(i as u32));
        }
    }

    let mut successors: Vec<[Option<LaneId>; 3]> = vec![[None; 3]; num_lanes];
    for (i, lane) in lanes.iter().enumerate() {
        match lane.end_node {
            Node::Intersection(v) => {
                let d = lane.direction;
                successors[i][TurnAction::Straight.index()] = leaving[v as usize][dir_slot(d)];
                successors[i][TurnAction::Left.index()] = leaving[v as usize][dir_slot(d.left())];
                successors[i][TurnAction::Right.index()] = leaving[v as usize][dir_slot(d.right())];
            }
            Node::DeadEnd(_) => {
                // only move at a dead end is the U-turn onto the return lane
                successors[i][TurnAction::Left.index()] = Some(reverse[i]);
            }
        }
    }

    let mut adjacency = vec![0.0; num_lanes * num_lanes];
    let mut adjacency_ones = Vec::new();
    for (i, succ) in successors.iter().enumerate() {
        for s in succ.iter().flatten() {
            let flat = i * num_lanes + s.index();
            if adjacency[flat] == 0.0 {
                adjacency[flat] = 1.0;
                adjacency_ones.push(flat as u32);
            }
        }
    }
    adjacency_ones.sort_unstable();

    Ok(RoadNetwork {
        rows,
        cols,
        lane_length,
        lanes,
        successors,
        reverse,
        adjacency,
        adjacency_ones,
    })
}

impl RoadNetwork {
    pub fn num_intersections(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_length(&self) -> f64 {
        self.lane_length
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.index()]
    }

    /// Geometric successor under a turn, absent when the turn does not exist.
    pub fn successor(&self, lane: LaneId, action: TurnAction) -> Option<LaneId> {
        self.successors[lane.index()][action.index()]
    }

    /// Turns that exist for this lane, in action-index order.
    pub fn existing_turns(&self, lane: LaneId) -> Vec<TurnAction> {
        TurnAction::ALL
            .iter()
            .copied()
            .filter(|a| self.successor(lane, *a).is_some())
            .collect()
    }

    pub fn reverse_lane(&self, lane: LaneId) -> LaneId {
        self.reverse[lane.index()]
    }

    pub fn end_intersection(&self, lane: LaneId) -> Option<u32> {
        match self.lanes[lane.index()].end_node {
            Node::Intersection(v) => Some(v),
            Node::DeadEnd(_) => None,
        }
    }

    /// One-hot embedding of a lane; all zeros when the lane is absent.
    pub fn lane_one_hot(&self, lane: Option<LaneId>) -> Vec<f64> {
        let mut v = vec![0.0; self.num_lanes()];
        if let Some(l) = lane {
            v[l.index()] = 1.0;
        }
        v
    }

    /// World position at `offset` metres from the lane start.
    pub fn position(&self, lane: LaneId, offset: f64) -> (f64, f64) {
        let l = &self.lanes[lane.index()];
        let t = offset / self.lane_length;
        (
            l.start.0 + (l.end.0 - l.start.0) * t,
            l.start.1 + (l.end.1 - l.start.1) * t,
        )
    }

    /// Flattened L x L row-major adjacency matrix.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    /// Flattened indices of the adjacency ones, ascending.
    pub fn adjacency_ones(&self) -> &[u32] {
        &self.adjacency_ones
    }

    /// Plain-text adjacency listing for debugging.
    pub fn adjacency_listing(&self) -> String {
        let mut out = String::new();
        for (i, succ) in self.successors.iter().enumerate() {
            out.push_str(&format!("lane {:>3}:", i));
            for (a, s) in TurnAction::ALL.iter().zip(succ.iter()) {
                match s {
                    Some(l) => out.push_str(&format!(" {}->{}", a.name(), l.0)),
                    None => out.push_str(&format!(" {}->-", a.name())),
                }
            }
            out.push('\n');
        }
        out
    }
}
