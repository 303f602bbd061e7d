//! Partial observations: evader six-cell pursuer counts, pursuer lane
//! position records, the joint pursuer observation, and the rolling
//! history pool feeding the strategy encoder.
//!
//! The joint observation flattens to a fixed-width vector
//! `(4L+1)(N+M) + L*L`: one position record per pursuer, one zero-padded
//! slot per evader, then the road adjacency block. Records are kept
//! sparsely (a handful of one-hot coordinates plus a normalized lane
//! offset) since networks consume them through sparse kernels.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::road_network::{LaneId, RoadNetwork, TurnAction};
use crate::traffic_sim::{SimState, VehicleRole};

/// Pursuer counts per visual-field cell, in the order: own lane near/far
/// half, straight-ahead lane near/far half, right successor near half,
/// left successor near half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaderObservation {
    pub cell_counts: [u16; 6],
}

/// Lane position record: current lane, the three reachable lanes, and the
/// distance from the lane start.
#[derive(Debug, Clone, PartialEq)]
pub struct LocRecord {
    pub lane: Option<LaneId>,
    pub straight: Option<LaneId>,
    pub left: Option<LaneId>,
    pub right: Option<LaneId>,
    /// Metres from lane start; normalized by lane length when flattened.
    pub dis: f64,
}

impl LocRecord {
    pub fn empty() -> LocRecord {
        LocRecord {
            lane: None,
            straight: None,
            left: None,
            right: None,
            dis: 0.0,
        }
    }

    fn for_vehicle(net: &RoadNetwork, lane: LaneId, offset: f64) -> LocRecord {
        LocRecord {
            lane: Some(lane),
            straight: net.successor(lane, TurnAction::Straight),
            left: net.successor(lane, TurnAction::Left),
            right: net.successor(lane, TurnAction::Right),
            dis: offset,
        }
    }

    /// Width of one flattened record: four one-hot blocks plus the offset.
    pub fn width(num_lanes: usize) -> usize {
        4 * num_lanes + 1
    }

    /// Appends the record's nonzero coordinates at `base`.
    fn scatter(&self, net: &RoadNetwork, base: usize, idx: &mut Vec<u32>, val: &mut Vec<f64>) {
        let l = net.num_lanes();
        let mut put = |block: usize, lane: Option<LaneId>| {
            if let Some(id) = lane {
                idx.push((base + block * l + id.index()) as u32);
                val.push(1.0);
            }
        };
        put(0, self.lane);
        put(1, self.straight);
        put(2, self.left);
        put(3, self.right);
        let d = self.dis / net.lane_length();
        if d != 0.0 {
            idx.push((base + 4 * l) as u32);
            val.push(d);
        }
    }

    /// Dense flattened record, mostly for tests.
    pub fn to_dense(&self, net: &RoadNetwork) -> Vec<f64> {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        self.scatter(net, 0, &mut idx, &mut val);
        let mut out = vec![0.0; Self::width(net.num_lanes())];
        for (i, v) in idx.iter().zip(val.iter()) {
            out[*i as usize] = *v;
        }
        out
    }
}

/// Joint observation of the pursuing team at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    /// Sparse coordinates of the vehicle blocks (pursuer records then
    /// evader slots), ascending.
    pub veh_idx: Vec<u32>,
    pub veh_val: Vec<f64>,
    /// Slot mask: true iff the evader slot carries a visible evader.
    pub mask: Vec<bool>,
    /// Visible-evader count summed over pursuers before deduplication.
    pub mv_total: usize,
    pub num_pursuers: usize,
    pub num_evaders: usize,
    /// Whether the adjacency block is part of this observation.
    pub include_adj: bool,
}

impl JointObservation {
    pub fn veh_width(&self, net: &RoadNetwork) -> usize {
        LocRecord::width(net.num_lanes()) * (self.num_pursuers + self.num_evaders)
    }

    pub fn width(&self, net: &RoadNetwork) -> usize {
        let l = net.num_lanes();
        self.veh_width(net) + l * l
    }

    /// Appends all nonzero coordinates, shifted by `base`. The adjacency
    /// ones are included only when the observation carries them.
    pub fn scatter(&self, net: &RoadNetwork, base: usize, idx: &mut Vec<u32>, val: &mut Vec<f64>) {
        for (i, v) in self.veh_idx.iter().zip(self.veh_val.iter()) {
            idx.push(base as u32 + i);
            val.push(*v);
        }
        if self.include_adj {
            let adj_base = (base + self.veh_width(net)) as u32;
            for &a in net.adjacency_ones() {
                idx.push(adj_base + a);
                val.push(1.0);
            }
        }
    }

    /// Coordinates of the adjacency ones within this observation layout
    /// (empty when the adjacency is ablated away).
    pub fn adjacency_coords(net: &RoadNetwork, num_pursuers: usize, num_evaders: usize, include_adj: bool) -> Vec<u32> {
        if !include_adj {
            return Vec::new();
        }
        let veh_w = LocRecord::width(net.num_lanes()) * (num_pursuers + num_evaders);
        net.adjacency_ones()
            .iter()
            .map(|&a| veh_w as u32 + a)
            .collect()
    }

    pub fn to_dense(&self, net: &RoadNetwork) -> Vec<f64> {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        self.scatter(net, 0, &mut idx, &mut val);
        let mut out = vec![0.0; self.width(net)];
        for (i, v) in idx.iter().zip(val.iter()) {
            out[*i as usize] = *v;
        }
        out
    }
}

fn half(net: &RoadNetwork) -> f64 {
    net.lane_length() / 2.0
}

/// Six-cell pursuer counts for one active evader.
pub fn evader_observe(net: &RoadNetwork, state: &SimState, evader_id: u32) -> EvaderObservation {
    let me = &state.vehicles[evader_id as usize];
    let l = me.lane;
    let l_str = net.successor(l, TurnAction::Straight);
    let l_lef = net.successor(l, TurnAction::Left);
    let l_rig = net.successor(l, TurnAction::Right);
    let mid = half(net);

    let mut cells = [0u16; 6];
    for v in &state.vehicles {
        if v.role != VehicleRole::Pursuer || !v.active {
            continue;
        }
        if v.lane == l {
            cells[if v.offset < mid { 0 } else { 1 }] += 1;
        } else if Some(v.lane) == l_str {
            cells[if v.offset < mid { 2 } else { 3 }] += 1;
        } else if Some(v.lane) == l_rig && v.offset < mid {
            cells[4] += 1;
        } else if Some(v.lane) == l_lef && v.offset < mid {
            cells[5] += 1;
        }
    }
    EvaderObservation { cell_counts: cells }
}

/// Active evaders inside a pursuer's visual field: whole own lane, whole
/// straight successor, near half of the lateral successors.
pub fn visible_evaders(net: &RoadNetwork, state: &SimState, pursuer_id: u32) -> Vec<u32> {
    let me = &state.vehicles[pursuer_id as usize];
    let l = me.lane;
    let l_str = net.successor(l, TurnAction::Straight);
    let l_lef = net.successor(l, TurnAction::Left);
    let l_rig = net.successor(l, TurnAction::Right);
    let mid = half(net);

    state
        .vehicles
        .iter()
        .filter(|v| v.role == VehicleRole::Evader && v.active)
        .filter(|v| {
            v.lane == l
                || Some(v.lane) == l_str
                || (Some(v.lane) == l_lef && v.offset < mid)
                || (Some(v.lane) == l_rig && v.offset < mid)
        })
        .map(|v| v.id)
        .collect()
}

/// Position records for a pursuer: its own, plus one per visible evader.
pub fn pursuer_observe(
    net: &RoadNetwork,
    state: &SimState,
    pursuer_id: u32,
) -> (LocRecord, Vec<(u32, LocRecord)>) {
    let me = &state.vehicles[pursuer_id as usize];
    let own = LocRecord::for_vehicle(net, me.lane, me.offset);
    let seen = visible_evaders(net, state, pursuer_id)
        .into_iter()
        .map(|id| {
            let e = &state.vehicles[id as usize];
            (id, LocRecord::for_vehicle(net, e.lane, e.offset))
        })
        .collect();
    (own, seen)
}

/// Joint observation: every pursuer's record, the union of evaders any
/// pursuer sees (deduplicated, slotted by evader id), and the adjacency.
pub fn joint_observe(net: &RoadNetwork, state: &SimState) -> JointObservation {
    joint_observe_with(net, state, true)
}

pub fn joint_observe_with(net: &RoadNetwork, state: &SimState, include_adj: bool) -> JointObservation {
    let num_pursuers = state
        .vehicles
        .iter()
        .filter(|v| v.role == VehicleRole::Pursuer)
        .count();
    let num_evaders = state
        .vehicles
        .iter()
        .filter(|v| v.role == VehicleRole::Evader)
        .count();
    let loc_w = LocRecord::width(net.num_lanes());

    let mut veh_idx = Vec::new();
    let mut veh_val = Vec::new();
    let mut mask = vec![false; num_evaders];
    let mut mv_total = 0usize;
    let mut seen_slots: Vec<Option<LocRecord>> = vec![None; num_evaders];

    for n in 0..num_pursuers {
        let (own, seen) = pursuer_observe(net, state, n as u32);
        own.scatter(net, n * loc_w, &mut veh_idx, &mut veh_val);
        mv_total += seen.len();
        for (id, rec) in seen {
            let slot = id as usize - num_pursuers;
            if seen_slots[slot].is_none() {
                seen_slots[slot] = Some(rec);
                mask[slot] = true;
            }
        }
    }
    for (slot, rec) in seen_slots.iter().enumerate() {
        if let Some(rec) = rec {
            rec.scatter(net, (num_pursuers + slot) * loc_w, &mut veh_idx, &mut veh_val);
        }
    }

    JointObservation {
        veh_idx,
        veh_val,
        mask,
        mv_total,
        num_pursuers,
        num_evaders,
        include_adj,
    }
}

/// Ring of the last `h` joint observations, oldest first. Until `h` pushes
/// have happened the window pads by repeating the oldest entry.
#[derive(Debug, Clone)]
pub struct ObservationPool {
    h: usize,
    ring: VecDeque<Arc<JointObservation>>,
}

impl ObservationPool {
    pub fn new(h: usize) -> ObservationPool {
        assert!(h >= 1, "history length must be at least 1");
        ObservationPool {
            h,
            ring: VecDeque::with_capacity(h),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn push(&mut self, obs: Arc<JointObservation>) {
        if self.ring.len() == self.h {
            self.ring.pop_front();
        }
        self.ring.push_back(obs);
    }

    /// Exactly `h` observations, oldest to newest.
    pub fn window(&self) -> Vec<Arc<JointObservation>> {
        assert!(!self.ring.is_empty(), "window requested from an empty pool");
        let oldest = self.ring.front().unwrap();
        let mut out = Vec::with_capacity(self.h);
        for _ in 0..self.h - self.ring.len() {
            out.push(Arc::clone(oldest));
        }
        out.extend(self.ring.iter().cloned());
        out
    }
}

/// Flattens a window into one sparse vector of `h` stacked observations.
pub fn window_scatter(
    net: &RoadNetwork,
    window: &[Arc<JointObservation>],
    idx: &mut Vec<u32>,
    val: &mut Vec<f64>,
) {
    idx.clear();
    val.clear();
    let mut base = 0usize;
    for obs in window {
        obs.scatter(net, base, idx, val);
        base += obs.width(net);
    }
}

/// Dense window, mostly for tests.
pub fn window_dense(net: &RoadNetwork, window: &[Arc<JointObservation>]) -> Vec<f64> {
    let mut idx = Vec::new();
    let mut val = Vec::new();
    window_scatter(net, window, &mut idx, &mut val);
    let width: usize = window.iter().map(|o| o.width(net)).sum();
    let mut out = vec![0.0; width];
    for (i, v) in idx.iter().zip(val.iter()) {
        out[*i as usize] = *v;
    }
    out
}
