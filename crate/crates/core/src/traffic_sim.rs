//! World stepping: vehicle kinematics, traffic lights, background flow,
//! collision avoidance, capture detection and episode termination.
//!
//! One simulation step advances every active vehicle by `dt` seconds.
//! Vehicles accelerate toward the speed limit unless a red light or a
//! leading vehicle forces them to brake; braking never exceeds the
//! configured maximum deceleration. A vehicle may only pass the end of a
//! lane during a step in which its approach phase is green (or the lane
//! ends at a boundary dead end) and a turn has been latched, which makes
//! the red-light rule hold structurally rather than by tuning.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::road_network::{Axis, LaneId, Node, RoadNetwork, TurnAction};

/// Metres before the lane end at which a turn decision is requested.
pub const DECISION_ZONE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("could not place {0} vehicles without overlap")]
    PlacementFailed(usize),
    #[error("vehicle {0} needs a turn decision but none was provided")]
    MissingDecision(u32),
    #[error("decision provided for vehicle {0} which does not need one")]
    UnexpectedDecision(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleRole {
    Pursuer,
    Evader,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub role: VehicleRole,
    pub lane: LaneId,
    /// Metres from the start of the current lane.
    pub offset: f64,
    pub speed: f64,
    pub pending_turn: Option<TurnAction>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_pursuers: usize,
    pub num_evaders: usize,
    pub num_background: usize,
    /// Capture radius in metres; capture fires strictly below it.
    pub capture_radius: f64,
    pub v_max: f64,
    pub ac_max: f64,
    /// Negative; most negative allowed speed change per second.
    pub de_max: f64,
    pub max_steps: u32,
    pub dt: f64,
    pub light_green: f64,
    pub light_red: f64,
    pub headway: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_pursuers: 4,
            num_evaders: 2,
            num_background: 10,
            capture_radius: 5.0,
            v_max: 20.0,
            ac_max: 0.5,
            de_max: -4.5,
            max_steps: 500,
            dt: 1.0,
            light_green: 30.0,
            light_red: 30.0,
            headway: 2.5,
            rng_seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.capture_radius <= 0.0 {
            return bad("capture_radius must be positive");
        }
        if self.ac_max <= 0.0 {
            return bad("ac_max must be positive");
        }
        if self.de_max >= 0.0 {
            return bad("de_max must be negative");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if self.dt <= 0.0 {
            return bad("dt must be positive");
        }
        if self.v_max <= 0.0 {
            return bad("v_max must be positive");
        }
        if self.light_green <= 0.0 || self.light_red <= 0.0 {
            return bad("light phases must be positive");
        }
        if self.headway < 0.0 {
            return bad("headway must be non-negative");
        }
        Ok(())
    }

    pub fn num_vehicles(&self) -> usize {
        self.num_pursuers + self.num_evaders + self.num_background
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureEvent {
    pub evader: u32,
    pub pursuer: u32,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct BackgroundRoute {
    turns: Vec<TurnAction>,
    cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u32,
    pub vehicles: Vec<VehicleState>,
    /// Green axis per intersection at the current clock.
    pub light_phase: Vec<Axis>,
    pub captures: Vec<(u32, u32)>,
    rng: ChaCha8Rng,
    bg_routes: Vec<BackgroundRoute>,
}

/// Green axis for every intersection at step `clock` (all synchronized).
pub fn phase_at(cfg: &SimConfig, clock: u32) -> Axis {
    let cycle = cfg.light_green + cfg.light_red;
    let t = (clock as f64 * cfg.dt) % cycle;
    if t < cfg.light_green {
        Axis::NorthSouth
    } else {
        Axis::EastWest
    }
}

/// Distance covered while braking from `v` to rest at `decel` (positive)
/// per-step deceleration, sampling positions once per step.
fn stop_distance(v: f64, decel: f64, dt: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let d = decel * dt;
    let n = ((v / d).ceil() - 1.0).max(0.0);
    (n * v - d * n * (n + 1.0) / 2.0) * dt
}

/// Largest speed in [v_lo, v_hi] whose travel this step plus braking
/// distance stays within `dist`; falls back to v_lo when impossible.
fn max_stoppable_speed(dist: f64, v_lo: f64, v_hi: f64, decel: f64, dt: f64) -> f64 {
    if v_hi * dt + stop_distance(v_hi, decel, dt) <= dist {
        return v_hi;
    }
    let d = decel * dt;
    let mut best: f64 = 0.0;
    let n_max = (v_hi / d).ceil() as i64;
    for n in 0..=n_max {
        let nf = n as f64;
        // branch n: v*dt + stop(v) = v*(n+1)*dt - d*dt*n*(n+1)/2 for v in (n*d, (n+1)*d]
        let cand = (dist / dt + d * nf * (nf + 1.0) / 2.0) / (nf + 1.0);
        let v = cand.min((nf + 1.0) * d).min(v_hi).max(0.0);
        if v * dt + stop_distance(v, decel, dt) <= dist + 1e-9 && v > best {
            best = v;
        }
    }
    best.clamp(v_lo, v_hi)
}

/// Places all vehicles and returns the initial world; deterministic in the
/// seed. Pursuers and evaders are spawned uniformly at random with a
/// minimum mutual separation, background vehicles follow routes drawn at
/// reset.
pub fn reset(net: &RoadNetwork, cfg: &SimConfig) -> Result<SimState, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let num_lanes = net.num_lanes() as u32;
    let lane_len = net.lane_length();
    let min_sep = (2.0 * cfg.capture_radius).max(cfg.headway);

    let mut vehicles: Vec<VehicleState> = Vec::with_capacity(cfg.num_vehicles());
    let total_pursuit = cfg.num_pursuers + cfg.num_evaders;

    for id in 0..cfg.num_vehicles() {
        let role = if id < cfg.num_pursuers {
            VehicleRole::Pursuer
        } else if id < total_pursuit {
            VehicleRole::Evader
        } else {
            VehicleRole::Background
        };
        let mut placed = None;
        for _ in 0..1000 {
            let lane = LaneId(rng.gen_range(0..num_lanes));
            let offset = rng.gen_range(0.0..lane_len);
            let ok = vehicles.iter().all(|v| {
                let same_lane_gap = v.lane != lane || (v.offset - offset).abs() >= cfg.headway;
                let pursuit_sep = role == VehicleRole::Background
                    || v.role == VehicleRole::Background
                    || world_distance(net, v.lane, v.offset, lane, offset) >= min_sep;
                same_lane_gap && pursuit_sep
            });
            if ok {
                placed = Some((lane, offset));
                break;
            }
        }
        let (lane, offset) = placed.ok_or(SimError::PlacementFailed(cfg.num_vehicles()))?;
        vehicles.push(VehicleState {
            id: id as u32,
            role,
            lane,
            offset,
            speed: 0.0,
            pending_turn: None,
            active: true,
        });
    }

    let bg_routes = (0..cfg.num_background)
        .map(|_| BackgroundRoute {
            turns: (0..8)
                .map(|_| TurnAction::from_index(rng.gen_range(0..3)).unwrap())
                .collect(),
            cursor: 0,
        })
        .collect();

    let light_phase = vec![phase_at(cfg, 0); net.num_intersections()];
    Ok(SimState {
        clock: 0,
        vehicles,
        light_phase,
        captures: Vec::new(),
        rng,
        bg_routes,
    })
}

fn world_distance(net: &RoadNetwork, la: LaneId, oa: f64, lb: LaneId, ob: f64) -> f64 {
    let (xa, ya) = net.position(la, oa);
    let (xb, yb) = net.position(lb, ob);
    ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt()
}

/// Euclidean distance between two vehicles in world coordinates.
pub fn distance(net: &RoadNetwork, state: &SimState, a: u32, b: u32) -> f64 {
    let va = &state.vehicles[a as usize];
    let vb = &state.vehicles[b as usize];
    world_distance(net, va.lane, va.offset, vb.lane, vb.offset)
}

/// True when the vehicle must be given a turn for the upcoming
/// intersection. Background vehicles are routed internally and never
/// report true.
pub fn needs_decision(net: &RoadNetwork, state: &SimState, vehicle_id: u32) -> bool {
    let v = &state.vehicles[vehicle_id as usize];
    v.active
        && v.role != VehicleRole::Background
        && v.pending_turn.is_none()
        && v.offset >= net.lane_length() - DECISION_ZONE
}

/// Advances the world by one step. `decisions` must contain exactly the
/// vehicles for which [`needs_decision`] is true.
pub fn step(
    net: &RoadNetwork,
    cfg: &SimConfig,
    state: &mut SimState,
    decisions: &HashMap<u32, TurnAction>,
) -> Result<(Vec<CaptureEvent>, bool), SimError> {
    let mut needed = 0usize;
    for v in &state.vehicles {
        if needs_decision(net, state, v.id) {
            needed += 1;
            if !decisions.contains_key(&v.id) {
                return Err(SimError::MissingDecision(v.id));
            }
        }
    }
    if decisions.len() != needed {
        let extra = decisions
            .keys()
            .find(|id| !needs_decision(net, state, **id))
            .copied()
            .unwrap_or(0);
        return Err(SimError::UnexpectedDecision(extra));
    }

    // latch pursuit decisions, route background vehicles
    let lane_len = net.lane_length();
    let first_bg = state.vehicles.len() - state.bg_routes.len();
    for i in 0..state.vehicles.len() {
        let (active, role, lane, offset, pending, id) = {
            let v = &state.vehicles[i];
            (v.active, v.role, v.lane, v.offset, v.pending_turn, v.id)
        };
        if !active {
            continue;
        }
        if role == VehicleRole::Background {
            if pending.is_none() && offset >= lane_len - DECISION_ZONE {
                let route = &mut state.bg_routes[i - first_bg];
                let wanted = route.turns[route.cursor % route.turns.len()];
                route.cursor += 1;
                let turn = if net.successor(lane, wanted).is_some() {
                    wanted
                } else {
                    net.existing_turns(lane)[0]
                };
                state.vehicles[i].pending_turn = Some(turn);
            }
        } else if let Some(turn) = decisions.get(&id) {
            state.vehicles[i].pending_turn = Some(*turn);
        }
    }

    // snapshot for simultaneous motion update
    let snapshot: Vec<(LaneId, f64, f64, bool)> = state
        .vehicles
        .iter()
        .map(|v| (v.lane, v.offset, v.speed, v.active))
        .collect();
    let decel = -cfg.de_max;
    let green_axis = phase_at(cfg, state.clock);

    for i in 0..state.vehicles.len() {
        if !state.vehicles[i].active {
            continue;
        }
        let (lane, offset, speed, _) = snapshot[i];
        let v_lo = (speed + cfg.de_max * cfg.dt).max(0.0);
        let v_hi = (speed + cfg.ac_max * cfg.dt).min(cfg.v_max);
        let mut bound = v_hi;

        // nearest leader on the same lane
        let mut leader: Option<(f64, f64)> = None;
        for (j, &(l2, o2, s2, a2)) in snapshot.iter().enumerate() {
            if j != i && a2 && l2 == lane && o2 > offset && leader.is_none_or(|(lo, _)| o2 < lo)
            {
                leader = Some((o2, s2));
            }
        }
        if let Some((lead_off, lead_speed)) = leader {
            let room = lead_off + stop_distance(lead_speed, decel, cfg.dt) - cfg.headway - offset;
            bound = bound.min(max_stoppable_speed(room, v_lo, v_hi, decel, cfg.dt));
        }

        let veh = &state.vehicles[i];
        let crossing_allowed = veh.pending_turn.is_some()
            && match net.lane(lane).end_node {
                Node::DeadEnd(_) => true,
                Node::Intersection(_) => net.lane(lane).direction.axis() == green_axis,
            };
        let crosses = crossing_allowed && offset + bound * cfg.dt >= lane_len;
        if !crosses {
            // keep the vehicle able to stop at the lane end
            bound = bound.min(max_stoppable_speed(
                lane_len - offset,
                v_lo,
                v_hi,
                decel,
                cfg.dt,
            ));
        }
        let new_speed = bound.clamp(v_lo, v_hi);
        let new_offset = offset + new_speed * cfg.dt;

        let veh = &mut state.vehicles[i];
        veh.speed = new_speed;
        if crosses && new_offset >= lane_len {
            let turn = veh.pending_turn.take().unwrap();
            let next = net
                .successor(lane, turn)
                .unwrap_or_else(|| net.reverse_lane(lane));
            veh.lane = next;
            veh.offset = new_offset - lane_len;
        } else {
            veh.offset = new_offset.min(lane_len);
        }
    }

    state.clock += 1;
    let axis = phase_at(cfg, state.clock);
    state.light_phase.iter_mut().for_each(|p| *p = axis);

    // capture detection at the new positions
    let mut events = Vec::new();
    let total_pursuit = cfg.num_pursuers + cfg.num_evaders;
    for m in cfg.num_pursuers..total_pursuit {
        if !state.vehicles[m].active {
            continue;
        }
        for n in 0..cfg.num_pursuers {
            if distance(net, state, n as u32, m as u32) < cfg.capture_radius {
                events.push(CaptureEvent {
                    evader: m as u32,
                    pursuer: n as u32,
                    step: state.clock,
                });
                state.vehicles[m].active = false;
                state.captures.push((m as u32, state.clock));
                break;
            }
        }
    }

    let evaders_left = state.vehicles[cfg.num_pursuers..total_pursuit]
        .iter()
        .any(|v| v.active);
    let done = !evaders_left || state.clock >= cfg.max_steps;
    Ok((events, done))
}

/// One trajectory-log record: step, id, role, lane, offset, speed.
pub fn trajectory_line(state: &SimState, id: u32) -> String {
    let v = &state.vehicles[id as usize];
    let role = match v.role {
        VehicleRole::Pursuer => "pursuer",
        VehicleRole::Evader => "evader",
        VehicleRole::Background => "background",
    };
    format!(
        "{} {} {} {} {} {}",
        state.clock, v.id, role, v.lane.0, v.offset, v.speed
    )
}
