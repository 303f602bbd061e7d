//! The evading team's joint dynamic strategy: per-evader Q-tables over the
//! joint cell observation, trained against randomly moving pursuers and
//! frozen afterwards.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::observation::evader_observe;
use crate::road_network::{RoadNetwork, TurnAction};
use crate::traffic_sim::{self, needs_decision, SimConfig, SimError, VehicleRole};

/// Symmetric counterpart of the pursuers' distance reward weight.
const EVADER_DISTANCE_WEIGHT: f64 = 2.0;
const CAPTURE_PENALTY: f64 = -10.0;

#[derive(Debug, Error)]
pub enum QTableError {
    #[error("line {0}: malformed entry")]
    Malformed(usize),
    #[error("line {0}: duplicate entry")]
    Duplicate(usize),
    #[error("line {0}: table index {1} out of range")]
    TableIndex(usize, usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Concatenation of every evader's six cell counts, in evader-id order.
/// Captured evaders contribute an all-zero sextuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointEvaderKey(pub Vec<u8>);

/// Joint observation key for the whole evading team at the current step.
pub fn joint_key(net: &RoadNetwork, state: &crate::traffic_sim::SimState) -> JointEvaderKey {
    let mut k = Vec::new();
    for v in &state.vehicles {
        if v.role != VehicleRole::Evader {
            continue;
        }
        if v.active {
            let obs = evader_observe(net, state, v.id);
            k.extend(obs.cell_counts.iter().map(|&c| c.min(255) as u8));
        } else {
            k.extend_from_slice(&[0; 6]);
        }
    }
    JointEvaderKey(k)
}

/// Action-value table; absent entries read as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    map: HashMap<JointEvaderKey, [f64; 3]>,
}

impl QTable {
    pub fn new() -> QTable {
        QTable::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn q(&self, key: &JointEvaderKey, a: TurnAction) -> f64 {
        self.map.get(key).map_or(0.0, |v| v[a.index()])
    }

    fn max_q(&self, key: &JointEvaderKey) -> f64 {
        self.map
            .get(key)
            .map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    fn entry(&mut self, key: &JointEvaderKey) -> &mut [f64; 3] {
        self.map.entry(key.clone()).or_insert([0.0; 3])
    }
}

#[derive(Debug, Clone)]
pub struct EvaderTrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Starting exploration rate; decays linearly to a tenth of itself.
    pub epsilon: f64,
    pub episodes: u32,
}

impl Default for EvaderTrainConfig {
    fn default() -> Self {
        EvaderTrainConfig {
            alpha: 0.1,
            gamma: 0.95,
            epsilon: 0.1,
            episodes: 500,
        }
    }
}

/// One-step Bellman update:
/// `Q(k,a) += alpha (r + gamma max_a' Q(k',a') - Q(k,a))`.
pub fn q_update(
    tbl: &mut QTable,
    key: &JointEvaderKey,
    a: TurnAction,
    r: f64,
    next_key: &JointEvaderKey,
    cfg: &EvaderTrainConfig,
) {
    let max_next = tbl.max_q(next_key);
    let slot = &mut tbl.entry(key)[a.index()];
    *slot += cfg.alpha * (r + cfg.gamma * max_next - *slot);
}

/// Terminal variant: no bootstrap term.
fn q_update_terminal(tbl: &mut QTable, key: &JointEvaderKey, a: TurnAction, r: f64, cfg: &EvaderTrainConfig) {
    let slot = &mut tbl.entry(key)[a.index()];
    *slot += cfg.alpha * (r - *slot);
}

/// Epsilon-greedy over the turns that exist for the evader's lane; greedy
/// ties break toward the lowest action index.
pub fn select_action(
    tbl: &QTable,
    key: &JointEvaderKey,
    allowed: &[TurnAction],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> TurnAction {
    assert!(!allowed.is_empty(), "no turns exist for this lane");
    if rng.gen::<f64>() < epsilon {
        return allowed[rng.gen_range(0..allowed.len())];
    }
    let mut best = allowed[0];
    let mut best_q = tbl.q(key, best);
    for &a in &allowed[1..] {
        let q = tbl.q(key, a);
        if q > best_q {
            best = a;
            best_q = q;
        }
    }
    best
}

/// Greedy action for frozen-table play.
pub fn greedy_action(tbl: &QTable, key: &JointEvaderKey, allowed: &[TurnAction]) -> TurnAction {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // never consulted at epsilon 0
    select_action(tbl, key, allowed, 0.0, &mut rng)
}

/// Distance from an evader to the nearest pursuer.
fn nearest_pursuer_distance(
    net: &RoadNetwork,
    state: &crate::traffic_sim::SimState,
    cfg: &SimConfig,
    evader: u32,
) -> f64 {
    (0..cfg.num_pursuers as u32)
        .map(|n| traffic_sim::distance(net, state, n, evader))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpisodeMetrics {
    pub episode: u32,
    pub steps: u32,
    pub captures: usize,
    pub table_entries: usize,
}

/// Pretraining metrics CSV, one row per episode.
pub fn pretrain_csv(rows: &[PretrainEpisodeMetrics]) -> String {
    let mut out = String::from("episode,steps,captures,table_entries\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.episode, r.steps, r.captures, r.table_entries
        ));
    }
    out
}

pub struct PretrainResult {
    pub tables: Vec<QTable>,
    pub metrics: Vec<PretrainEpisodeMetrics>,
}

/// Trains the joint dynamic strategy with uniformly random pursuer turns.
/// Per decision the reward is the within-interval discounted sum of
/// `2 (d_t - d_{t-1})` for the nearest-pursuer distance, with a -10
/// penalty on capture; capture closes the interval without bootstrapping,
/// and intervals still open at the step limit are dropped.
pub fn pretrain(
    net: &RoadNetwork,
    sim_cfg: &SimConfig,
    train_cfg: &EvaderTrainConfig,
) -> Result<PretrainResult, QTableError> {
    let m = sim_cfg.num_evaders;
    let mut tables = vec![QTable::new(); m];
    let mut metrics = Vec::with_capacity(train_cfg.episodes as usize);

    let mut seed_rng = ChaCha8Rng::seed_from_u64(sim_cfg.rng_seed);
    seed_rng.set_stream(0xE5);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(sim_cfg.rng_seed);
    explore_rng.set_stream(0xEE);
    let mut pursuer_rng = ChaCha8Rng::seed_from_u64(sim_cfg.rng_seed);
    pursuer_rng.set_stream(0xF0);

    for episode in 0..train_cfg.episodes {
        let eps = if train_cfg.episodes > 1 {
            let frac = episode as f64 / (train_cfg.episodes - 1) as f64;
            train_cfg.epsilon * (1.0 - 0.9 * frac)
        } else {
            train_cfg.epsilon
        };
        let mut ep_cfg = sim_cfg.clone();
        ep_cfg.rng_seed = seed_rng.next_u64();
        let mut state = traffic_sim::reset(net, &ep_cfg)?;

        // open decision interval per evader: (key, action, reward acc, opened-at step)
        let mut open: Vec<Option<(JointEvaderKey, TurnAction, f64, u32)>> = vec![None; m];
        let mut prev_dist: Vec<f64> = (0..m)
            .map(|i| nearest_pursuer_distance(net, &state, &ep_cfg, (sim_cfg.num_pursuers + i) as u32))
            .collect();

        loop {
            let mut decisions = HashMap::new();
            let mut key_now: Option<JointEvaderKey> = None;
            for id in 0..state.vehicles.len() as u32 {
                if !needs_decision(net, &state, id) {
                    continue;
                }
                let v = &state.vehicles[id as usize];
                let allowed = net.existing_turns(v.lane);
                match v.role {
                    VehicleRole::Pursuer => {
                        decisions.insert(id, allowed[pursuer_rng.gen_range(0..allowed.len())]);
                    }
                    VehicleRole::Evader => {
                        let key = key_now
                            .get_or_insert_with(|| joint_key(net, &state))
                            .clone();
                        let slot = id as usize - sim_cfg.num_pursuers;
                        if let Some((k, a, r, _)) = open[slot].take() {
                            q_update(&mut tables[slot], &k, a, r, &key, train_cfg);
                        }
                        let a = select_action(&tables[slot], &key, &allowed, eps, &mut explore_rng);
                        open[slot] = Some((key, a, 0.0, state.clock));
                        decisions.insert(id, a);
                    }
                    VehicleRole::Background => unreachable!(),
                }
            }

            let step_before = state.clock;
            let (events, done) = traffic_sim::step(net, &ep_cfg, &mut state, &decisions)?;

            for slot in 0..m {
                let id = (sim_cfg.num_pursuers + slot) as u32;
                let captured = events.iter().any(|e| e.evader == id);
                let was_active = state.vehicles[id as usize].active || captured;
                if !was_active {
                    continue;
                }
                let d_now = nearest_pursuer_distance(net, &state, &ep_cfg, id);
                // distance measured in lane lengths so the capture penalty
                // stays the dominant term of the return
                let mut r = EVADER_DISTANCE_WEIGHT * (d_now - prev_dist[slot]) / net.lane_length();
                if captured {
                    r += CAPTURE_PENALTY;
                }
                prev_dist[slot] = d_now;
                if let Some((k, a, acc, opened)) = &mut open[slot] {
                    let elapsed = step_before - *opened;
                    *acc += train_cfg.gamma.powi(elapsed as i32) * r;
                    if captured {
                        let (k, a, acc) = (k.clone(), *a, *acc);
                        q_update_terminal(&mut tables[slot], &k, a, acc, train_cfg);
                        open[slot] = None;
                    }
                }
            }

            if done {
                break;
            }
        }
        metrics.push(PretrainEpisodeMetrics {
            episode,
            steps: state.clock,
            captures: state.captures.len(),
            table_entries: tables.iter().map(|t| t.len()).sum(),
        });
    }
    Ok(PretrainResult { tables, metrics })
}

/// Serializes tables as `key-integers|action|value` lines, the first key
/// integer being the table index, sorted for stable bytes.
pub fn save_qtables(tables: &[QTable]) -> String {
    let mut lines: Vec<String> = Vec::new();
    for (m, tbl) in tables.iter().enumerate() {
        let mut entries: Vec<(&JointEvaderKey, &[f64; 3])> = tbl.map.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        for (key, vals) in entries {
            for a in TurnAction::ALL {
                let v = vals[a.index()];
                if v == 0.0 {
                    continue;
                }
                let mut ints = vec![m.to_string()];
                ints.extend(key.0.iter().map(|k| k.to_string()));
                lines.push(format!("{}|{}|{}", ints.join(" "), a.index(), v));
            }
        }
    }
    let mut out = lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

pub fn load_qtables(text: &str, num_tables: usize) -> Result<Vec<QTable>, QTableError> {
    let mut tables = vec![QTable::new(); num_tables];
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('|');
        let (key_s, act_s, val_s) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(QTableError::Malformed(ln + 1)),
        };
        let mut ints = key_s.split_whitespace();
        let m: usize = ints
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(QTableError::Malformed(ln + 1))?;
        if m >= num_tables {
            return Err(QTableError::TableIndex(ln + 1, m));
        }
        let key: Vec<u8> = ints
            .map(|s| s.parse::<u8>().map_err(|_| QTableError::Malformed(ln + 1)))
            .collect::<Result<_, _>>()?;
        let action = act_s
            .parse::<usize>()
            .ok()
            .and_then(TurnAction::from_index)
            .ok_or(QTableError::Malformed(ln + 1))?;
        let value: f64 = val_s.parse().map_err(|_| QTableError::Malformed(ln + 1))?;
        let key = JointEvaderKey(key);
        let slot = &mut tables[m].entry(&key)[action.index()];
        if *slot != 0.0 {
            return Err(QTableError::Duplicate(ln + 1));
        }
        *slot = value;
    }
    Ok(tables)
}
