//! DQN decision-making for the pursuing team: reward shaping, the
//! online/target network pair shared by all pursuers, epsilon-greedy
//! selection over existing turns, and the replay buffer.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn_core::{MixedInput, MlpParams, NnError};
use crate::observation::{visible_evaders, JointObservation};
use crate::road_network::{RoadNetwork, TurnAction};
use crate::traffic_sim::{distance, CaptureEvent, SimState};

/// Default hidden widths of the Q-network.
pub const DQN_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone)]
pub struct RewardConfig {
    /// Weight of the distance-change term.
    pub lambda: f64,
    /// Per-step cost; subtracted every step.
    pub step_cost: f64,
    /// Team reward added on any capture in the step.
    pub task_reward: f64,
    /// Restrict the distance term to the nearest visible evader.
    pub nearest_only: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: 2.0,
            step_cost: 0.2,
            task_reward: 10.0,
            nearest_only: false,
        }
    }
}

/// Per-step pursuer reward: `-lambda * sum(dis_now - dis_prev) - c + task`.
/// The sum runs over evaders visible both before and after the step, so a
/// capture or a vanishing sighting contributes zero; the task term is paid
/// to every pursuer whenever any capture happened this step.
pub fn compute_reward(
    net: &RoadNetwork,
    prev: &SimState,
    now: &SimState,
    pursuer_id: u32,
    events: &[CaptureEvent],
    rcfg: &RewardConfig,
) -> f64 {
    let before = visible_evaders(net, prev, pursuer_id);
    let after = visible_evaders(net, now, pursuer_id);
    let mut deltas: Vec<(f64, f64)> = Vec::new();
    for id in after {
        if before.contains(&id) {
            let d_now = distance(net, now, pursuer_id, id);
            let d_prev = distance(net, prev, pursuer_id, id);
            deltas.push((d_now, d_now - d_prev));
        }
    }
    let dist_term = if rcfg.nearest_only {
        deltas
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(0.0, |(_, d)| *d)
    } else {
        deltas.iter().map(|(_, d)| d).sum()
    };
    let task = if events.is_empty() { 0.0 } else { rcfg.task_reward };
    -rcfg.lambda * dist_term - rcfg.step_cost + task
}

/// One pursuer's decision state: the observation window that feeds the
/// encoder plus the strategy model current when the decision was taken.
#[derive(Debug, Clone)]
pub struct PursuerState {
    /// Oldest-first window of length h; the last entry is the current
    /// joint observation.
    pub window: Vec<Arc<JointObservation>>,
    pub pi_e: Vec<f64>,
}

impl PursuerState {
    pub fn op(&self) -> &Arc<JointObservation> {
        self.window.last().expect("window is never empty")
    }

    /// Width of the assembled network input.
    pub fn assembled_width(&self, net: &RoadNetwork) -> usize {
        self.op().width(net) + self.pi_e.len()
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub s: PursuerState,
    pub action: TurnAction,
    pub reward: f64,
    pub s_next: PursuerState,
    pub terminal: bool,
    /// Pursuer that produced the transition, for instrumentation.
    pub pursuer: u32,
    /// Step at which the action was chosen.
    pub decided_at: u32,
}

/// Online/target Q-network pair shared by every pursuer.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnParams {
    pub online: MlpParams,
    pub target: MlpParams,
    pub sync_period: u32,
    pub steps_since_sync: u32,
}

impl DqnParams {
    pub fn new(input_width: usize, hidden: &[usize], sync_period: u32, rng: &mut ChaCha8Rng) -> DqnParams {
        let mut dims = vec![input_width];
        dims.extend_from_slice(hidden);
        dims.push(TurnAction::ALL.len());
        let online = MlpParams::random(&dims, rng);
        DqnParams {
            target: online.clone(),
            online,
            sync_period,
            steps_since_sync: 0,
        }
    }

    /// Online-network action values for an assembled state.
    pub fn q_values(
        &self,
        op_idx: &[u32],
        op_val: &[f64],
        pi: &[f64],
        boost: Option<&[f64]>,
    ) -> Result<Vec<f64>, NnError> {
        self.online.infer_mixed(
            MixedInput {
                sparse_idx: op_idx,
                sparse_val: op_val,
                tail: pi,
            },
            boost,
        )
    }

    /// Bootstrapped regression target `r + gamma max_a Q'(s', a)`, cut at
    /// terminal transitions.
    #[allow(clippy::too_many_arguments)]
    pub fn q_target(
        &self,
        reward: f64,
        terminal: bool,
        next_op_idx: &[u32],
        next_op_val: &[f64],
        next_pi: &[f64],
        gamma: f64,
        boost_target: Option<&[f64]>,
    ) -> Result<f64, NnError> {
        if terminal {
            return Ok(reward);
        }
        let q = self.target.infer_mixed(
            MixedInput {
                sparse_idx: next_op_idx,
                sparse_val: next_op_val,
                tail: next_pi,
            },
            boost_target,
        )?;
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(reward + gamma * best)
    }

    /// Counts one training step; copies online into target every
    /// `sync_period` steps.
    pub fn target_sync(&mut self) {
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.sync_period {
            self.target = self.online.clone();
            self.steps_since_sync = 0;
        }
    }
}

/// Epsilon-greedy over the turns that exist for the pursuer's lane;
/// greedy ties break toward the lowest action index.
pub fn select_action(
    q: &[f64],
    allowed: &[TurnAction],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> TurnAction {
    assert!(!allowed.is_empty(), "no turns exist for this lane");
    if rng.gen::<f64>() < epsilon {
        return allowed[rng.gen_range(0..allowed.len())];
    }
    let mut best = allowed[0];
    let mut best_q = q[best.index()];
    for &a in &allowed[1..] {
        if q[a.index()] > best_q {
            best = a;
            best_q = q[a.index()];
        }
    }
    best
}

/// Fixed-capacity ring of transitions with uniform batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            write: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
            self.write = (self.write + 1) % self.capacity;
        }
    }

    /// Uniform sample of distinct indices, or None while the buffer holds
    /// fewer than `batch` transitions.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        if self.items.len() < batch {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }
}
