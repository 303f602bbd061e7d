//! End-to-end training orchestration: episode rollouts against the frozen
//! evader strategy, the history pool and strategy encoder, replay storage
//! at decision points, united-loss updates, periodic target syncs,
//! greedy evaluation and metrics.
//!
//! Pursuers act only at intersections, so one stored transition spans the
//! steps between two consecutive decisions of the same pursuer: its
//! reward is the within-interval discounted sum of per-step rewards, and
//! updates run on every step that stored at least one transition. The
//! per-step alternative is available behind `per_step_transitions`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evader_policy::{greedy_action, joint_key, QTable, QTableError};
use crate::loss_core::{
    mi_contrastive, td_loss, united_backward, united_loss, BatchLossReport, CriticParams,
    LossError, MiItem, TdItem, CRITIC_HIDDEN, CRITIC_PROJ,
};
use crate::nn_core::{adam_step, column_sum, AdamState, FirstLayerCols, GradBuf, NnError, Tape};
use crate::observation::{joint_observe_with, JointObservation, LocRecord, ObservationPool};
use crate::opponent_model::{init_strategy, EncoderParams, StrategyModel, DEFAULT_D_PI, ENCODER_HIDDEN};
use crate::pursuer_agent::{
    compute_reward, select_action, DqnParams, PursuerState, ReplayBuffer, RewardConfig,
    Transition, DQN_HIDDEN,
};
use crate::road_network::RoadNetwork;
use crate::traffic_sim::{self, needs_decision, SimConfig, SimError, VehicleRole};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    QTable(#[from] QTableError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// History window length fed to the strategy encoder.
    pub history_len: usize,
    /// Target-network sync period, in training steps.
    pub sync_period: u32,
    pub mi_weight: f64,
    pub replay_capacity: usize,
    pub d_pi: usize,
    pub seed: u64,
    /// Ablation: drop the road-topology block from every observation.
    pub include_adj: bool,
    /// Structural reference: a TD-only update path that never touches the
    /// information term or the critic.
    pub plain_reference: bool,
    /// Record one transition per pursuer per step instead of one per
    /// decision interval.
    pub per_step_transitions: bool,
    /// Keep the per-step op sequence in the result, for instrumentation.
    pub record_ops: bool,
    pub reward: RewardConfig,
    pub encoder_hidden: Vec<usize>,
    pub dqn_hidden: Vec<usize>,
    pub critic_hidden: usize,
    pub critic_proj: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            batch_size: 32,
            learning_rate: 0.001,
            gamma: 0.95,
            epsilon: 0.05,
            history_len: 3,
            sync_period: 200,
            mi_weight: 1.0,
            replay_capacity: 10_000,
            d_pi: DEFAULT_D_PI,
            seed: 7,
            include_adj: true,
            plain_reference: false,
            per_step_transitions: false,
            record_ops: false,
            reward: RewardConfig::default(),
            encoder_hidden: ENCODER_HIDDEN.to_vec(),
            dqn_hidden: DQN_HIDDEN.to_vec(),
            critic_hidden: CRITIC_HIDDEN,
            critic_proj: CRITIC_PROJ,
        }
    }
}

impl TrainConfig {
    fn validate(&self, sim: &SimConfig) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.history_len == 0 {
            return bad("history_len must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad(format!(
                "batch_size {} must be in 1..=replay_capacity {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0,1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0,1]", self.epsilon));
        }
        if self.mi_active() && self.batch_size < 2 {
            return bad("the information term needs batch_size >= 2".into());
        }
        if sim.num_pursuers == 0 || sim.num_evaders == 0 {
            return bad("need at least one pursuer and one evader".into());
        }
        Ok(())
    }

    fn mi_active(&self) -> bool {
        self.mi_weight != 0.0 && !self.plain_reference
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub undiscounted: f64,
    pub discounted: f64,
    pub completion_step: u32,
    pub captures: usize,
    pub l1: f64,
    pub mi: f64,
    pub total_loss: f64,
}

/// Metrics CSV with one row per episode.
pub fn metrics_csv(rows: &[EpisodeMetrics]) -> String {
    let mut out = String::from("episode,undiscounted,discounted,completion_step,captures,l1,mi,total_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.episode,
            r.undiscounted,
            r.discounted,
            r.completion_step,
            r.captures,
            r.l1,
            r.mi,
            r.total_loss
        ));
    }
    out
}

pub struct TrainResult {
    pub encoder: EncoderParams,
    pub dqn: DqnParams,
    pub critic: CriticParams,
    pub metrics: Vec<EpisodeMetrics>,
    /// Per-step joint observations of every episode, kept only when
    /// `record_ops` is set: (episode, step, op).
    pub recorded_ops: Vec<(u32, u32, Arc<JointObservation>)>,
    /// Transitions in storage order when `record_ops` is set.
    pub recorded_transitions: Vec<Transition>,
}

/// Sparse forward/backward engine around the three nets. First-layer
/// columns fed by the static adjacency block are classed as shared ones
/// (their input is identically 1), everything else the observations can
/// touch is tracked.
struct Engine {
    dqn: DqnParams,
    encoder: EncoderParams,
    critic: CriticParams,
    dqn_cols: FirstLayerCols,
    enc_cols: FirstLayerCols,
    critic_op_cols: FirstLayerCols,
    critic_pi_cols: FirstLayerCols,
    adam_online: AdamState,
    adam_encoder: AdamState,
    adam_critic_op: AdamState,
    adam_critic_pi: AdamState,
    sink_online: GradBuf,
    sink_encoder: GradBuf,
    sink_critic_op: GradBuf,
    sink_critic_pi: GradBuf,
    boost_online: Option<Vec<f64>>,
    boost_target: Option<Vec<f64>>,
    boost_encoder: Option<Vec<f64>>,
    boost_critic: Option<Vec<f64>>,
    op_width: usize,
}

fn first_layer_plan(
    net: &RoadNetwork,
    veh_width: usize,
    op_width: usize,
    copies: usize,
    tail: usize,
    include_adj: bool,
) -> FirstLayerCols {
    let mut tracked: Vec<u32> = Vec::new();
    let mut shared: Vec<u32> = Vec::new();
    for k in 0..copies {
        let base = (k * op_width) as u32;
        tracked.extend(base..base + veh_width as u32);
        if include_adj {
            shared.extend(net.adjacency_ones().iter().map(|&a| base + veh_width as u32 + a));
        }
    }
    let input = copies * op_width + tail;
    let tail_base = (copies * op_width) as u32;
    tracked.extend(tail_base..tail_base + tail as u32);
    FirstLayerCols::new(input, tracked, shared)
}

impl Engine {
    fn new(net: &RoadNetwork, sim: &SimConfig, cfg: &TrainConfig) -> Engine {
        let loc_w = LocRecord::width(net.num_lanes());
        let veh_width = loc_w * (sim.num_pursuers + sim.num_evaders);
        let op_width = veh_width + net.num_lanes() * net.num_lanes();
        let h = cfg.history_len;
        let window_width = h * op_width;

        let mut rng_dqn = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_dqn.set_stream(2);
        let mut rng_enc = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_enc.set_stream(3);
        let mut rng_critic = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_critic.set_stream(4);

        let dqn = DqnParams::new(op_width + cfg.d_pi, &cfg.dqn_hidden, cfg.sync_period, &mut rng_dqn);
        let encoder = EncoderParams::with_hidden(window_width, &cfg.encoder_hidden, cfg.d_pi, &mut rng_enc);
        let critic = CriticParams::with_dims(
            window_width,
            cfg.d_pi,
            cfg.critic_hidden,
            cfg.critic_proj,
            &mut rng_critic,
        );

        let dqn_cols = first_layer_plan(net, veh_width, op_width, 1, cfg.d_pi, cfg.include_adj);
        let enc_cols = first_layer_plan(net, veh_width, op_width, h, 0, cfg.include_adj);
        let critic_op_cols = first_layer_plan(net, veh_width, op_width, h, 0, cfg.include_adj);
        let critic_pi_cols = FirstLayerCols::all_tracked(cfg.d_pi);

        let adam_online = AdamState::new(&dqn.online, &dqn_cols);
        let adam_encoder = AdamState::new(&encoder.mlp, &enc_cols);
        let adam_critic_op = AdamState::new(&critic.op_proj, &critic_op_cols);
        let adam_critic_pi = AdamState::new(&critic.pi_proj, &critic_pi_cols);
        let sink_online = GradBuf::new(&dqn.online, &dqn_cols);
        let sink_encoder = GradBuf::new(&encoder.mlp, &enc_cols);
        let sink_critic_op = GradBuf::new(&critic.op_proj, &critic_op_cols);
        let sink_critic_pi = GradBuf::new(&critic.pi_proj, &critic_pi_cols);

        let mut engine = Engine {
            dqn,
            encoder,
            critic,
            dqn_cols,
            enc_cols,
            critic_op_cols,
            critic_pi_cols,
            adam_online,
            adam_encoder,
            adam_critic_op,
            adam_critic_pi,
            sink_online,
            sink_encoder,
            sink_critic_op,
            sink_critic_pi,
            boost_online: None,
            boost_target: None,
            boost_encoder: None,
            boost_critic: None,
            op_width,
        };
        engine.refresh_boosts();
        engine.refresh_target_boost();
        engine
    }

    fn from_artifacts(
        net: &RoadNetwork,
        sim: &SimConfig,
        cfg: &TrainConfig,
        encoder: EncoderParams,
        dqn: DqnParams,
        critic: CriticParams,
    ) -> Engine {
        let mut engine = Engine::new(net, sim, cfg);
        engine.encoder = encoder;
        engine.dqn = dqn;
        engine.critic = critic;
        engine.refresh_boosts();
        engine.refresh_target_boost();
        engine
    }

    fn refresh_boosts(&mut self) {
        let boost = |p: &crate::nn_core::MlpParams, cols: &FirstLayerCols| {
            if cols.shared_ones.is_empty() {
                None
            } else {
                Some(column_sum(p, &cols.shared_ones))
            }
        };
        self.boost_online = boost(&self.dqn.online, &self.dqn_cols);
        self.boost_encoder = boost(&self.encoder.mlp, &self.enc_cols);
        self.boost_critic = boost(&self.critic.op_proj, &self.critic_op_cols);
    }

    fn refresh_target_boost(&mut self) {
        self.boost_target = if self.dqn_cols.shared_ones.is_empty() {
            None
        } else {
            Some(column_sum(&self.dqn.target, &self.dqn_cols.shared_ones))
        };
    }

    /// Scatters a window's vehicle coordinates (adjacency goes through the
    /// boost, never through the sparse part).
    fn scatter_window(&self, window: &[Arc<JointObservation>], idx: &mut Vec<u32>, val: &mut Vec<f64>) {
        idx.clear();
        val.clear();
        for (k, obs) in window.iter().enumerate() {
            let base = (k * self.op_width) as u32;
            idx.extend(obs.veh_idx.iter().map(|i| base + i));
            val.extend_from_slice(&obs.veh_val);
        }
    }

    fn encode_window(&self, window: &[Arc<JointObservation>]) -> Result<StrategyModel, NnError> {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        self.scatter_window(window, &mut idx, &mut val);
        self.encoder.infer(&idx, &val, self.boost_encoder.as_deref())
    }

    fn q_values(&self, s: &PursuerState) -> Result<Vec<f64>, NnError> {
        let op = s.op();
        self.dqn.q_values(&op.veh_idx, &op.veh_val, &s.pi_e, self.boost_online.as_deref())
    }

    /// One united (or TD-only) update on the sampled transitions; returns
    /// the loss report.
    fn update(
        &mut self,
        buffer: &ReplayBuffer,
        idxs: &[usize],
        cfg: &TrainConfig,
    ) -> Result<BatchLossReport, TrainError> {
        self.sink_online.zero();
        self.sink_encoder.zero();

        // re-encode each sampled window with the current encoder
        let mut windows: Vec<(Vec<u32>, Vec<f64>)> = Vec::with_capacity(idxs.len());
        let mut pis: Vec<Vec<f64>> = Vec::with_capacity(idxs.len());
        let mut tapes: Vec<Tape> = Vec::with_capacity(idxs.len());
        for &i in idxs {
            let t = buffer.get(i);
            let mut idx = Vec::new();
            let mut val = Vec::new();
            self.scatter_window(&t.s.window, &mut idx, &mut val);
            let (pi, tape) = self
                .encoder
                .encode(&idx, &val, self.boost_encoder.as_deref())?;
            windows.push((idx, val));
            pis.push(pi.0);
            tapes.push(tape);
        }

        let items: Vec<TdItem> = idxs
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let t = buffer.get(i);
                TdItem {
                    op_idx: &t.s.op().veh_idx,
                    op_val: &t.s.op().veh_val,
                    pi: &pis[k],
                    action: t.action.index(),
                    reward: t.reward,
                    terminal: t.terminal,
                    next_op_idx: &t.s_next.op().veh_idx,
                    next_op_val: &t.s_next.op().veh_val,
                    next_pi: &t.s_next.pi_e,
                }
            })
            .collect();
        let td = td_loss(
            &self.dqn,
            &items,
            cfg.gamma,
            &self.dqn_cols,
            self.boost_online.as_deref(),
            self.boost_target.as_deref(),
            &mut self.sink_online,
        )?;

        let report;
        if cfg.mi_active() {
            self.sink_critic_op.zero();
            self.sink_critic_pi.zero();
            let mi_items: Vec<MiItem> = windows
                .iter()
                .zip(pis.iter())
                .map(|((idx, val), pi)| MiItem {
                    op_idx: idx,
                    op_val: val,
                    pi,
                })
                .collect();
            let mi = mi_contrastive(
                &self.critic,
                &mi_items,
                &self.critic_op_cols,
                &self.critic_pi_cols,
                self.boost_critic.as_deref(),
                &mut self.sink_critic_op,
                &mut self.sink_critic_pi,
            )?;
            // critic ascends the estimate: descend its negation
            negate(&mut self.sink_critic_op);
            negate(&mut self.sink_critic_pi);
            united_backward(
                &self.encoder,
                &self.enc_cols,
                &tapes,
                &td.grad_pi,
                Some(&mi.grad_pi),
                cfg.mi_weight,
                &mut self.sink_encoder,
            );
            report = united_loss(
                td.l1,
                mi.estimate,
                cfg.mi_weight,
                self.sink_online.norm(&self.dqn_cols),
                self.sink_encoder.norm(&self.enc_cols),
                self.sink_critic_op.norm(&self.critic_op_cols),
            );
            adam_step(
                &mut self.critic.op_proj,
                &mut self.adam_critic_op,
                &self.critic_op_cols,
                &self.sink_critic_op,
                cfg.learning_rate,
            );
            adam_step(
                &mut self.critic.pi_proj,
                &mut self.adam_critic_pi,
                &self.critic_pi_cols,
                &self.sink_critic_pi,
                cfg.learning_rate,
            );
        } else {
            united_backward(
                &self.encoder,
                &self.enc_cols,
                &tapes,
                &td.grad_pi,
                None,
                0.0,
                &mut self.sink_encoder,
            );
            report = united_loss(
                td.l1,
                0.0,
                cfg.mi_weight,
                self.sink_online.norm(&self.dqn_cols),
                self.sink_encoder.norm(&self.enc_cols),
                0.0,
            );
        }

        adam_step(
            &mut self.dqn.online,
            &mut self.adam_online,
            &self.dqn_cols,
            &self.sink_online,
            cfg.learning_rate,
        );
        adam_step(
            &mut self.encoder.mlp,
            &mut self.adam_encoder,
            &self.enc_cols,
            &self.sink_encoder,
            cfg.learning_rate,
        );
        self.refresh_boosts();
        self.dqn.target_sync();
        if self.dqn.steps_since_sync == 0 {
            self.refresh_target_boost();
        }
        Ok(report)
    }
}

fn negate(g: &mut GradBuf) {
    g.l0_w.iter_mut().for_each(|x| *x = -*x);
    g.l0_delta_sum.iter_mut().for_each(|x| *x = -*x);
    for (w, b) in &mut g.rest {
        w.iter_mut().for_each(|x| *x = -*x);
        b.iter_mut().for_each(|x| *x = -*x);
    }
}

struct OpenInterval {
    state: PursuerState,
    action: crate::road_network::TurnAction,
    acc: f64,
    opened_at: u32,
}

/// Runs the full training process against frozen evader tables.
pub fn train(
    net: &RoadNetwork,
    sim_cfg: &SimConfig,
    cfg: &TrainConfig,
    tables: &[QTable],
) -> Result<TrainResult, TrainError> {
    cfg.validate(sim_cfg)?;
    sim_cfg.validate()?;
    if tables.len() != sim_cfg.num_evaders {
        return Err(TrainError::Config(format!(
            "{} evader tables for {} evaders",
            tables.len(),
            sim_cfg.num_evaders
        )));
    }

    let mut engine = Engine::new(net, sim_cfg, cfg);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut metrics = Vec::with_capacity(cfg.episodes as usize);
    let mut recorded_ops = Vec::new();
    let mut recorded_transitions = Vec::new();

    let mut sim_seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sim_seed_rng.set_stream(1);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    explore_rng.set_stream(5);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_rng.set_stream(6);

    let n = sim_cfg.num_pursuers;
    for episode in 0..cfg.episodes {
        let mut ep_sim = sim_cfg.clone();
        ep_sim.rng_seed = sim_seed_rng.next_u64();
        let mut state = traffic_sim::reset(net, &ep_sim)?;

        let mut pool = ObservationPool::new(cfg.history_len);
        let op0 = Arc::new(joint_observe_with(net, &state, cfg.include_adj));
        if cfg.record_ops {
            recorded_ops.push((episode, 0, Arc::clone(&op0)));
        }
        pool.push(op0);
        let mut pi_cur = init_strategy(cfg.d_pi).0;

        let mut open: Vec<Option<OpenInterval>> = (0..n).map(|_| None).collect();
        let mut last_action = vec![crate::road_network::TurnAction::Straight; n];
        let mut und = 0.0;
        let mut disc = 0.0;
        let mut l1_sum = 0.0;
        let mut mi_sum = 0.0;
        let mut total_sum = 0.0;
        let mut updates = 0u32;
        let completion;

        loop {
            let mut decisions = HashMap::new();
            let mut stored_any = false;
            let mut evader_key: Option<crate::evader_policy::JointEvaderKey> = None;
            let mut per_step_states: Option<Vec<PursuerState>> = None;
            if cfg.per_step_transitions {
                per_step_states = Some(
                    (0..n)
                        .map(|_| PursuerState {
                            window: pool.window(),
                            pi_e: pi_cur.clone(),
                        })
                        .collect(),
                );
            }

            for id in 0..state.vehicles.len() as u32 {
                if !needs_decision(net, &state, id) {
                    continue;
                }
                let (role, lane) = {
                    let v = &state.vehicles[id as usize];
                    (v.role, v.lane)
                };
                let allowed = net.existing_turns(lane);
                match role {
                    VehicleRole::Evader => {
                        let key = evader_key
                            .get_or_insert_with(|| joint_key(net, &state))
                            .clone();
                        let slot = id as usize - n;
                        decisions.insert(id, greedy_action(&tables[slot], &key, &allowed));
                    }
                    VehicleRole::Pursuer => {
                        let s_act = PursuerState {
                            window: pool.window(),
                            pi_e: pi_cur.clone(),
                        };
                        let slot = id as usize;
                        if !cfg.per_step_transitions {
                            if let Some(interval) = open[slot].take() {
                                let t = Transition {
                                    s: interval.state,
                                    action: interval.action,
                                    reward: interval.acc,
                                    s_next: s_act.clone(),
                                    terminal: false,
                                    pursuer: id,
                                    decided_at: interval.opened_at,
                                };
                                if cfg.record_ops {
                                    recorded_transitions.push(t.clone());
                                }
                                buffer.push(t);
                                stored_any = true;
                            }
                        }
                        let q = engine.q_values(&s_act)?;
                        let a = select_action(&q, &allowed, cfg.epsilon, &mut explore_rng);
                        last_action[slot] = a;
                        if !cfg.per_step_transitions {
                            open[slot] = Some(OpenInterval {
                                state: s_act,
                                action: a,
                                acc: 0.0,
                                opened_at: state.clock,
                            });
                        }
                        decisions.insert(id, a);
                    }
                    VehicleRole::Background => unreachable!(),
                }
            }

            let prev = state.clone();
            let (events, done) = traffic_sim::step(net, &ep_sim, &mut state, &decisions)?;

            let mut step_rewards = vec![0.0; n];
            let mut step_reward_sum = 0.0;
            for (slot, r_slot) in step_rewards.iter_mut().enumerate() {
                let r = compute_reward(net, &prev, &state, slot as u32, &events, &cfg.reward);
                *r_slot = r;
                step_reward_sum += r;
                if let Some(interval) = &mut open[slot] {
                    let elapsed = prev.clock - interval.opened_at;
                    interval.acc += cfg.gamma.powi(elapsed as i32) * r;
                }
            }
            let mean_r = step_reward_sum / n as f64;
            und += mean_r;
            disc += cfg.gamma.powi(prev.clock as i32) * mean_r;

            let op_next = Arc::new(joint_observe_with(net, &state, cfg.include_adj));
            if cfg.record_ops {
                recorded_ops.push((episode, state.clock, Arc::clone(&op_next)));
            }
            pool.push(op_next);
            pi_cur = engine.encode_window(&pool.window())?.0;

            if cfg.per_step_transitions {
                let states = per_step_states.take().unwrap();
                let s_next_shared = PursuerState {
                    window: pool.window(),
                    pi_e: pi_cur.clone(),
                };
                for (slot, s) in states.into_iter().enumerate() {
                    let t = Transition {
                        s,
                        action: last_action[slot],
                        reward: step_rewards[slot],
                        s_next: s_next_shared.clone(),
                        terminal: done,
                        pursuer: slot as u32,
                        decided_at: prev.clock,
                    };
                    if cfg.record_ops {
                        recorded_transitions.push(t.clone());
                    }
                    buffer.push(t);
                    stored_any = true;
                }
            } else if done {
                let s_term = PursuerState {
                    window: pool.window(),
                    pi_e: pi_cur.clone(),
                };
                for (slot, slot_open) in open.iter_mut().enumerate() {
                    if let Some(interval) = slot_open.take() {
                        let t = Transition {
                            s: interval.state,
                            action: interval.action,
                            reward: interval.acc,
                            s_next: s_term.clone(),
                            terminal: true,
                            pursuer: slot as u32,
                            decided_at: interval.opened_at,
                        };
                        if cfg.record_ops {
                            recorded_transitions.push(t.clone());
                        }
                        buffer.push(t);
                        stored_any = true;
                    }
                }
            }

            if stored_any {
                if let Some(idxs) = buffer.sample(cfg.batch_size, &mut sample_rng) {
                    let report = engine.update(&buffer, &idxs, cfg)?;
                    l1_sum += report.l1;
                    mi_sum += report.mi;
                    total_sum += report.total;
                    updates += 1;
                }
            }

            if done {
                let all_captured = state.captures.len() == sim_cfg.num_evaders;
                completion = if all_captured {
                    state.clock
                } else {
                    ep_sim.max_steps
                };
                break;
            }
        }

        let denom = updates.max(1) as f64;
        metrics.push(EpisodeMetrics {
            episode,
            undiscounted: und,
            discounted: disc,
            completion_step: completion,
            captures: state.captures.len(),
            l1: l1_sum / denom,
            mi: mi_sum / denom,
            total_loss: total_sum / denom,
        });
    }

    Ok(TrainResult {
        encoder: engine.encoder,
        dqn: engine.dqn,
        critic: engine.critic,
        metrics,
        recorded_ops,
        recorded_transitions,
    })
}

/// Greedy-rollout evaluation of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub seed: u64,
    pub undiscounted: f64,
    pub discounted: f64,
    pub completion_step: u32,
    pub captures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub best_return: f64,
    pub mean_completion: f64,
    pub best_completion: u32,
    pub capture_rate: f64,
    pub rows: Vec<EvalEpisode>,
}

/// Frozen artifacts of a training run.
pub struct RunArtifacts {
    pub encoder: EncoderParams,
    pub dqn: DqnParams,
    pub critic: CriticParams,
    pub tables: Vec<QTable>,
    pub config: BTreeMap<String, String>,
}

#[allow(clippy::too_many_arguments)]
fn eval_episode(
    net: &RoadNetwork,
    sim_cfg: &SimConfig,
    cfg: &TrainConfig,
    engine: &Engine,
    tables: &[QTable],
    seed: u64,
    mut trajectory: Option<&mut Vec<String>>,
) -> Result<EvalEpisode, TrainError> {
    let mut ep_sim = sim_cfg.clone();
    ep_sim.rng_seed = seed;
    let mut state = traffic_sim::reset(net, &ep_sim)?;
    let mut pool = ObservationPool::new(cfg.history_len);
    pool.push(Arc::new(joint_observe_with(net, &state, cfg.include_adj)));
    let mut pi_cur = init_strategy(cfg.d_pi).0;
    let n = sim_cfg.num_pursuers;

    let mut und = 0.0;
    let mut disc = 0.0;
    if let Some(log) = trajectory.as_deref_mut() {
        for v in &state.vehicles {
            log.push(traffic_sim::trajectory_line(&state, v.id));
        }
    }
    loop {
        let mut decisions = HashMap::new();
        let mut evader_key: Option<crate::evader_policy::JointEvaderKey> = None;
        for id in 0..state.vehicles.len() as u32 {
            if !needs_decision(net, &state, id) {
                continue;
            }
            let (role, lane) = {
                let v = &state.vehicles[id as usize];
                (v.role, v.lane)
            };
            let allowed = net.existing_turns(lane);
            match role {
                VehicleRole::Evader => {
                    let key = evader_key
                        .get_or_insert_with(|| joint_key(net, &state))
                        .clone();
                    decisions.insert(id, greedy_action(&tables[id as usize - n], &key, &allowed));
                }
                VehicleRole::Pursuer => {
                    let s = PursuerState {
                        window: pool.window(),
                        pi_e: pi_cur.clone(),
                    };
                    let q = engine.q_values(&s)?;
                    // greedy: argmax over existing turns, lowest index on ties
                    let mut best = allowed[0];
                    for &a in &allowed[1..] {
                        if q[a.index()] > q[best.index()] {
                            best = a;
                        }
                    }
                    decisions.insert(id, best);
                }
                VehicleRole::Background => unreachable!(),
            }
        }
        let prev = state.clone();
        let (events, done) = traffic_sim::step(net, &ep_sim, &mut state, &decisions)?;
        let mut step_sum = 0.0;
        for slot in 0..n {
            step_sum += compute_reward(net, &prev, &state, slot as u32, &events, &cfg.reward);
        }
        let mean_r = step_sum / n as f64;
        und += mean_r;
        disc += cfg.gamma.powi(prev.clock as i32) * mean_r;
        if let Some(log) = trajectory.as_deref_mut() {
            for v in &state.vehicles {
                log.push(traffic_sim::trajectory_line(&state, v.id));
            }
        }
        pool.push(Arc::new(joint_observe_with(net, &state, cfg.include_adj)));
        pi_cur = engine.encode_window(&pool.window())?.0;
        if done {
            let all = state.captures.len() == sim_cfg.num_evaders;
            return Ok(EvalEpisode {
                seed,
                undiscounted: und,
                discounted: disc,
                completion_step: if all { state.clock } else { ep_sim.max_steps },
                captures: state.captures.len(),
            });
        }
    }
}

/// Greedy evaluation over `episodes` seeded rollouts; `workers` > 1 runs
/// episodes in parallel with identical results.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &RoadNetwork,
    sim_cfg: &SimConfig,
    cfg: &TrainConfig,
    artifacts: &RunArtifacts,
    episodes: u32,
    eval_seed: u64,
    workers: usize,
    mut trajectory: Option<&mut Vec<String>>,
) -> Result<EvalSummary, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config("evaluation needs at least one episode".into()));
    }
    if artifacts.tables.len() != sim_cfg.num_evaders {
        return Err(TrainError::Config(format!(
            "{} evader tables for {} evaders",
            artifacts.tables.len(),
            sim_cfg.num_evaders
        )));
    }
    let engine = Engine::from_artifacts(
        net,
        sim_cfg,
        cfg,
        artifacts.encoder.clone(),
        artifacts.dqn.clone(),
        artifacts.critic.clone(),
    );
    let mut seed_rng = ChaCha8Rng::seed_from_u64(eval_seed);
    seed_rng.set_stream(9);
    let seeds: Vec<u64> = (0..episodes).map(|_| seed_rng.next_u64()).collect();

    let rows: Vec<EvalEpisode> = if workers <= 1 || trajectory.is_some() {
        let mut rows = Vec::with_capacity(seeds.len());
        for &s in &seeds {
            rows.push(eval_episode(net, sim_cfg, cfg, &engine, &artifacts.tables, s, trajectory.as_deref_mut())?);
        }
        rows
    } else {
        let chunks: Vec<Vec<u64>> = seeds
            .chunks(seeds.len().div_ceil(workers))
            .map(|c| c.to_vec())
            .collect();
        let mut results: Vec<Vec<EvalEpisode>> = Vec::new();
        std::thread::scope(|scope| -> Result<(), TrainError> {
            let mut handles = Vec::new();
            for chunk in &chunks {
                let engine_ref = &engine;
                let tables = &artifacts.tables;
                handles.push(scope.spawn(move || -> Result<Vec<EvalEpisode>, TrainError> {
                    let mut out = Vec::with_capacity(chunk.len());
                    for &s in chunk {
                        out.push(eval_episode(net, sim_cfg, cfg, engine_ref, tables, s, None)?);
                    }
                    Ok(out)
                }));
            }
            for h in handles {
                results.push(h.join().expect("eval worker panicked")?);
            }
            Ok(())
        })?;
        results.into_iter().flatten().collect()
    };

    let eps = rows.len();
    let mean_return = rows.iter().map(|r| r.undiscounted).sum::<f64>() / eps as f64;
    let best_return = rows.iter().map(|r| r.undiscounted).fold(f64::NEG_INFINITY, f64::max);
    let mean_completion = rows.iter().map(|r| r.completion_step as f64).sum::<f64>() / eps as f64;
    let best_completion = rows.iter().map(|r| r.completion_step).min().unwrap();
    let total_captured: usize = rows.iter().map(|r| r.captures).sum();
    Ok(EvalSummary {
        episodes: eps,
        mean_return,
        best_return,
        mean_completion,
        best_completion,
        capture_rate: total_captured as f64 / (eps * sim_cfg.num_evaders) as f64,
        rows,
    })
}

const DQN_MAGIC: &[u8; 4] = b"DQN1";
const CRITIC_MAGIC: &[u8; 4] = b"CRT1";

pub fn save_dqn(dqn: &DqnParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DQN_MAGIC);
    out.extend_from_slice(&dqn.online.save());
    out.extend_from_slice(&dqn.target.save());
    out.extend_from_slice(&dqn.sync_period.to_le_bytes());
    out.extend_from_slice(&dqn.steps_since_sync.to_le_bytes());
    out
}

pub fn load_dqn(bytes: &[u8]) -> Result<DqnParams, TrainError> {
    let fail = |m: &str| TrainError::Checkpoint(m.to_string());
    if bytes.len() < 4 || &bytes[..4] != DQN_MAGIC {
        return Err(fail("bad q-network magic"));
    }
    let (online, used1) = crate::nn_core::MlpParams::load_prefix(&bytes[4..])
        .map_err(|e| fail(&format!("online net: {}", e)))?;
    let (target, used2) = crate::nn_core::MlpParams::load_prefix(&bytes[4 + used1..])
        .map_err(|e| fail(&format!("target net: {}", e)))?;
    let rest = &bytes[4 + used1 + used2..];
    if rest.len() != 8 {
        return Err(fail("truncated counters"));
    }
    let sync_period = u32::from_le_bytes(rest[..4].try_into().unwrap());
    let steps_since_sync = u32::from_le_bytes(rest[4..].try_into().unwrap());
    Ok(DqnParams {
        online,
        target,
        sync_period,
        steps_since_sync,
    })
}

pub fn save_critic(critic: &CriticParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CRITIC_MAGIC);
    out.extend_from_slice(&critic.op_proj.save());
    out.extend_from_slice(&critic.pi_proj.save());
    out
}

pub fn load_critic(bytes: &[u8]) -> Result<CriticParams, TrainError> {
    let fail = |m: &str| TrainError::Checkpoint(m.to_string());
    if bytes.len() < 4 || &bytes[..4] != CRITIC_MAGIC {
        return Err(fail("bad critic magic"));
    }
    let (op_proj, used) = crate::nn_core::MlpParams::load_prefix(&bytes[4..])
        .map_err(|e| fail(&format!("op projection: {}", e)))?;
    let pi_proj = crate::nn_core::MlpParams::load(&bytes[4 + used..])
        .map_err(|e| fail(&format!("pi projection: {}", e)))?;
    Ok(CriticParams { op_proj, pi_proj })
}

/// Flat `key=value` text, one pair per line; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", ln + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Writes the checkpoint directory layout: encoder.bin, dqn.bin,
/// critic.bin, qtables.txt, config.txt.
pub fn save_run(
    dir: &Path,
    encoder: &EncoderParams,
    dqn: &DqnParams,
    critic: &CriticParams,
    qtables_text: &str,
    config_text: &str,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("encoder.bin"), encoder.mlp.save())?;
    fs::write(dir.join("dqn.bin"), save_dqn(dqn))?;
    fs::write(dir.join("critic.bin"), save_critic(critic))?;
    fs::write(dir.join("qtables.txt"), qtables_text)?;
    fs::write(dir.join("config.txt"), config_text)?;
    Ok(())
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts, TrainError> {
    let read = |name: &str| -> Result<Vec<u8>, TrainError> {
        fs::read(dir.join(name))
            .map_err(|e| TrainError::Checkpoint(format!("{}: {}", name, e)))
    };
    let config_text = String::from_utf8(read("config.txt")?)
        .map_err(|_| TrainError::Checkpoint("config.txt is not utf-8".into()))?;
    let config = parse_key_values(&config_text).map_err(TrainError::Checkpoint)?;
    let num_evaders: usize = config
        .get("evaders")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TrainError::Checkpoint("config.txt lacks an evaders count".into()))?;
    let mlp = crate::nn_core::MlpParams::load(&read("encoder.bin")?)
        .map_err(|e| TrainError::Checkpoint(format!("encoder.bin: {}", e)))?;
    let encoder = EncoderParams {
        d_pi: mlp.output_width(),
        mlp,
    };
    let dqn = load_dqn(&read("dqn.bin")?)?;
    let critic = load_critic(&read("critic.bin")?)?;
    let qtables_text = String::from_utf8(read("qtables.txt")?)
        .map_err(|_| TrainError::Checkpoint("qtables.txt is not utf-8".into()))?;
    let tables = crate::evader_policy::load_qtables(&qtables_text, num_evaders)?;
    Ok(RunArtifacts {
        encoder,
        dqn,
        critic,
        tables,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evader_policy::{pretrain, save_qtables, EvaderTrainConfig};
    use crate::road_network::build_grid;

    fn tiny_setup() -> (RoadNetwork, SimConfig, TrainConfig, Vec<QTable>) {
        let net = build_grid(2, 2, 100.0).unwrap();
        let sim = SimConfig {
            num_pursuers: 2,
            num_evaders: 1,
            num_background: 2,
            max_steps: 40,
            rng_seed: 11,
            ..SimConfig::default()
        };
        let cfg = TrainConfig {
            episodes: 3,
            batch_size: 4,
            replay_capacity: 64,
            sync_period: 5,
            d_pi: 4,
            seed: 21,
            encoder_hidden: vec![8, 8],
            dqn_hidden: vec![8],
            critic_hidden: 6,
            critic_proj: 4,
            ..TrainConfig::default()
        };
        let tables = pretrain(
            &net,
            &sim,
            &EvaderTrainConfig {
                episodes: 5,
                ..EvaderTrainConfig::default()
            },
        )
        .unwrap()
        .tables;
        (net, sim, cfg, tables)
    }

    #[test]
    fn smoke_run_emits_one_metrics_row_per_episode() {
        let (net, sim, mut cfg, tables) = tiny_setup();
        cfg.episodes = 1;
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        assert_eq!(out.metrics.len(), 1);
        let m = &out.metrics[0];
        assert!(m.completion_step <= sim.max_steps);
        assert!(m.l1.is_finite() && m.mi.is_finite() && m.total_loss.is_finite());
        let csv = metrics_csv(&out.metrics);
        assert!(csv.starts_with(
            "episode,undiscounted,discounted,completion_step,captures,l1,mi,total_loss\n"
        ));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn training_is_deterministic() {
        let (net, sim, cfg, tables) = tiny_setup();
        let a = train(&net, &sim, &cfg, &tables).unwrap();
        let b = train(&net, &sim, &cfg, &tables).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.encoder.mlp, b.encoder.mlp);
        assert_eq!(a.dqn.online, b.dqn.online);
        assert_eq!(a.critic, b.critic);
    }

    #[test]
    fn mi_disabled_matches_the_plain_reference_bitwise() {
        let (net, sim, cfg, tables) = tiny_setup();
        let mut no_mi = cfg.clone();
        no_mi.mi_weight = 0.0;
        let mut plain = cfg.clone();
        plain.plain_reference = true;
        let a = train(&net, &sim, &no_mi, &tables).unwrap();
        let b = train(&net, &sim, &plain, &tables).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.dqn.online.save(), b.dqn.online.save());
        assert_eq!(a.dqn.target.save(), b.dqn.target.save());
        assert_eq!(a.encoder.mlp.save(), b.encoder.mlp.save());
        // and the information term genuinely changes training
        let full = train(&net, &sim, &cfg, &tables).unwrap();
        assert_ne!(full.dqn.online.save(), a.dqn.online.save());
        assert!(full.metrics.iter().any(|m| m.mi != 0.0));
        assert!(a.metrics.iter().all(|m| m.mi == 0.0));
    }

    #[test]
    fn stored_transitions_chain_per_pursuer() {
        let (net, sim, mut cfg, tables) = tiny_setup();
        cfg.record_ops = true;
        cfg.episodes = 2;
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        assert!(!out.recorded_transitions.is_empty());
        // within an episode, each pursuer's s_next is the s of its next
        // transition; terminal closes the chain
        let mut last: HashMap<u32, &Transition> = HashMap::new();
        for t in &out.recorded_transitions {
            if let Some(prev) = last.get(&t.pursuer) {
                if !prev.terminal {
                    assert_eq!(prev.s_next.pi_e, t.s.pi_e);
                    for (a, b) in prev.s_next.window.iter().zip(t.s.window.iter()) {
                        assert!(Arc::ptr_eq(a, b));
                    }
                }
            }
            last.insert(t.pursuer, t);
        }
    }

    #[test]
    fn windows_align_with_the_recorded_history() {
        let (net, sim, mut cfg, tables) = tiny_setup();
        cfg.record_ops = true;
        cfg.episodes = 1;
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        let ops: Vec<&Arc<JointObservation>> = out
            .recorded_ops
            .iter()
            .map(|(_, _, op)| op)
            .collect();
        for (i, (_, step, _)) in out.recorded_ops.iter().enumerate() {
            assert_eq!(*step as usize, i);
        }
        for t in &out.recorded_transitions {
            let c = t.decided_at as usize;
            let h = cfg.history_len;
            for (k, got) in t.s.window.iter().enumerate() {
                // oldest-first with repeat-padding at the episode start
                let want = ops[(c + k).saturating_sub(h - 1).min(c)];
                assert!(Arc::ptr_eq(got, want), "step {} slot {}", c, k);
            }
        }
    }

    #[test]
    fn per_step_mode_stores_one_transition_per_pursuer_per_step() {
        let (net, sim, mut cfg, tables) = tiny_setup();
        cfg.per_step_transitions = true;
        cfg.record_ops = true;
        cfg.episodes = 1;
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        let steps = out.recorded_ops.len() - 1; // first op is the reset one
        assert_eq!(
            out.recorded_transitions.len(),
            steps * sim.num_pursuers
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_ordered() {
        let (net, sim, cfg, tables) = tiny_setup();
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        let artifacts = RunArtifacts {
            encoder: out.encoder,
            dqn: out.dqn,
            critic: out.critic,
            tables,
            config: BTreeMap::new(),
        };
        let a = evaluate(&net, &sim, &cfg, &artifacts, 6, 99, 1, None).unwrap();
        let b = evaluate(&net, &sim, &cfg, &artifacts, 6, 99, 1, None).unwrap();
        assert_eq!(a, b);
        let c = evaluate(&net, &sim, &cfg, &artifacts, 6, 99, 3, None).unwrap();
        assert_eq!(a, c, "worker count changed the results");
        assert!(a.best_completion as f64 <= a.mean_completion);
        assert!(a.best_return >= a.mean_return);
        assert!(matches!(
            evaluate(&net, &sim, &cfg, &artifacts, 0, 99, 1, None),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn trajectory_log_covers_every_step_and_vehicle(){
        let (net, sim, cfg, tables) = tiny_setup();
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        let artifacts = RunArtifacts {
            encoder: out.encoder,
            dqn: out.dqn,
            critic: out.critic,
            tables,
            config: BTreeMap::new(),
        };
        let mut log = Vec::new();
        let s = evaluate(&net, &sim, &cfg, &artifacts, 1, 5, 1, Some(&mut log)).unwrap();
        let vehicles = sim.num_vehicles();
        assert_eq!(log.len(), (s.rows[0].completion_step as usize + 1) * vehicles);
    }

    #[test]
    fn run_directory_round_trips() {
        let (net, sim, cfg, tables) = tiny_setup();
        let out = train(&net, &sim, &cfg, &tables).unwrap();
        let dir = std::env::temp_dir().join(format!("pursuit-run-{}", std::process::id()));
        let qt = save_qtables(&tables);
        save_run(
            &dir,
            &out.encoder,
            &out.dqn,
            &out.critic,
            &qt,
            "evaders=1\npursuers=2\n",
        )
        .unwrap();
        let loaded = load_run(&dir).unwrap();
        assert_eq!(loaded.encoder.mlp, out.encoder.mlp);
        assert_eq!(loaded.dqn, out.dqn);
        assert_eq!(loaded.critic, out.critic);
        assert_eq!(loaded.tables, tables);
        assert_eq!(loaded.config.get("pursuers").unwrap(), "2");

        // corrupting any checkpoint surfaces as an error
        let dqn_path = dir.join("dqn.bin");
        let mut bytes = fs::read(&dqn_path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&dqn_path, &bytes).unwrap();
        assert!(matches!(load_run(&dir), Err(TrainError::Checkpoint(_))));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn config_validation_rejects_contradictions() {
        let (net, sim, cfg, tables) = tiny_setup();
        let mut bad = cfg.clone();
        bad.history_len = 0;
        assert!(matches!(
            train(&net, &sim, &bad, &tables),
            Err(TrainError::Config(_))
        ));
        let mut bad = cfg.clone();
        bad.batch_size = 1000;
        bad.replay_capacity = 10;
        assert!(matches!(
            train(&net, &sim, &bad, &tables),
            Err(TrainError::Config(_))
        ));
        let mut bad = cfg;
        bad.batch_size = 1;
        assert!(matches!(
            train(&net, &sim, &bad, &tables),
            Err(TrainError::Config(_))
        ));
        assert!(matches!(
            train(&net, &sim, &TrainConfig::default(), &tables[..0]),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn key_value_parser_round_trips() {
        let text = "# comment\nalpha = 0.1\nseed=7\n\n";
        let kv = parse_key_values(text).unwrap();
        assert_eq!(kv.get("alpha").unwrap(), "0.1");
        assert_eq!(kv.get("seed").unwrap(), "7");
        assert!(parse_key_values("novalue\n").is_err());
    }

#[test]
#[ignore]
fn pilot_seed_study() {
    use std::time::Instant;
    let net = build_grid(3, 3, 200.0).unwrap();
    let sim = SimConfig {
        num_pursuers: 4,
        num_evaders: 2,
        num_background: 10,
        max_steps: 500,
        rng_seed: 5,
        ..SimConfig::default()
    };
    let tables = crate::evader_policy::pretrain(
        &net,
        &sim,
        &crate::evader_policy::EvaderTrainConfig { episodes: 500, ..Default::default() },
    )
    .unwrap()
    .tables;
    eprintln!("[study] pretrain done");
    let mut jobs: Vec<(u64, bool)> = Vec::new();
    for seed in [101u64, 102, 103, 104, 105] {
        jobs.push((seed, true));
        jobs.push((seed, false));
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..2 {
            let jobs = &jobs;
            let next = &next;
            let net = &net;
            let sim = &sim;
            let tables = &tables;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (seed, full) = jobs[i];
                let t0 = Instant::now();
                let cfg = TrainConfig {
                    episodes: 2000,
                    seed,
                    mi_weight: if full { 1.0 } else { 0.0 },
                    ..TrainConfig::default()
                };
                let out = train(net, sim, &cfg, tables).unwrap();
                let train_secs = t0.elapsed().as_secs_f64();
                let artifacts = RunArtifacts {
                    encoder: out.encoder,
                    dqn: out.dqn,
                    critic: out.critic,
                    tables: tables.clone(),
                    config: BTreeMap::new(),
                };
                let t1 = Instant::now();
                let ev = evaluate(net, sim, &cfg, &artifacts, 160, 777, 1, None).unwrap();
                let arm = if full { "full" } else { "nomi" };
                eprintln!(
                    "[study] seed {} {}: mean_completion {:.2} capture_rate {:.3} mean_return {:.2} train {:.0}s eval {:.0}s",
                    seed, arm, ev.mean_completion, ev.capture_rate, ev.mean_return,
                    train_secs, t1.elapsed().as_secs_f64()
                );
                let csv = metrics_csv(&out.metrics);
                std::fs::write(format!("/tmp/study_{}_{}.csv", seed, arm), csv).unwrap();
            });
        }
    });
    eprintln!("[study] done");
}

#[test]
#[ignore]
fn pilot_speed_probe() {
    use std::time::Instant;
    let net = build_grid(3, 3, 200.0).unwrap();
    let sim = SimConfig {
        num_pursuers: 4,
        num_evaders: 2,
        num_background: 10,
        max_steps: 500,
        rng_seed: 5,
        ..SimConfig::default()
    };
    let tables = crate::evader_policy::pretrain(
        &net,
        &sim,
        &crate::evader_policy::EvaderTrainConfig { episodes: 60, ..Default::default() },
    )
    .unwrap()
    .tables;
    let cfg = TrainConfig { episodes: 40, seed: 101, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(&net, &sim, &cfg, &tables).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    eprintln!(
        "[probe] 40 episodes in {:.1}s ({:.2}s/ep), mean completion {:.0}",
        dt,
        dt / 40.0,
        out.metrics.iter().map(|m| m.completion_step as f64).sum::<f64>() / 40.0
    );
}

}
