//! Flat key=value run configuration: scene, simulation, training and
//! pretraining settings merged from an optional file, `--set` overrides
//! and the PURSUIT_SEED fallback.

use pursuit_core::evader_policy::EvaderTrainConfig;
use pursuit_core::trainer::{parse_key_values, TrainConfig};
use pursuit_core::traffic_sim::SimConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub rows: usize,
    pub cols: usize,
    pub lane_length: f64,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub evader: EvaderTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rows: 3,
            cols: 3,
            lane_length: 200.0,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            evader: EvaderTrainConfig::default(),
        }
    }
}

pub const KEY_HELP: &str = "\
rows, cols, lane_length                     grid scene
pursuers, evaders, background               team sizes
capture_radius, max_speed, max_accel,       vehicle limits
max_decel, max_steps, dt                    episode length and tick
light_green, light_red, headway             traffic rules
seed                                        master seed (PURSUIT_SEED fallback)
episodes, batch_size, learning_rate,        pursuer training
gamma, epsilon, history_len, sync_period,
mi_weight, replay_capacity, strategy_dim,
include_adj, per_step_transitions
reward_lambda, reward_step_cost,            reward shape
reward_task, reward_nearest_only
evader_episodes, evader_alpha,              evader pretraining
evader_gamma, evader_epsilon";

impl RunConfig {
    /// Applies one key=value pair.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let bad = |k: &str, v: &str| format!("bad value {:?} for key {:?}", v, k);
        macro_rules! parse {
            ($t:ty) => {
                value.parse::<$t>().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "rows" => self.rows = parse!(usize),
            "cols" => self.cols = parse!(usize),
            "lane_length" => self.lane_length = parse!(f64),
            "pursuers" => self.sim.num_pursuers = parse!(usize),
            "evaders" => self.sim.num_evaders = parse!(usize),
            "background" => self.sim.num_background = parse!(usize),
            "capture_radius" => self.sim.capture_radius = parse!(f64),
            "max_speed" => self.sim.v_max = parse!(f64),
            "max_accel" => self.sim.ac_max = parse!(f64),
            "max_decel" => self.sim.de_max = parse!(f64),
            "max_steps" => self.sim.max_steps = parse!(u32),
            "dt" => self.sim.dt = parse!(f64),
            "light_green" => self.sim.light_green = parse!(f64),
            "light_red" => self.sim.light_red = parse!(f64),
            "headway" => self.sim.headway = parse!(f64),
            "seed" => {
                let s = parse!(u64);
                self.sim.rng_seed = s;
                self.train.seed = s;
            }
            "episodes" => self.train.episodes = parse!(u32),
            "batch_size" => self.train.batch_size = parse!(usize),
            "learning_rate" => self.train.learning_rate = parse!(f64),
            "gamma" => self.train.gamma = parse!(f64),
            "epsilon" => self.train.epsilon = parse!(f64),
            "history_len" => self.train.history_len = parse!(usize),
            "sync_period" => self.train.sync_period = parse!(u32),
            "mi_weight" => self.train.mi_weight = parse!(f64),
            "replay_capacity" => self.train.replay_capacity = parse!(usize),
            "strategy_dim" => self.train.d_pi = parse!(usize),
            "include_adj" => self.train.include_adj = parse!(bool),
            "per_step_transitions" => self.train.per_step_transitions = parse!(bool),
            "reward_lambda" => self.train.reward.lambda = parse!(f64),
            "reward_step_cost" => self.train.reward.step_cost = parse!(f64),
            "reward_task" => self.train.reward.task_reward = parse!(f64),
            "reward_nearest_only" => self.train.reward.nearest_only = parse!(bool),
            "evader_episodes" => self.evader.episodes = parse!(u32),
            "evader_alpha" => self.evader.alpha = parse!(f64),
            "evader_gamma" => self.evader.gamma = parse!(f64),
            "evader_epsilon" => self.evader.epsilon = parse!(f64),
            _ => return Err(format!("unknown config key {:?}", key)),
        }
        Ok(())
    }

    /// Merges defaults, an optional config file, `--set` overrides and the
    /// environment seed fallback (applied only when neither the file nor
    /// an override names the seed).
    pub fn from_sources(
        file_text: Option<&str>,
        overrides: &[(String, String)],
        env_seed: Option<u64>,
    ) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        let mut seed_named = false;
        if let Some(text) = file_text {
            for (k, v) in parse_key_values(text)? {
                seed_named |= k == "seed";
                cfg.apply(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            seed_named |= k == "seed";
            cfg.apply(k, v)?;
        }
        if !seed_named {
            if let Some(s) = env_seed {
                cfg.apply("seed", &s.to_string())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rows < 2 || self.cols < 2 {
            return Err(format!("grid {}x{} is too small", self.rows, self.cols));
        }
        if self.lane_length <= 0.0 {
            return Err("lane_length must be positive".into());
        }
        self.sim.validate().map_err(|e| e.to_string())?;
        if self.train.seed != self.sim.rng_seed {
            return Err("inconsistent master seed".into());
        }
        Ok(())
    }

    /// Full resolved configuration as sorted key=value text.
    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("background", self.sim.num_background.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("capture_radius", self.sim.capture_radius.to_string()),
            ("cols", self.cols.to_string()),
            ("dt", self.sim.dt.to_string()),
            ("epsilon", self.train.epsilon.to_string()),
            ("episodes", self.train.episodes.to_string()),
            ("evader_alpha", self.evader.alpha.to_string()),
            ("evader_epsilon", self.evader.epsilon.to_string()),
            ("evader_episodes", self.evader.episodes.to_string()),
            ("evader_gamma", self.evader.gamma.to_string()),
            ("evaders", self.sim.num_evaders.to_string()),
            ("gamma", self.train.gamma.to_string()),
            ("headway", self.sim.headway.to_string()),
            ("history_len", self.train.history_len.to_string()),
            ("include_adj", self.train.include_adj.to_string()),
            ("lane_length", self.lane_length.to_string()),
            ("learning_rate", self.train.learning_rate.to_string()),
            ("light_green", self.sim.light_green.to_string()),
            ("light_red", self.sim.light_red.to_string()),
            ("max_accel", self.sim.ac_max.to_string()),
            ("max_decel", self.sim.de_max.to_string()),
            ("max_speed", self.sim.v_max.to_string()),
            ("max_steps", self.sim.max_steps.to_string()),
            ("mi_weight", self.train.mi_weight.to_string()),
            ("per_step_transitions", self.train.per_step_transitions.to_string()),
            ("pursuers", self.sim.num_pursuers.to_string()),
            ("replay_capacity", self.train.replay_capacity.to_string()),
            ("reward_lambda", self.train.reward.lambda.to_string()),
            ("reward_nearest_only", self.train.reward.nearest_only.to_string()),
            ("reward_step_cost", self.train.reward.step_cost.to_string()),
            ("reward_task", self.train.reward.task_reward.to_string()),
            ("rows", self.rows.to_string()),
            ("seed", self.train.seed.to_string()),
            ("strategy_dim", self.train.d_pi.to_string()),
            ("sync_period", self.train.sync_period.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let again = RunConfig::from_sources(Some(&text), &[], None).unwrap();
        assert_eq!(again.to_text(), text);
    }

    #[test]
    fn overrides_beat_the_file_and_env_is_a_fallback() {
        let file = "seed=5\nepisodes=10\n";
        let cfg = RunConfig::from_sources(
            Some(file),
            &[("seed".into(), "9".into())],
            Some(1234),
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.sim.rng_seed, 9);
        assert_eq!(cfg.train.episodes, 10);

        let cfg = RunConfig::from_sources(Some("episodes=4\n"), &[], Some(1234)).unwrap();
        assert_eq!(cfg.train.seed, 1234);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_sources(Some("nope=1\n"), &[], None).is_err());
        assert!(RunConfig::from_sources(Some("episodes=abc\n"), &[], None).is_err());
        assert!(RunConfig::from_sources(Some("rows=1\n"), &[], None).is_err());
    }
}
