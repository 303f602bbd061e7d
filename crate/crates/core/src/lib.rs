//! Team-vs-team multi-vehicle pursuit laboratory.
//!
//! A grid urban-traffic world where a team of Q-learning evaders plays
//! against a team of DQN pursuers whose state is augmented with a learned
//! model of the evading team's joint strategy, trained by a TD loss united
//! with a mutual-information term.

pub mod evader_policy;
pub mod gradcheck;
pub mod loss_core;
pub mod nn_core;
pub mod opponent_model;
pub mod pursuer_agent;
pub mod observation;
pub mod road_network;
pub mod trainer;
pub mod traffic_sim;
