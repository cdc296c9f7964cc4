//! Non-learning comparators and test oracles.

pub mod brute_force;
pub mod dp;
pub mod heuristic;
pub mod mpc;

pub use brute_force::brute_force_schedule;
pub use dp::{perfect_foresight_dp, DpGrid, DpSolution, DpStep};
pub use heuristic::{ema_heuristic_policy, persistence_bid};
pub use mpc::{rolling_horizon_mpc, MpcHistory};
