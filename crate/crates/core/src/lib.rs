//! Solar farm + battery (BESS) bidding engine for a real-time electricity
//! spot market.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`] simulates dispatch, settlement, curtailment and the battery
//!   energy balance for one co-located solar-battery plant.
//! * [`degradation`] turns the battery's state-of-charge history into
//!   capacity fade and a per-MWh degradation price.
//! * [`mdp`] builds the two agents' observations and rewards on top of the
//!   environment.
//! * [`autodiff`] and [`acnet`] provide the attention-convolution
//!   actor-critic network and its gradients.
//! * [`ddpg`] trains one network per agent.
//! * [`baselines`] holds the non-learning comparators (EMA heuristic,
//!   perfect-foresight DP, rolling-horizon MPC, brute force).
//! * [`io`] covers CSV ingestion, synthetic data, config files, metrics and
//!   experiment orchestration.

#[cfg(test)]
#[macro_use]
mod test_macros;

pub mod acnet;
pub mod autodiff;
pub mod baselines;
pub mod ddpg;
pub mod degradation;
pub mod env;
mod error;
pub mod io;
pub mod mdp;
pub mod policy;

pub use error::{Error, Result};

pub use acnet::{AcNet, AcNetConfig};
pub use ddpg::{Agent, TrainConfig};
pub use degradation::{CycleRecord, DegradationParams};
pub use env::{BessCommand, BessMode, BessState, Env, EnvConfig, Interval, SolarDispatch, StepOutcome};
pub use io::metrics::Metrics;
pub use mdp::{BessObservation, MdpEnv, PriceTracker, RawAction, SolarObservation};
pub use policy::{Policy, PolicyKind};
