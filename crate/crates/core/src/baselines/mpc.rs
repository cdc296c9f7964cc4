use std::collections::VecDeque;

use super::dp::{perfect_foresight_dp, DpGrid};
use super::heuristic::{ema_heuristic_policy, persistence_bid};
use crate::env::{BessCommand, BessMode, EnvConfig};
use crate::mdp::{MdpEnv, MdpStep, RawAction};
use crate::Result;

/// Realised prices and curtailment of the most recent day.
#[derive(Debug, Clone)]
pub struct MpcHistory {
    day_len: usize,
    prices: VecDeque<f64>,
    curtailed: VecDeque<f64>,
}

impl MpcHistory {
    pub fn new(cfg: &EnvConfig) -> Self {
        let day_len = (24.0 / cfg.dt_hours).round().max(1.0) as usize;
        Self { day_len, prices: VecDeque::with_capacity(day_len), curtailed: VecDeque::with_capacity(day_len) }
    }

    pub fn day_len(&self) -> usize {
        self.day_len
    }

    pub fn record(&mut self, price: f64, curtailed_mw: f64) {
        if self.prices.len() == self.day_len {
            self.prices.pop_front();
            self.curtailed.pop_front();
        }
        self.prices.push_back(price);
        self.curtailed.push_back(curtailed_mw);
    }

    pub fn record_step(&mut self, step: &MdpStep) {
        self.record(step.outcome.price, step.outcome.solar.p_curtailed);
    }

    pub fn has_full_day(&self) -> bool {
        self.prices.len() == self.day_len
    }

    /// Persistence forecast for the next `horizon` intervals: the last price
    /// held flat, curtailment repeating the same time yesterday.
    pub fn forecast(&self, horizon: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.has_full_day() {
            return None;
        }
        let last = *self.prices.back()?;
        let curtailed = (0..horizon).map(|k| self.curtailed[k % self.day_len]).collect();
        Some((vec![last; horizon], curtailed))
    }
}

/// Raw action that executes a scheduled battery command with a given bid.
pub fn raw_action_for(cmd: &BessCommand, solar_frac: f64, cfg: &EnvConfig) -> RawAction {
    let p = cfg.p_bat_max;
    match cmd.mode {
        BessMode::Idle => RawAction { solar_frac, mode: RawAction::IDLE_MODE, sm_frac: 0.0, sc_frac: 0.0 },
        BessMode::Charge => RawAction {
            solar_frac,
            mode: 0.0,
            sm_frac: (cmd.p_sm / p).clamp(0.0, 1.0),
            sc_frac: (cmd.p_sc_planned / p).clamp(0.0, 1.0),
        },
        BessMode::Discharge => {
            RawAction { solar_frac, mode: 1.0, sm_frac: (cmd.p_sm / p).clamp(0.0, 1.0), sc_frac: 0.0 }
        }
    }
}

/// First battery command of the DP plan over a given forecast.
#[allow(clippy::too_many_arguments)]
pub fn plan_first_command(
    prices: &[f64],
    curtailed: &[f64],
    levels: usize,
    e: f64,
    e_max: f64,
    d_deg: f64,
    cfg: &EnvConfig,
) -> Result<BessCommand> {
    let grid = DpGrid::new(cfg.e_min, e_max, levels)?;
    let plan = perfect_foresight_dp(prices, curtailed, &grid, e, d_deg, cfg)?;
    Ok(plan.schedule.first().map_or_else(BessCommand::idle, |s| s.command))
}

/// Receding-horizon step: plan the battery over a persistence forecast,
/// execute the first command, bid solar by persistence. Without a full day
/// of history it falls back to the EMA heuristic.
pub fn rolling_horizon_mpc(history: &MpcHistory, horizon: usize, levels: usize, env: &MdpEnv) -> Result<RawAction> {
    let (solar_obs, _) = env.observe();
    let Some((prices, curtailed)) = history.forecast(horizon) else {
        return Ok(ema_heuristic_policy(&solar_obs, env.ema(), env.last_ratio()));
    };
    let cfg = env.config();
    let b = env.env().bess();
    let cmd = plan_first_command(&prices, &curtailed, levels, b.e, b.e_max, b.d_deg, cfg)?;
    Ok(raw_action_for(&cmd, persistence_bid(env.last_ratio()), cfg))
}
