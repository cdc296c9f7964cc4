//! The two agents' view of the plant: observations, action decoding and
//! rewards.
//!
//! [`MdpEnv`] wraps an [`Env`] and keeps the bits of history the observations
//! need (last price, last solar deviation, EMA price, the last `L`
//! counterfactual curtailment readings).

use std::collections::VecDeque;

use log::warn;

use crate::env::{BessCommand, Env, EnvConfig, StepOutcome, EPS_POWER};
use crate::Result;

/// Price scale used to normalise network inputs, AU$/MWh.
pub const PRICE_SCALE: f64 = 100.0;
/// Multiplier applied to rewards before they enter the replay buffer.
pub const REWARD_SCALE: f64 = 1e-2;

pub const SOLAR_OBS_DIM: usize = 4;
pub const BESS_OBS_DIM: usize = 6;
pub const SOLAR_ACT_DIM: usize = 1;
/// Charge score, discharge score, market fraction, curtailment fraction.
pub const BESS_ACT_DIM: usize = 4;

pub fn hour_index(hour: u8) -> f64 {
    f64::from(hour.min(23)) / 23.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolarObservation {
    pub last_price: f64,
    pub last_actual: f64,
    pub last_deviation: f64,
    pub hour_index: f64,
}

impl SolarObservation {
    pub fn features(&self, cfg: &EnvConfig) -> [f64; SOLAR_OBS_DIM] {
        [
            self.last_price / PRICE_SCALE,
            self.last_actual / cfg.p_solar_max,
            self.last_deviation / cfg.p_solar_max,
            self.hour_index,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BessObservation {
    pub last_price: f64,
    /// Stored energy after the previous interval, MWh.
    pub capacity: f64,
    pub last_deviation: f64,
    pub curtail_count: usize,
    /// Mean curtailed energy over the window, MWh.
    pub curtail_mean: f64,
    pub hour_index: f64,
}

impl BessObservation {
    pub fn features(&self, cfg: &EnvConfig) -> [f64; BESS_OBS_DIM] {
        [
            self.last_price / PRICE_SCALE,
            self.capacity / cfg.e_max_initial,
            self.last_deviation / cfg.p_solar_max,
            self.curtail_count as f64 / cfg.window_l as f64,
            self.curtail_mean / cfg.e_max_initial,
            self.hour_index,
        ]
    }
}

/// Normalised actions of both agents. `mode` below 1/3 charges, above 2/3
/// discharges, anything between idles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawAction {
    pub solar_frac: f64,
    pub mode: f64,
    pub sm_frac: f64,
    pub sc_frac: f64,
}

impl RawAction {
    pub const IDLE_MODE: f64 = 0.5;

    /// Builds the joint action from the two actors' outputs:
    /// `[a_s]` and `[charge score, discharge score, sm, sc]`.
    pub fn from_agent_outputs(solar: &[f64], bess: &[f64]) -> Self {
        Self { solar_frac: solar[0], mode: mode_from_scores(bess[0], bess[1]), sm_frac: bess[2], sc_frac: bess[3] }
    }
}

/// Collapses the charge and discharge scores to one mode value in [0, 1].
pub fn mode_from_scores(charge: f64, discharge: f64) -> f64 {
    (0.5 * (1.0 + discharge - charge)).clamp(0.0, 1.0)
}

/// Inverse of [`mode_from_scores`] for a decided mode, used when a
/// non-learning policy's action is stored for an agent.
pub fn scores_for_mode(mode: f64) -> (f64, f64) {
    let m = mode.clamp(0.0, 1.0);
    if m < 0.5 {
        (1.0 - 2.0 * m, 0.0)
    } else {
        (0.0, 2.0 * m - 1.0)
    }
}

fn clamp_unit(name: &str, v: f64) -> f64 {
    if !(0.0..=1.0).contains(&v) {
        warn!("action component {name}={v} outside [0, 1], clamped");
        if v.is_nan() {
            return 0.0;
        }
    }
    v.clamp(0.0, 1.0)
}

/// Solar bid fraction and the unprojected battery command.
pub fn decode_actions(raw: &RawAction, cfg: &EnvConfig) -> (f64, BessCommand) {
    let solar = clamp_unit("solar_frac", raw.solar_frac);
    let mode = clamp_unit("mode", raw.mode);
    let sm = clamp_unit("sm_frac", raw.sm_frac) * cfg.p_bat_max;
    let sc = clamp_unit("sc_frac", raw.sc_frac) * cfg.p_bat_max;
    let cmd = if mode < 1.0 / 3.0 {
        BessCommand::charge(sm, sc)
    } else if mode > 2.0 / 3.0 {
        BessCommand::discharge(sm)
    } else {
        BessCommand::idle()
    };
    (solar, cmd)
}

/// Exponential moving average of the spot price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceTracker {
    pub ema: Option<f64>,
    pub tau: f64,
}

impl PriceTracker {
    pub fn new(tau: f64) -> Self {
        Self { ema: None, tau }
    }

    pub fn with_ema(ema: f64, tau: f64) -> Self {
        Self { ema: Some(ema), tau }
    }

    /// The first observed price seeds the average.
    pub fn update(&mut self, price: f64) -> f64 {
        let next = match self.ema {
            Some(prev) => self.tau * prev + (1.0 - self.tau) * price,
            None => price,
        };
        self.ema = Some(next);
        next
    }

    pub fn value(&self) -> Option<f64> {
        self.ema
    }
}

pub fn ema_update(tracker: &PriceTracker, price: f64) -> PriceTracker {
    let mut next = *tracker;
    next.update(price);
    next
}

/// Solar farm reward: negative price-weighted gap between the bid fraction and
/// the realised generation ratio. At night the target ratio is 0.
pub fn solar_reward(a_s: f64, p_actual: f64, p_avail: f64, price: f64) -> f64 {
    let ratio = if p_avail < EPS_POWER { 0.0 } else { p_actual / p_avail };
    -price * (a_s - ratio).abs()
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn arbitrage_reward(sm_frac: f64, price: f64, ema: f64, v_ch: f64, v_dch: f64) -> f64 {
    sm_frac * (price - ema).abs() * (sgn(ema - price) * v_ch + sgn(price - ema) * v_dch)
}

pub fn curtailment_reward(p_sc_actual: f64, price: f64, curtail_count: usize, cfg: &EnvConfig) -> f64 {
    cfg.beta * price * (p_sc_actual / cfg.p_bat_max) * (curtail_count as f64 / cfg.window_l as f64)
}

pub fn degradation_reward(d_deg: f64, sm_frac: f64, p_sc_actual: f64, cfg: &EnvConfig) -> f64 {
    d_deg * (sm_frac + p_sc_actual / cfg.p_bat_max).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BessReward {
    pub arbitrage: f64,
    pub curtailment: f64,
    pub degradation: f64,
}

impl BessReward {
    pub fn total(&self) -> f64 {
        bess_reward(self.arbitrage, self.curtailment, self.degradation)
    }
}

pub fn bess_reward(r_sm: f64, r_sc: f64, r_deg: f64) -> f64 {
    r_sm + r_sc - r_deg
}

/// Count of curtailing intervals and mean curtailed energy (MWh) over the
/// window of curtailed powers (MW). Only the last `window_l` entries count.
pub fn curtailment_stats(curtailed_mw: &[f64], window_l: usize, dt_hours: f64) -> (usize, f64) {
    let window = &curtailed_mw[curtailed_mw.len().saturating_sub(window_l)..];
    if window.is_empty() {
        return (0, 0.0);
    }
    let count = window.iter().filter(|&&p| p > EPS_POWER).count();
    let mean = window.iter().map(|p| p * dt_hours).sum::<f64>() / window.len() as f64;
    (count, mean)
}

/// Everything one interval produced for the two agents.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpStep {
    pub outcome: StepOutcome,
    pub solar_reward: f64,
    pub bess_reward: BessReward,
    /// EMA price after this interval.
    pub ema: f64,
}

/// Environment wrapper that tracks the observation history of both agents.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    env: Env,
    tracker: PriceTracker,
    last_price: f64,
    last_actual: f64,
    last_avail: f64,
    last_deviation: f64,
    curtailed: VecDeque<f64>,
}

impl MdpEnv {
    pub fn new(env: Env) -> Self {
        let tau = env.config().ema_tau;
        let first_price = env.data().first().map_or(0.0, |iv| iv.price);
        let mut tracker = PriceTracker::new(tau);
        tracker.update(first_price);
        Self {
            env,
            tracker,
            last_price: first_price,
            last_actual: 0.0,
            last_avail: 0.0,
            last_deviation: 0.0,
            curtailed: VecDeque::new(),
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn config(&self) -> &EnvConfig {
        self.env.config()
    }

    pub fn is_done(&self) -> bool {
        self.env.is_done()
    }

    pub fn ema(&self) -> f64 {
        self.tracker.value().unwrap_or(self.last_price)
    }

    pub fn last_price(&self) -> f64 {
        self.last_price
    }

    /// Realised generation ratio of the previous interval, if it had sun.
    pub fn last_ratio(&self) -> Option<f64> {
        (self.last_avail > EPS_POWER).then(|| self.last_actual / self.last_avail)
    }

    fn current_hour(&self) -> u8 {
        self.env.current().or_else(|| self.env.data().last()).map_or(0, |iv| iv.hour)
    }

    pub fn curtailment_window(&self) -> (usize, f64) {
        let (a, b) = self.curtailed.as_slices();
        let joined: Vec<f64> = a.iter().chain(b).copied().collect();
        let cfg = self.env.config();
        curtailment_stats(&joined, cfg.window_l, cfg.dt_hours)
    }

    pub fn observe(&self) -> (SolarObservation, BessObservation) {
        let h = hour_index(self.current_hour());
        let (count, mean) = self.curtailment_window();
        (
            SolarObservation {
                last_price: self.last_price,
                last_actual: self.last_actual,
                last_deviation: self.last_deviation,
                hour_index: h,
            },
            BessObservation {
                last_price: self.last_price,
                capacity: self.env.bess().e,
                last_deviation: self.last_deviation,
                curtail_count: count,
                curtail_mean: mean,
                hour_index: h,
            },
        )
    }

    pub fn step(&mut self, raw: &RawAction) -> Result<MdpStep> {
        let cfg = self.env.config().clone();
        let (solar_frac, cmd) = decode_actions(raw, &cfg);
        let (count_before, _) = self.curtailment_window();
        let outcome = self.env.step(solar_frac, &cmd)?;
        let ema = self.tracker.update(outcome.price);

        let solar_reward = solar_reward(solar_frac, outcome.solar.p_actual, outcome.solar.p_avail, outcome.price);
        let sm_frac = outcome.bess.p_sm / cfg.p_bat_max;
        let bess_reward = BessReward {
            arbitrage: arbitrage_reward(sm_frac, outcome.price, ema, outcome.bess.v_ch(), outcome.bess.v_dch()),
            curtailment: curtailment_reward(outcome.bess.p_sc_actual, outcome.price, count_before, &cfg),
            degradation: degradation_reward(outcome.d_deg, sm_frac, outcome.bess.p_sc_actual, &cfg),
        };

        self.last_price = outcome.price;
        self.last_actual = outcome.solar.p_actual;
        self.last_avail = outcome.solar.p_avail;
        self.last_deviation = outcome.solar.deviation();
        self.curtailed.push_back(outcome.solar.p_curtailed);
        while self.curtailed.len() > cfg.window_l {
            self.curtailed.pop_front();
        }

        Ok(MdpStep { outcome, solar_reward, bess_reward, ema })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::BessMode;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn ema_examples() {
        let t = ema_update(&PriceTracker::with_ema(100.0, 0.9), 50.0);
        assert_close!(t.ema.unwrap(), 95.0, 1e-12);
        let t = ema_update(&PriceTracker::with_ema(42.0, 0.9), 42.0);
        assert_close!(t.ema.unwrap(), 42.0, 1e-12);
        assert_eq!(cfg().ema_tau, 0.9);
        let mut fresh = PriceTracker::new(0.9);
        assert_eq!(fresh.update(70.0), 70.0);
    }

    #[test]
    fn solar_reward_examples() {
        assert_eq!(solar_reward(0.5, 30.0, 60.0, 100.0), 0.0);
        assert_close!(solar_reward(1.0, 30.0, 60.0, 100.0), -50.0, 1e-9);
        assert_eq!(solar_reward(0.0, 0.0, 0.0, 80.0), 0.0);
        assert_close!(solar_reward(0.3, 0.0, 0.0, 80.0), -24.0, 1e-9);
    }

    #[test]
    fn arbitrage_reward_examples() {
        assert_close!(arbitrage_reward(1.0, 120.0, 100.0, 0.0, 1.0), 20.0, 1e-9);
        assert_close!(arbitrage_reward(1.0, 120.0, 100.0, 1.0, 0.0), -20.0, 1e-9);
        assert_eq!(arbitrage_reward(1.0, 120.0, 100.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn curtailment_and_degradation_rewards() {
        let c = cfg();
        assert_close!(curtailment_reward(5.0, 100.0, 4, &c), 120.0, 1e-9);
        assert_eq!(curtailment_reward(0.0, 100.0, 4, &c), 0.0);
        assert_eq!(curtailment_reward(5.0, 100.0, 0, &c), 0.0);
        assert_eq!(degradation_reward(0.0, 1.0, 5.0, &c), 0.0);
        assert_close!(degradation_reward(0.001, 1.0, 5.0, &c), 0.0015, 1e-12);
        assert_eq!(degradation_reward(0.001, 0.0, 0.0, &c), 0.0);
    }

    #[test]
    fn bess_reward_examples() {
        assert_close!(bess_reward(20.0, 120.0, 0.0015), 139.9985, 1e-9);
        assert_eq!(bess_reward(0.0, 0.0, 0.0), 0.0);
        assert!(bess_reward(arbitrage_reward(1.0, 120.0, 100.0, 1.0, 0.0), 0.0, 0.0) < 0.0);
    }

    #[test]
    fn decode_thresholds() {
        let c = cfg();
        let raw = |mode, sm, sc| RawAction { solar_frac: 0.5, mode, sm_frac: sm, sc_frac: sc };
        let (_, cmd) = decode_actions(&raw(0.1, 0.5, 0.2), &c);
        assert_eq!(cmd.mode, BessMode::Charge);
        assert_close!(cmd.p_sm, 5.0, 1e-12);
        assert_close!(cmd.p_sc_planned, 2.0, 1e-12);
        let (_, cmd) = decode_actions(&raw(0.5, 0.9, 0.9), &c);
        assert_eq!(cmd, BessCommand::idle());
        let (_, cmd) = decode_actions(&raw(0.9, 0.3, 0.7), &c);
        assert_eq!(cmd.mode, BessMode::Discharge);
        assert_eq!(cmd.p_sc_planned, 0.0);
    }

    #[test]
    fn decode_clamps_out_of_range() {
        let (s, cmd) = decode_actions(&RawAction { solar_frac: 1.7, mode: -0.2, sm_frac: 2.0, sc_frac: -1.0 }, &cfg());
        assert_eq!(s, 1.0);
        assert_eq!(cmd.mode, BessMode::Charge);
        assert_eq!(cmd.p_sm, 10.0);
        assert_eq!(cmd.p_sc_planned, 0.0);
    }

    #[test]
    fn mode_scores_round_trip() {
        for m in [0.0, 0.2, 0.5, 0.8, 1.0] {
            let (c, d) = scores_for_mode(m);
            assert_close!(mode_from_scores(c, d), m, 1e-12);
        }
    }

    #[test]
    fn curtailment_stats_examples() {
        assert_eq!(curtailment_stats(&[], 10, 1.0 / 12.0), (0, 0.0));
        let w = [5.0, 0.0, 5.0, 0.0, 0.0, 5.0, 0.0, 5.0, 0.0, 0.0];
        let (f, m) = curtailment_stats(&w, 10, 1.0 / 12.0);
        assert_eq!(f, 4);
        assert_close!(m, 4.0 * 5.0 / 12.0 / 10.0, 1e-12);
        let (f, _) = curtailment_stats(&[1.0; 14], 10, 1.0 / 12.0);
        assert_eq!(f, 10);
    }
}
