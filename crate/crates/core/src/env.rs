//! Physics and settlement of the co-located solar farm and battery.
//!
//! One call to [`Env::step`] runs the whole dispatch pipeline for a 5-minute
//! interval: the solar bid is dispatched against actual generation, the
//! battery command is projected onto its feasible set, the export limit is
//! enforced, the stored energy is updated and all three cash flows (solar
//! revenue, battery arbitrage revenue, degradation cost) are settled.

use std::sync::Arc;

use log::warn;

use crate::degradation::{self, DegradationParams};
use crate::{Error, Result};

/// Power tolerance (MW) for event detection and feasibility comparisons.
pub const EPS_POWER: f64 = 1e-6;
/// Energy tolerance (MWh) for bound checks after floating-point updates.
pub const EPS_ENERGY: f64 = 1e-9;

/// Market and asset constants. Defaults are the plant used throughout the
/// project: 65 MW solar, 10 MW / 9.5 MWh battery, 62.5 % export limit.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dt_hours: f64,
    /// Penalty multiplier on |dispatched - bid|.
    pub alpha: f64,
    /// Export limit as a fraction of installed solar + battery power.
    pub sigma: f64,
    /// Battery cost, AU$/MWh of capacity.
    pub battery_cost: f64,
    pub p_bat_max: f64,
    pub p_solar_max: f64,
    pub e_min: f64,
    pub e_max_initial: f64,
    pub eta_ch: f64,
    pub eta_dch: f64,
    /// Intervals between degradation refreshes.
    pub deg_period: usize,
    pub ema_tau: f64,
    /// Curtailment-absorption incentive factor.
    pub beta: f64,
    /// Curtailment statistics window, in intervals.
    pub window_l: usize,
    pub gamma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt_hours: 5.0 / 60.0,
            alpha: 1.5,
            sigma: 0.625,
            battery_cost: 1.0,
            p_bat_max: 10.0,
            p_solar_max: 65.0,
            e_min: 0.5,
            e_max_initial: 9.5,
            eta_ch: 0.95,
            eta_dch: 0.95,
            deg_period: 2016,
            ema_tau: 0.9,
            beta: 6.0,
            window_l: 10,
            gamma: 0.99,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("dt_hours", self.dt_hours),
            ("alpha", self.alpha),
            ("battery_cost", self.battery_cost),
            ("p_bat_max", self.p_bat_max),
            ("p_solar_max", self.p_solar_max),
            ("e_min", self.e_min),
            ("e_max_initial", self.e_max_initial),
            ("beta", self.beta),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.dt_hours <= 0.0 {
            return Err(Error::config("dt_hours", "must be > 0"));
        }
        if self.e_min >= self.e_max_initial {
            return Err(Error::config("e_min", "must be below e_max_initial"));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::config("sigma", "must lie in (0, 1]"));
        }
        for (key, eta) in [("eta_ch", self.eta_ch), ("eta_dch", self.eta_dch)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::config(key, "must lie in (0, 1]"));
            }
        }
        if !(self.ema_tau > 0.0 && self.ema_tau < 1.0) {
            return Err(Error::config("ema_tau", "must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        if self.deg_period == 0 {
            return Err(Error::config("deg_period", "must be >= 1"));
        }
        if self.window_l == 0 {
            return Err(Error::config("window_l", "must be >= 1"));
        }
        Ok(())
    }

    /// Maximum combined solar bid + battery power, MW.
    pub fn export_cap(&self) -> f64 {
        self.sigma * (self.p_solar_max + self.p_bat_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolarDispatch {
    pub p_bid: f64,
    pub p_actual: f64,
    pub p_avail: f64,
    pub p_dispatched: f64,
    pub p_curtailed: f64,
}

impl SolarDispatch {
    /// Dispatch for an absolute bid. The bid is clamped to `[0, p_avail]`.
    pub fn from_bid(p_bid: f64, p_avail: f64, p_actual: f64) -> Self {
        let p_bid = p_bid.clamp(0.0, p_avail);
        Self { p_bid, p_actual, p_avail, p_dispatched: p_actual.min(p_bid), p_curtailed: (p_actual - p_bid).max(0.0) }
    }

    pub fn deviation(&self) -> f64 {
        self.p_actual - self.p_bid
    }
}

pub fn dispatch_solar(bid_fraction: f64, p_avail: f64, p_actual: f64) -> SolarDispatch {
    let p_avail = clamp_reading("availability", p_avail);
    let p_actual = clamp_reading("actual generation", p_actual);
    let frac = if bid_fraction.is_nan() { 0.0 } else { bid_fraction.clamp(0.0, 1.0) };
    SolarDispatch::from_bid(frac * p_avail, p_avail, p_actual)
}

fn clamp_reading(what: &str, v: f64) -> f64 {
    if v < 0.0 || v.is_nan() {
        warn!("negative {what} reading {v} MW clamped to 0");
        0.0
    } else {
        v
    }
}

pub fn settle_solar(d: &SolarDispatch, price: f64, cfg: &EnvConfig) -> f64 {
    cfg.dt_hours * price * (d.p_dispatched - cfg.alpha * (d.p_dispatched - d.p_bid).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BessMode {
    #[default]
    Idle,
    Charge,
    Discharge,
}

impl BessMode {
    pub fn v_ch(self) -> f64 {
        if self == BessMode::Charge {
            1.0
        } else {
            0.0
        }
    }

    pub fn v_dch(self) -> f64 {
        if self == BessMode::Discharge {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BessMode::Idle => "idle",
            BessMode::Charge => "charge",
            BessMode::Discharge => "discharge",
        }
    }
}

/// Battery command. The mode enum makes charging and discharging mutually
/// exclusive; powers are in MW.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BessCommand {
    pub mode: BessMode,
    /// Market bid power (buy when charging, sell when discharging).
    pub p_sm: f64,
    /// Power the battery plans to draw from onsite curtailment.
    pub p_sc_planned: f64,
    /// Power actually drawn from curtailment, `min(planned, curtailed)`.
    pub p_sc_actual: f64,
}

impl BessCommand {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn charge(p_sm: f64, p_sc_planned: f64) -> Self {
        Self { mode: BessMode::Charge, p_sm, p_sc_planned, p_sc_actual: 0.0 }
    }

    pub fn discharge(p_sm: f64) -> Self {
        Self { mode: BessMode::Discharge, p_sm, ..Self::default() }
    }

    pub fn v_ch(&self) -> f64 {
        self.mode.v_ch()
    }

    pub fn v_dch(&self) -> f64 {
        self.mode.v_dch()
    }

    /// Energy change this command causes over one interval, MWh.
    pub fn energy_delta(&self, cfg: &EnvConfig) -> f64 {
        cfg.dt_hours
            * ((self.v_ch() * cfg.eta_ch - self.v_dch() / cfg.eta_dch) * self.p_sm
                + self.v_ch() * cfg.eta_ch * self.p_sc_actual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BessState {
    pub e: f64,
    pub e_max: f64,
    pub d_deg: f64,
    /// Stored energy samples for the current degradation window.
    pub soc_history: Vec<f64>,
    /// |p_sm + p_sc| * dt accumulated over the current window, MWh.
    pub throughput_window: f64,
    pub window_steps: usize,
}

impl BessState {
    /// Empty battery at full initial capacity, no degradation price yet.
    pub fn new(cfg: &EnvConfig) -> Self {
        Self {
            e: cfg.e_min,
            e_max: cfg.e_max_initial,
            d_deg: 0.0,
            soc_history: vec![cfg.e_min],
            throughput_window: 0.0,
            window_steps: 0,
        }
    }

    /// Closes the current degradation window: counts rainflow cycles, fades
    /// capacity and reprices degradation. Returns the energy (MWh) clipped off
    /// when the stored energy sits above the faded capacity.
    pub fn refresh_degradation(&mut self, cfg: &EnvConfig, params: &DegradationParams) -> f64 {
        let normalized: Vec<f64> = self.soc_history.iter().map(|e| e / cfg.e_max_initial).collect();
        let cycles = degradation::rainflow_cycles(&normalized);
        let hours = self.window_steps as f64 * cfg.dt_hours;
        let k = degradation::aging_coefficient(&cycles, hours, params);
        let e_before = self.e_max;
        let e_after = degradation::update_capacity(e_before, k).max(cfg.e_min);
        self.d_deg = degradation::degradation_coefficient(e_before, e_after, self.throughput_window, cfg.battery_cost);
        self.e_max = e_after;
        let clipped = (self.e - self.e_max).max(0.0);
        self.e -= clipped;
        self.soc_history.clear();
        self.soc_history.push(self.e);
        self.throughput_window = 0.0;
        self.window_steps = 0;
        clipped
    }
}

/// Projects a raw command onto the feasible set for the current state.
///
/// Magnitudes are clamped to `[0, p_bat_max]`, discharge zeroes the
/// curtailment draw, an oversubscribed `p_sm + p_sc_planned` is scaled down
/// proportionally, and finally the energy bounds are enforced (market
/// purchases are cut before curtailment absorption).
pub fn project_bess_action(raw: &BessCommand, state: &BessState, p_curtailed: f64, cfg: &EnvConfig) -> BessCommand {
    let cap = cfg.p_bat_max;
    let clean = |p: f64| if p.is_nan() { 0.0 } else { p.clamp(0.0, cap) };
    let mut cmd =
        BessCommand { mode: raw.mode, p_sm: clean(raw.p_sm), p_sc_planned: clean(raw.p_sc_planned), p_sc_actual: 0.0 };
    match cmd.mode {
        BessMode::Idle => {
            cmd.p_sm = 0.0;
            cmd.p_sc_planned = 0.0;
        }
        BessMode::Discharge => cmd.p_sc_planned = 0.0,
        BessMode::Charge => {}
    }
    let total = cmd.p_sm + cmd.p_sc_planned;
    if total > cap {
        let k = cap / total;
        cmd.p_sm *= k;
        cmd.p_sc_planned *= k;
    }
    cmd.p_sc_actual = cmd.p_sc_planned.min(p_curtailed.max(0.0));

    let dt = cfg.dt_hours;
    match cmd.mode {
        BessMode::Charge => {
            // Largest total charging power that keeps e <= e_max.
            let room = ((state.e_max - state.e).max(0.0)) / (dt * cfg.eta_ch);
            if cmd.p_sm + cmd.p_sc_actual > room {
                let sc = cmd.p_sc_actual.min(room);
                cmd.p_sm = (room - sc).max(0.0);
                if sc < cmd.p_sc_actual {
                    cmd.p_sc_actual = sc;
                    cmd.p_sc_planned = sc;
                }
            }
        }
        BessMode::Discharge => {
            let room = (state.e - cfg.e_min).max(0.0) * cfg.eta_dch / dt;
            cmd.p_sm = cmd.p_sm.min(room);
        }
        BessMode::Idle => {}
    }
    cmd
}

/// Scales the plant's total export `p_bid + p_sm + p_sc_planned` back under
/// `sigma * (P_solar + P_bat)`, cutting curtailment draw first, then the
/// battery market bid, and only then the solar bid.
pub fn enforce_export_limit(p_bid_solar: f64, cmd: &BessCommand, cfg: &EnvConfig) -> (f64, BessCommand) {
    let cap = cfg.export_cap();
    let mut out = *cmd;
    let mut bid = p_bid_solar;
    let mut excess = bid + out.p_sm + out.p_sc_planned - cap;
    if excess <= 0.0 {
        return (bid, out);
    }
    let cut = excess.min(out.p_sc_planned);
    out.p_sc_planned -= cut;
    excess -= cut;
    let cut = excess.min(out.p_sm);
    out.p_sm -= cut;
    excess -= cut;
    if excess > 0.0 {
        bid = (bid - excess).max(0.0);
    }
    out.p_sc_actual = out.p_sc_actual.min(out.p_sc_planned);
    (bid, out)
}

/// Applies a feasible command to the battery and returns the energy change.
pub fn energy_update(state: &mut BessState, cmd: &BessCommand, cfg: &EnvConfig) -> Result<f64> {
    let delta = cmd.energy_delta(cfg);
    let mut e = state.e + delta;
    if e < cfg.e_min - EPS_ENERGY || e > state.e_max + EPS_ENERGY {
        return Err(Error::ContractViolation { energy: e, min: cfg.e_min, max: state.e_max });
    }
    // absorb rounding at the bounds
    e = e.clamp(cfg.e_min.min(state.e), state.e_max.max(state.e));
    let applied = e - state.e;
    state.e = e;
    state.soc_history.push(e);
    state.throughput_window += (cmd.p_sm + cmd.p_sc_actual).abs() * cfg.dt_hours;
    Ok(applied)
}

/// Arbitrage revenue and degradation cost of one interval.
pub fn settle_bess(cmd: &BessCommand, price: f64, state: &BessState, cfg: &EnvConfig) -> (f64, f64) {
    let revenue = cfg.dt_hours * (cmd.v_dch() - cmd.v_ch()) * price * cmd.p_sm;
    let cost = cfg.dt_hours * state.d_deg * (cmd.p_sm + cmd.p_sc_actual).abs();
    (revenue, cost)
}

/// One dispatch interval of input data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub price: f64,
    pub p_avail: f64,
    pub p_actual: f64,
    /// Hour of day, 0..=23.
    pub hour: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub index: usize,
    pub hour: u8,
    pub price: f64,
    pub solar: SolarDispatch,
    pub bess: BessCommand,
    pub delta_e: f64,
    /// Stored energy after the interval (and after any degradation refresh).
    pub e_after: f64,
    pub e_max_after: f64,
    /// Degradation price that settled this interval.
    pub d_deg: f64,
    pub revenue_solar: f64,
    pub revenue_bess: f64,
    pub cost_deg: f64,
    /// Energy removed when a capacity refresh left `e` above the new ceiling.
    pub fade_clip: f64,
    pub curtailment_event: bool,
    pub response_event: bool,
}

impl StepOutcome {
    pub fn total_revenue(&self) -> f64 {
        self.revenue_solar + self.revenue_bess - self.cost_deg
    }
}

/// The co-located plant stepping through a fixed series of intervals.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    deg: DegradationParams,
    data: Arc<[Interval]>,
    t: usize,
    bess: BessState,
}

impl Env {
    pub fn new(cfg: EnvConfig, deg: DegradationParams, data: Arc<[Interval]>) -> Result<Self> {
        cfg.validate()?;
        let bess = BessState::new(&cfg);
        Ok(Self { cfg, deg, data, t: 0, bess })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn degradation_params(&self) -> &DegradationParams {
        &self.deg
    }

    pub fn data(&self) -> &[Interval] {
        &self.data
    }

    pub fn shared_data(&self) -> Arc<[Interval]> {
        Arc::clone(&self.data)
    }

    /// Index of the next interval to be stepped.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn remaining(&self) -> usize {
        self.data.len().saturating_sub(self.t)
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.data.len()
    }

    pub fn bess(&self) -> &BessState {
        &self.bess
    }

    pub fn current(&self) -> Option<&Interval> {
        self.data.get(self.t)
    }

    pub fn reset(&mut self) {
        self.t = 0;
        self.bess = BessState::new(&self.cfg);
    }

    pub fn step(&mut self, solar_bid_fraction: f64, bess_raw: &BessCommand) -> Result<StepOutcome> {
        let iv = *self.data.get(self.t).ok_or(Error::EndOfSeries(self.t))?;
        let cfg = &self.cfg;

        let mut solar = dispatch_solar(solar_bid_fraction, iv.p_avail, iv.p_actual);
        let projected = project_bess_action(bess_raw, &self.bess, solar.p_curtailed, cfg);
        let (bid, mut cmd) = enforce_export_limit(solar.p_bid, &projected, cfg);
        if bid != solar.p_bid {
            solar = SolarDispatch::from_bid(bid, solar.p_avail, solar.p_actual);
        }
        cmd.p_sc_actual = cmd.p_sc_planned.min(solar.p_curtailed);

        let d_deg = self.bess.d_deg;
        let (revenue_bess, cost_deg) = settle_bess(&cmd, iv.price, &self.bess, cfg);
        let delta_e = energy_update(&mut self.bess, &cmd, cfg)?;
        let revenue_solar = settle_solar(&solar, iv.price, cfg);

        let curtailment_event = solar.p_curtailed > EPS_POWER;
        let response_event = curtailment_event && cmd.p_sc_actual > EPS_POWER;

        let index = self.t;
        self.t += 1;
        self.bess.window_steps += 1;
        let fade_clip =
            if self.bess.window_steps >= cfg.deg_period { self.bess.refresh_degradation(cfg, &self.deg) } else { 0.0 };

        Ok(StepOutcome {
            index,
            hour: iv.hour,
            price: iv.price,
            solar,
            bess: cmd,
            delta_e,
            e_after: self.bess.e,
            e_max_after: self.bess.e_max,
            d_deg,
            revenue_solar,
            revenue_bess,
            cost_deg,
            fade_clip,
            curtailment_event,
            response_event,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    fn state_with(e: f64) -> BessState {
        let mut s = BessState::new(&cfg());
        s.e = e;
        s
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
        assert_close!(cfg().export_cap(), 46.875, 1e-12);
    }

    #[test]
    fn invalid_config_names_the_key() {
        let bad = EnvConfig { sigma: 1.5, ..cfg() };
        match bad.validate() {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "sigma"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = EnvConfig { e_min: 10.0, ..cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dispatch_examples() {
        let d = dispatch_solar(0.8, 50.0, 30.0);
        assert_close!(d.p_bid, 40.0, 1e-12);
        assert_eq!((d.p_dispatched, d.p_curtailed), (30.0, 0.0));

        let d = dispatch_solar(0.8, 50.0, 45.0);
        assert_close!(d.p_bid, 40.0, 1e-12);
        assert_close!(d.p_dispatched, 40.0, 1e-12);
        assert_close!(d.p_curtailed, 5.0, 1e-12);

        let d = dispatch_solar(1.0, 0.0, 0.0);
        assert_eq!(d, SolarDispatch::default());
    }

    #[test]
    fn negative_readings_are_clamped() {
        let d = dispatch_solar(0.5, 10.0, -3.0);
        assert_eq!(d.p_actual, 0.0);
        assert_eq!(d.p_curtailed, 0.0);
    }

    #[test]
    fn settle_solar_examples() {
        let c = EnvConfig { dt_hours: 1.0 / 12.0, ..cfg() };
        let d = SolarDispatch::from_bid(40.0, 50.0, 30.0);
        assert_close!(settle_solar(&d, 100.0, &c), 125.0, 1e-9);
        let d = SolarDispatch::from_bid(40.0, 50.0, 40.0);
        assert_close!(settle_solar(&d, 100.0, &c), 4000.0 / 12.0, 1e-9);
        assert_close!(settle_solar(&d, -50.0, &c), -166.666_666_666_7, 1e-9);
    }

    #[test]
    fn projection_empties_nothing_from_an_empty_battery() {
        let c = cfg();
        let cmd = project_bess_action(&BessCommand::discharge(10.0), &state_with(c.e_min), 0.0, &c);
        assert_eq!(cmd.p_sm, 0.0);
    }

    #[test]
    fn projection_scales_oversubscribed_charge() {
        let c = cfg();
        let cmd = project_bess_action(&BessCommand::charge(8.0, 8.0), &state_with(2.0), 100.0, &c);
        assert_close!(cmd.p_sm, 5.0, 1e-12);
        assert_close!(cmd.p_sc_planned, 5.0, 1e-12);
        assert_close!(cmd.p_sc_actual, 5.0, 1e-12);
    }

    #[test]
    fn projection_respects_headroom() {
        let c = cfg();
        let s = state_with(c.e_max_initial - 0.5);
        let cmd = project_bess_action(&BessCommand::charge(10.0, 0.0), &s, 0.0, &c);
        // 0.5 MWh * 12 / 0.95
        assert_close!(cmd.p_sm, 6.315_789_473_684, 1e-9);
    }

    #[test]
    fn projection_keeps_absorption_before_purchases() {
        let c = cfg();
        let s = state_with(c.e_max_initial - 0.5);
        let cmd = project_bess_action(&BessCommand::charge(5.0, 5.0), &s, 20.0, &c);
        assert_close!(cmd.p_sc_actual, 5.0, 1e-12);
        assert_close!(cmd.p_sm + cmd.p_sc_actual, 0.5 * 12.0 / 0.95, 1e-9);
    }

    #[test]
    fn discharge_forces_zero_absorption() {
        let c = cfg();
        let raw = BessCommand { mode: BessMode::Discharge, p_sm: 3.0, p_sc_planned: 4.0, p_sc_actual: 4.0 };
        let cmd = project_bess_action(&raw, &state_with(5.0), 10.0, &c);
        assert_eq!(cmd.p_sc_planned, 0.0);
        assert_eq!(cmd.p_sc_actual, 0.0);
    }

    #[test]
    fn export_limit_examples() {
        let c = cfg();
        let cmd = BessCommand { p_sc_actual: 5.0, ..BessCommand::charge(5.0, 5.0) };
        let (bid, out) = enforce_export_limit(40.0, &cmd, &c);
        assert_eq!(bid, 40.0);
        assert_close!(out.p_sc_planned, 1.875, 1e-12);
        assert_close!(out.p_sc_actual, 1.875, 1e-12);
        assert_eq!(out.p_sm, 5.0);

        let (bid, out) = enforce_export_limit(30.0, &cmd, &c);
        assert_eq!((bid, out), (30.0, cmd));

        let (bid, out) = enforce_export_limit(46.875, &BessCommand::discharge(10.0), &c);
        assert_eq!(bid, 46.875);
        assert_close!(out.p_sm, 0.0, 1e-12);
    }

    #[test]
    fn export_limit_cuts_solar_last() {
        let c = cfg();
        let (bid, out) = enforce_export_limit(60.0, &BessCommand::charge(3.0, 2.0), &c);
        assert_eq!(out.p_sm + out.p_sc_planned, 0.0);
        assert_close!(bid, 46.875, 1e-12);
    }

    #[test]
    fn energy_update_examples() {
        let c = EnvConfig { dt_hours: 1.0 / 12.0, ..cfg() };
        let mut s = state_with(5.0);
        let d = energy_update(&mut s, &BessCommand::charge(10.0, 0.0), &c).unwrap();
        assert_close!(d, 0.791_666_666_67, 1e-9);
        let mut s = state_with(5.0);
        let d = energy_update(&mut s, &BessCommand::discharge(10.0), &c).unwrap();
        assert_close!(d, -0.877_192_982_46, 1e-9);
        let mut s = state_with(5.0);
        assert_eq!(energy_update(&mut s, &BessCommand::idle(), &c).unwrap(), 0.0);
        assert_eq!(s.soc_history.len(), 2);
    }

    #[test]
    fn energy_update_rejects_infeasible_command() {
        let c = cfg();
        let mut s = state_with(c.e_min);
        let err = energy_update(&mut s, &BessCommand::discharge(10.0), &c).unwrap_err();
        assert!(matches!(err, Error::ContractViolation { .. }));
    }

    #[test]
    fn settle_bess_examples() {
        let c = EnvConfig { dt_hours: 1.0 / 12.0, ..cfg() };
        let s = state_with(5.0);
        let (r, _) = settle_bess(&BessCommand::discharge(10.0), 200.0, &s, &c);
        assert_close!(r, 166.666_666_666_7, 1e-9);
        let (r, _) = settle_bess(&BessCommand::charge(10.0, 0.0), 20.0, &s, &c);
        assert_close!(r, -16.666_666_666_7, 1e-9);
        let mut s = state_with(5.0);
        s.d_deg = 0.001;
        let idle_absorbing = BessCommand { p_sc_actual: 5.0, ..BessCommand::idle() };
        let (r, cost) = settle_bess(&idle_absorbing, 50.0, &s, &c);
        assert_eq!(r, 0.0);
        assert_close!(cost, 0.000_416_666_67, 1e-10);
    }

    fn flat_data(n: usize, iv: Interval) -> Arc<[Interval]> {
        vec![iv; n].into()
    }

    #[test]
    fn zero_actions_settle_to_zero() {
        let data = flat_data(3, Interval { price: 80.0, p_avail: 30.0, p_actual: 20.0, hour: 12 });
        let mut env = Env::new(cfg(), DegradationParams::default(), data).unwrap();
        let out = env.step(0.0, &BessCommand::idle()).unwrap();
        assert_eq!(out.revenue_solar, 0.0);
        assert_eq!(out.revenue_bess, 0.0);
        assert_eq!(out.delta_e, 0.0);
        assert!(out.curtailment_event);
        assert!(!out.response_event);
    }

    #[test]
    fn charging_through_curtailment_is_a_response() {
        let data = flat_data(2, Interval { price: 40.0, p_avail: 30.0, p_actual: 30.0, hour: 12 });
        let mut env = Env::new(cfg(), DegradationParams::default(), data).unwrap();
        let out = env.step(0.0, &BessCommand::charge(0.0, 10.0)).unwrap();
        assert!(out.curtailment_event && out.response_event);
        assert_close!(out.bess.p_sc_actual, 10.0, 1e-12);
        assert_eq!(out.revenue_bess, 0.0);
    }

    #[test]
    fn end_of_series_is_reported() {
        let data = flat_data(1, Interval { price: 1.0, p_avail: 0.0, p_actual: 0.0, hour: 0 });
        let mut env = Env::new(cfg(), DegradationParams::default(), data).unwrap();
        env.step(0.0, &BessCommand::idle()).unwrap();
        assert!(matches!(env.step(0.0, &BessCommand::idle()), Err(Error::EndOfSeries(1))));
    }

    #[test]
    fn episode_sums_match_accumulated_totals() {
        let data: Arc<[Interval]> = (0..288)
            .map(|i| Interval {
                price: 30.0 + (i % 37) as f64 * 4.0,
                p_avail: 40.0,
                p_actual: 25.0 + (i % 11) as f64,
                hour: (i / 12) as u8,
            })
            .collect();
        let mut env = Env::new(cfg(), DegradationParams::default(), data).unwrap();
        let (mut rs, mut rb, mut cd, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..288 {
            let cmd = match i % 3 {
                0 => BessCommand::charge(4.0, 4.0),
                1 => BessCommand::discharge(6.0),
                _ => BessCommand::idle(),
            };
            let o = env.step(0.7, &cmd).unwrap();
            rs += o.revenue_solar;
            rb += o.revenue_bess;
            cd += o.cost_deg;
            total += o.total_revenue();
        }
        assert_close!(total, rs + rb - cd, 1e-9);
    }

    #[test]
    fn degradation_refresh_fades_capacity() {
        let c = EnvConfig { deg_period: 24, ..cfg() };
        let data = flat_data(48, Interval { price: 50.0, p_avail: 0.0, p_actual: 0.0, hour: 0 });
        let mut env = Env::new(c.clone(), DegradationParams::default(), data).unwrap();
        for i in 0..48 {
            let cmd = if (i / 6) % 2 == 0 { BessCommand::charge(10.0, 0.0) } else { BessCommand::discharge(10.0) };
            env.step(0.0, &cmd).unwrap();
        }
        assert!(env.bess().e_max < c.e_max_initial);
        assert!(env.bess().d_deg > 0.0);
    }
}
