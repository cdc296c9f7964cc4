use crate::mdp::{RawAction, SolarObservation};

/// Persistence bid: the previous interval's realised generation ratio, or
/// zero when there was no sun.
pub fn persistence_bid(last_ratio: Option<f64>) -> f64 {
    last_ratio.unwrap_or(0.0).clamp(0.0, 1.0)
}

/// Threshold arbitrage on the latest known price against its moving
/// average: full-power charge below, full-power discharge above, idle on a
/// tie. The solar bid repeats the last realised ratio.
pub fn ema_heuristic_policy(obs: &SolarObservation, ema: f64, last_ratio: Option<f64>) -> RawAction {
    let price = obs.last_price;
    let mode = if price < ema {
        0.0
    } else if price > ema {
        1.0
    } else {
        RawAction::IDLE_MODE
    };
    let sm_frac = if mode == RawAction::IDLE_MODE { 0.0 } else { 1.0 };
    RawAction { solar_frac: persistence_bid(last_ratio), mode, sm_frac, sc_frac: 0.0 }
}
