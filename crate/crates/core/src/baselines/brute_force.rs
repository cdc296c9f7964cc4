use crate::env::{settle_bess, BessCommand, BessState, EnvConfig, EPS_ENERGY};
use crate::{Error, Result};

pub const MAX_STAGES: usize = 8;

/// Per-interval choices: idle, buy at full power, absorb curtailment at full
/// power, sell at full power.
pub fn full_power_actions(cfg: &EnvConfig, curtailed: f64) -> Vec<BessCommand> {
    let p = cfg.p_bat_max;
    let mut absorb = BessCommand::charge(0.0, p);
    absorb.p_sc_actual = p.min(curtailed.max(0.0));
    vec![BessCommand::idle(), BessCommand::charge(p, 0.0), absorb, BessCommand::discharge(p)]
}

/// Exhaustive search over full-power action sequences, settled with the
/// environment's own energy and revenue rules. Sequences that would leave
/// `[e_min, e_max]` are discarded.
pub fn brute_force_schedule(
    prices: &[f64],
    curtailed: &[f64],
    e0: f64,
    e_max: f64,
    d_deg: f64,
    cfg: &EnvConfig,
) -> Result<(Vec<BessCommand>, f64)> {
    if prices.len() > MAX_STAGES {
        return Err(Error::InstanceTooLarge(format!("{} stages, at most {MAX_STAGES}", prices.len())));
    }
    if prices.len() != curtailed.len() {
        return Err(Error::MisalignedSeries(format!(
            "{} prices vs {} curtailment values",
            prices.len(),
            curtailed.len()
        )));
    }
    let mut state = BessState::new(cfg);
    state.e = e0;
    state.e_max = e_max;
    state.d_deg = d_deg;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut path = Vec::with_capacity(prices.len());
    search(prices, curtailed, cfg, &state, 0, 0.0, &mut path, &mut best);
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn search(
    prices: &[f64],
    curtailed: &[f64],
    cfg: &EnvConfig,
    state: &BessState,
    t: usize,
    acc: f64,
    path: &mut Vec<BessCommand>,
    best: &mut (Vec<BessCommand>, f64),
) {
    if t == prices.len() {
        if acc > best.1 {
            *best = (path.clone(), acc);
        }
        return;
    }
    for cmd in full_power_actions(cfg, curtailed[t]) {
        let e = state.e + cmd.energy_delta(cfg);
        if e < cfg.e_min - EPS_ENERGY || e > state.e_max + EPS_ENERGY {
            continue;
        }
        let (revenue, cost) = settle_bess(&cmd, prices[t], state, cfg);
        let mut next = state.clone();
        next.e = e;
        path.push(cmd);
        search(prices, curtailed, cfg, &next, t + 1, acc + revenue - cost, path, best);
        path.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cfg() -> EnvConfig {
        EnvConfig {
            dt_hours: 1.0,
            eta_ch: 1.0,
            eta_dch: 1.0,
            p_bat_max: 1.0,
            e_min: 0.0,
            e_max_initial: 1.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn two_stage_example() {
        let (s, v) = brute_force_schedule(&[10.0, 100.0], &[0.0, 0.0], 0.0, 1.0, 0.0, &unit_cfg()).unwrap();
        assert_eq!(v, 90.0);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn empty_instance_is_worth_nothing() {
        let (s, v) = brute_force_schedule(&[], &[], 0.0, 1.0, 0.0, &unit_cfg()).unwrap();
        assert!(s.is_empty());
        assert_eq!(v, 0.0);
    }

    #[test]
    fn size_guard() {
        let r = brute_force_schedule(&[1.0; 9], &[0.0; 9], 0.0, 1.0, 0.0, &unit_cfg());
        assert!(matches!(r, Err(Error::InstanceTooLarge(_))));
    }
}
