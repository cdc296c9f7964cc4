use crate::env::{BessCommand, BessMode, EnvConfig, EPS_ENERGY};
use crate::{Error, Result};

/// Evenly spaced stored-energy levels from `e_min` to `e_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGrid {
    levels: Vec<f64>,
}

impl DpGrid {
    pub fn new(e_min: f64, e_max: f64, num_levels: usize) -> Result<Self> {
        if num_levels < 2 {
            return Err(Error::config("dp_levels", format!("need at least 2 levels, got {num_levels}")));
        }
        if !e_min.is_finite() || !e_max.is_finite() || e_max <= e_min {
            return Err(Error::config("dp_levels", format!("empty energy range [{e_min}, {e_max}]")));
        }
        let step = (e_max - e_min) / (num_levels - 1) as f64;
        let mut levels: Vec<f64> = (0..num_levels).map(|i| e_min + step * i as f64).collect();
        levels[num_levels - 1] = e_max;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Highest level not above `e` (the lowest level when `e` is below the
    /// grid).
    pub fn floor_index(&self, e: f64) -> usize {
        self.levels.iter().rposition(|&l| l <= e + EPS_ENERGY).unwrap_or(0)
    }
}

/// One scheduled interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpStep {
    pub command: BessCommand,
    pub e_before: f64,
    pub e_after: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub schedule: Vec<DpStep>,
    pub value: f64,
    /// `values[t][i]`: best value from stage `t` at level `i`; row `T` is zero.
    pub values: Vec<Vec<f64>>,
}

/// Command and reward for moving from `e_from` to `e_to` in one interval,
/// or `None` if the move needs more than the power limit.
pub(crate) fn transition(
    e_from: f64,
    e_to: f64,
    price: f64,
    curtailed: f64,
    d_deg: f64,
    cfg: &EnvConfig,
) -> Option<(BessCommand, f64)> {
    let dt = cfg.dt_hours;
    let cap = cfg.p_bat_max;
    let tol = 1e-12 * cap.max(1.0);
    let delta = e_to - e_from;
    if delta.abs() <= EPS_ENERGY * 1e-3 {
        return Some((BessCommand::idle(), 0.0));
    }
    if delta > 0.0 {
        let p = delta / (dt * cfg.eta_ch);
        if p > cap + tol {
            return None;
        }
        let p = p.min(cap);
        let c = curtailed.max(0.0);
        let (sm, sc) = if price > 0.0 {
            let sc = p.min(c);
            (p - sc, sc)
        } else {
            (p, 0.0)
        };
        let cmd = BessCommand { mode: BessMode::Charge, p_sm: sm, p_sc_planned: sc, p_sc_actual: sc };
        Some((cmd, -dt * price * sm - dt * d_deg * (sm + sc)))
    } else {
        let p = -delta * cfg.eta_dch / dt;
        if p > cap + tol {
            return None;
        }
        let p = p.min(cap);
        Some((BessCommand::discharge(p), dt * price * p - dt * d_deg * p))
    }
}

/// Backward value iteration over the grid with the whole price and
/// curtailment series known. Moves always land exactly on grid levels, so
/// every scheduled command is feasible. The start level is the highest one
/// not above `e0`. Ties prefer the smaller energy change.
pub fn perfect_foresight_dp(
    prices: &[f64],
    curtailed: &[f64],
    grid: &DpGrid,
    e0: f64,
    d_deg: f64,
    cfg: &EnvConfig,
) -> Result<DpSolution> {
    if prices.len() != curtailed.len() {
        return Err(Error::MisalignedSeries(format!(
            "{} prices vs {} curtailment values",
            prices.len(),
            curtailed.len()
        )));
    }
    let n = prices.len();
    let g = grid.len();
    let lv = grid.levels();
    // Reachable level offsets, nearest first.
    let spacing = lv[1] - lv[0];
    let max_move = cfg.p_bat_max * cfg.dt_hours * cfg.eta_ch.max(1.0 / cfg.eta_dch);
    let reach = ((max_move / spacing).ceil() as usize + 1).min(g - 1) as isize;
    let mut offsets: Vec<isize> = vec![0];
    for k in 1..=reach {
        offsets.push(k);
        offsets.push(-k);
    }
    let mut values = vec![vec![0.0; g]; n + 1];
    let mut choice = vec![vec![0usize; g]; n];
    for t in (0..n).rev() {
        for i in 0..g {
            let mut best = f64::NEG_INFINITY;
            let mut best_j = i;
            for &o in &offsets {
                let j = i as isize + o;
                if j < 0 || j >= g as isize {
                    continue;
                }
                let j = j as usize;
                let Some((_, r)) = transition(lv[i], lv[j], prices[t], curtailed[t], d_deg, cfg) else {
                    continue;
                };
                let v = r + values[t + 1][j];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            values[t][i] = best;
            choice[t][i] = best_j;
        }
    }
    let mut i = grid.floor_index(e0);
    let mut schedule = Vec::with_capacity(n);
    for t in 0..n {
        let j = choice[t][i];
        let (command, reward) =
            transition(lv[i], lv[j], prices[t], curtailed[t], d_deg, cfg).expect("chosen transition is feasible");
        schedule.push(DpStep { command, e_before: lv[i], e_after: lv[j], reward });
        i = j;
    }
    let value = if n == 0 { 0.0 } else { values[0][grid.floor_index(e0)] };
    Ok(DpSolution { schedule, value, values })
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
    fn buy_low_sell_high() {
        let cfg = unit_cfg();
        let grid = DpGrid::new(0.0, 1.0, 2).unwrap();
        let s = perfect_foresight_dp(&[10.0, 100.0], &[0.0, 0.0], &grid, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(s.value, 90.0);
        assert_eq!(s.schedule[0].command.mode, BessMode::Charge);
        assert_eq!(s.schedule[1].command.mode, BessMode::Discharge);
    }

    #[test]
    fn flat_prices_earn_nothing() {
        let cfg = unit_cfg();
        let grid = DpGrid::new(0.0, 1.0, 5).unwrap();
        let s = perfect_foresight_dp(&[50.0; 6], &[0.0; 6], &grid, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.schedule.iter().all(|st| st.command.mode == BessMode::Idle));
    }

    #[test]
    fn falling_prices_never_cycle() {
        let cfg = unit_cfg();
        let grid = DpGrid::new(0.0, 1.0, 3).unwrap();
        let s = perfect_foresight_dp(&[90.0, 60.0, 30.0], &[0.0; 3], &grid, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn free_curtailment_is_stored_and_sold() {
        let cfg = unit_cfg();
        let grid = DpGrid::new(0.0, 1.0, 2).unwrap();
        let s = perfect_foresight_dp(&[40.0, 40.0], &[2.0, 0.0], &grid, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(s.value, 40.0);
        assert_eq!(s.schedule[0].command.p_sc_planned, 1.0);
        assert_eq!(s.schedule[0].command.p_sm, 0.0);
    }

    #[test]
    fn empty_series_has_zero_value() {
        let cfg = unit_cfg();
        let grid = DpGrid::new(0.0, 1.0, 2).unwrap();
        let s = perfect_foresight_dp(&[], &[], &grid, 0.0, 0.0, &cfg).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.schedule.is_empty());
    }

    #[test]
    fn bad_grids_are_rejected() {
        assert!(DpGrid::new(0.0, 1.0, 1).is_err());
        assert!(DpGrid::new(1.0, 1.0, 5).is_err());
    }
}
