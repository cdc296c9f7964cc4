//! Rainflow-based battery aging.
//!
//! Every `H` intervals the environment feeds the window's SoC samples
//! (normalised by the initial capacity) through [`rainflow_cycles`], turns the
//! cycles into an aging exponent with [`aging_coefficient`], shrinks the
//! usable capacity with [`update_capacity`] and prices the lost capacity per
//! MWh of throughput with [`degradation_coefficient`].

use crate::env::EPS_ENERGY;

/// One extracted cycle. `depth` is a fraction of the initial capacity;
/// `weight` is 0.5 for a half cycle and 1.0 for a full cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub depth: f64,
    pub weight: f64,
}

impl CycleRecord {
    pub fn full(depth: f64) -> Self {
        Self { depth, weight: 1.0 }
    }

    pub fn half(depth: f64) -> Self {
        Self { depth, weight: 0.5 }
    }
}

/// Calendar + power-law cycle aging: `k = k_cal * hours + sum(w * a * depth^b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    pub k_cal_per_hour: f64,
    pub cycle_coeff_a: f64,
    pub cycle_exp_b: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self { k_cal_per_hour: 1e-6, cycle_coeff_a: 5e-4, cycle_exp_b: 2.03 }
    }
}

/// Reduces a series to its reversal points. Repeated samples are collapsed
/// and both endpoints are kept.
pub fn turning_points(series: &[f64]) -> Vec<f64> {
    let mut dedup: Vec<f64> = Vec::with_capacity(series.len());
    for &x in series {
        if dedup.last() != Some(&x) {
            dedup.push(x);
        }
    }
    if dedup.len() < 3 {
        return dedup;
    }
    let mut out = Vec::with_capacity(dedup.len());
    out.push(dedup[0]);
    for w in dedup.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        if (b - a) * (c - b) < 0.0 {
            out.push(b);
        }
    }
    out.push(dedup[dedup.len() - 1]);
    out
}

/// Four-point rainflow counting over the turning points of `soc_series`.
///
/// Closed cycles are emitted as full cycles in the order they close; the
/// residue left on the stack becomes one half cycle per adjacent pair.
pub fn rainflow_cycles(soc_series: &[f64]) -> Vec<CycleRecord> {
    let mut cycles = Vec::new();
    let mut stack: Vec<f64> = Vec::new();
    for x in turning_points(soc_series) {
        stack.push(x);
        while stack.len() >= 4 {
            let n = stack.len();
            let outer_first = (stack[n - 3] - stack[n - 4]).abs();
            let inner = (stack[n - 2] - stack[n - 3]).abs();
            let outer_last = (stack[n - 1] - stack[n - 2]).abs();
            if inner <= outer_first && inner <= outer_last {
                cycles.push(CycleRecord::full(inner));
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        let depth = (w[1] - w[0]).abs();
        if depth > 0.0 {
            cycles.push(CycleRecord::half(depth));
        }
    }
    cycles
}

pub fn aging_coefficient(cycles: &[CycleRecord], elapsed_hours: f64, params: &DegradationParams) -> f64 {
    let cycle_term: f64 =
        cycles.iter().map(|c| c.weight * params.cycle_coeff_a * c.depth.max(0.0).powf(params.cycle_exp_b)).sum();
    (params.k_cal_per_hour * elapsed_hours.max(0.0) + cycle_term).max(0.0)
}

/// Remaining capacity after a window with aging exponent `k_deg`.
pub fn update_capacity(e_max: f64, k_deg: f64) -> f64 {
    e_max * (-k_deg.max(0.0)).exp()
}

/// Price of lost capacity per MWh moved through the battery. Windows without
/// throughput get zero, since no cycling happened in them.
pub fn degradation_coefficient(e_before: f64, e_after: f64, throughput: f64, battery_cost: f64) -> f64 {
    if throughput < EPS_ENERGY {
        return 0.0;
    }
    (battery_cost * (e_before - e_after) / throughput).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depths(cycles: &[CycleRecord], weight: f64) -> Vec<f64> {
        let mut d: Vec<f64> = cycles.iter().filter(|c| c.weight == weight).map(|c| c.depth).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d
    }

    #[test]
    fn constant_series_has_no_cycles() {
        assert!(rainflow_cycles(&[0.4; 10]).is_empty());
        assert!(rainflow_cycles(&[0.4]).is_empty());
    }

    #[test]
    fn monotone_ramp_is_one_half_cycle() {
        let ramp: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let c = rainflow_cycles(&ramp);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].weight, 0.5);
        assert_close!(c[0].depth, 1.0, 1e-12);
    }

    #[test]
    fn hand_counted_sequence() {
        // 0 -> 1 -> 0.2 -> 0.8 -> 0: (0.2, 0.8) closes as a full cycle,
        // residue 0 -> 1 -> 0 leaves two half cycles of depth 1.
        let c = rainflow_cycles(&[0.0, 1.0, 0.2, 0.8, 0.0]);
        let full = depths(&c, 1.0);
        let half = depths(&c, 0.5);
        assert_eq!(full.len(), 1);
        assert_close!(full[0], 0.6, 1e-12);
        assert_eq!(half, vec![1.0, 1.0]);
    }

    #[test]
    fn turning_points_drop_plateaus_and_interior_ramps() {
        let tp = turning_points(&[0.0, 0.5, 0.5, 1.0, 0.7, 0.3, 0.3, 0.6]);
        assert_eq!(tp, vec![0.0, 1.0, 0.3, 0.6]);
    }

    #[test]
    fn aging_examples() {
        let p = DegradationParams { k_cal_per_hour: 1e-6, cycle_coeff_a: 1e-4, cycle_exp_b: 2.0 };
        assert_eq!(aging_coefficient(&[], 0.0, &p), 0.0);
        assert_close!(aging_coefficient(&[], 168.0, &p), 1.68e-4, 1e-15);
        let no_cal = DegradationParams { k_cal_per_hour: 0.0, ..p };
        assert_close!(aging_coefficient(&[CycleRecord::full(1.0)], 0.0, &no_cal), 1e-4, 1e-15);
    }

    #[test]
    fn capacity_update_examples() {
        assert_eq!(update_capacity(9.5, 0.0), 9.5);
        assert_close!(update_capacity(9.5, 0.01), 9.405_473_4, 1e-6);
        let two = update_capacity(update_capacity(9.5, 0.003), 0.007);
        assert_close!(two, update_capacity(9.5, 0.01), 1e-12);
    }

    #[test]
    fn degradation_coefficient_examples() {
        assert_close!(degradation_coefficient(9.5, 9.405, 100.0, 1.0), 9.5e-4, 1e-15);
        assert_eq!(degradation_coefficient(9.5, 9.5, 100.0, 1.0), 0.0);
        assert_eq!(degradation_coefficient(9.5, 9.4, 0.0, 1.0), 0.0);
    }
}
