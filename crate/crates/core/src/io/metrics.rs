use std::fmt::Write as _;

use crate::env::{BessMode, StepOutcome};

/// Aggregates of one evaluation run. Energies are MWh, money AU$.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    pub revenue_solar: f64,
    pub revenue_bess: f64,
    pub cost_deg: f64,
    pub revenue_total: f64,
    pub curtail_events: usize,
    pub response_events: usize,
    pub curtailed_energy: f64,
    pub absorbed_energy: f64,
    /// Market purchases.
    pub charge_energy: f64,
    pub discharge_energy: f64,
    /// Energy-weighted price over all charging (purchases and absorption);
    /// `NaN` when the battery never charged.
    pub mean_charge_price: f64,
    /// Energy-weighted price over discharging; `NaN` when it never did.
    pub mean_discharge_price: f64,
    pub hourly_charge: [f64; 24],
    pub hourly_discharge: [f64; 24],
    pub hourly_absorption: [f64; 24],
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            steps: 0,
            revenue_solar: 0.0,
            revenue_bess: 0.0,
            cost_deg: 0.0,
            revenue_total: 0.0,
            curtail_events: 0,
            response_events: 0,
            curtailed_energy: 0.0,
            absorbed_energy: 0.0,
            charge_energy: 0.0,
            discharge_energy: 0.0,
            mean_charge_price: f64::NAN,
            mean_discharge_price: f64::NAN,
            hourly_charge: [0.0; 24],
            hourly_discharge: [0.0; 24],
            hourly_absorption: [0.0; 24],
        }
    }
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "policy,steps,revenue_solar,revenue_bess,cost_deg,revenue_total,curtail_events,response_events,response_rate,curtailed_energy,absorbed_energy,charge_energy,discharge_energy,mean_charge_price,mean_discharge_price";

    /// Share of curtailment events the battery responded to; 0 without events.
    pub fn response_rate(&self) -> f64 {
        if self.curtail_events == 0 {
            0.0
        } else {
            self.response_events as f64 / self.curtail_events as f64
        }
    }

    pub fn csv_row(&self, policy: &str) -> String {
        format!(
            "{policy},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.steps,
            self.revenue_solar,
            self.revenue_bess,
            self.cost_deg,
            self.revenue_total,
            self.curtail_events,
            self.response_events,
            self.response_rate(),
            self.curtailed_energy,
            self.absorbed_energy,
            self.charge_energy,
            self.discharge_energy,
            self.mean_charge_price,
            self.mean_discharge_price
        )
    }

    pub fn hourly_csv_rows(&self, policy: &str, out: &mut String) {
        for h in 0..24 {
            let _ = writeln!(
                out,
                "{policy},{h},{},{},{}",
                self.hourly_charge[h], self.hourly_discharge[h], self.hourly_absorption[h]
            );
        }
    }
}

pub const HOURLY_CSV_HEADER: &str = "policy,hour,charge_mwh,discharge_mwh,absorbed_mwh";

pub fn summarize_metrics(trace: &[StepOutcome], dt_hours: f64) -> Metrics {
    let mut m = Metrics::default();
    let (mut charge_value, mut charge_total) = (0.0, 0.0);
    let mut discharge_value = 0.0;
    for s in trace {
        m.steps += 1;
        m.revenue_solar += s.revenue_solar;
        m.revenue_bess += s.revenue_bess;
        m.cost_deg += s.cost_deg;
        m.curtail_events += usize::from(s.curtailment_event);
        m.response_events += usize::from(s.response_event);
        m.curtailed_energy += s.solar.p_curtailed * dt_hours;
        let h = usize::from(s.hour).min(23);
        let absorbed = s.bess.p_sc_actual * dt_hours;
        m.absorbed_energy += absorbed;
        m.hourly_absorption[h] += absorbed;
        match s.bess.mode {
            BessMode::Charge => {
                let bought = s.bess.p_sm * dt_hours;
                m.charge_energy += bought;
                m.hourly_charge[h] += bought;
                charge_value += s.price * (bought + absorbed);
                charge_total += bought + absorbed;
            }
            BessMode::Discharge => {
                let sold = s.bess.p_sm * dt_hours;
                m.discharge_energy += sold;
                m.hourly_discharge[h] += sold;
                discharge_value += s.price * sold;
            }
            BessMode::Idle => {}
        }
    }
    m.revenue_total = m.revenue_solar + m.revenue_bess - m.cost_deg;
    if charge_total > 0.0 {
        m.mean_charge_price = charge_value / charge_total;
    }
    if m.discharge_energy > 0.0 {
        m.mean_discharge_price = discharge_value / m.discharge_energy;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BessCommand, SolarDispatch};

    fn outcome(hour: u8, price: f64, bess: BessCommand, curtailed: f64) -> StepOutcome {
        let solar = SolarDispatch::from_bid(10.0, 40.0, 10.0 + curtailed);
        StepOutcome {
            index: 0,
            hour,
            price,
            solar,
            bess,
            delta_e: 0.0,
            e_after: 1.0,
            e_max_after: 9.5,
            d_deg: 0.0,
            revenue_solar: 5.0,
            revenue_bess: 2.0,
            cost_deg: 0.5,
            fade_clip: 0.0,
            curtailment_event: curtailed > 0.0,
            response_event: curtailed > 0.0 && bess.p_sc_actual > 0.0,
        }
    }

    #[test]
    fn empty_trace_is_zero() {
        let m = summarize_metrics(&[], 1.0);
        assert_eq!(m.steps, 0);
        assert_eq!(m.revenue_total, 0.0);
        assert_eq!(m.response_rate(), 0.0);
    }

    #[test]
    fn one_response_in_one_event() {
        let mut cmd = BessCommand::charge(0.0, 3.0);
        cmd.p_sc_actual = 3.0;
        let m = summarize_metrics(&[outcome(12, 20.0, cmd, 5.0)], 1.0);
        assert_eq!(m.curtail_events, 1);
        assert_eq!(m.response_rate(), 1.0);
        assert_eq!(m.absorbed_energy, 3.0);
        assert_eq!(m.mean_charge_price, 20.0);
    }

    #[test]
    fn hourly_buckets_partition_totals() {
        let trace = vec![
            outcome(3, 10.0, BessCommand::charge(4.0, 0.0), 0.0),
            outcome(3, 12.0, BessCommand::charge(2.0, 0.0), 0.0),
            outcome(19, 90.0, BessCommand::discharge(5.0), 0.0),
            outcome(23, 80.0, BessCommand::discharge(1.0), 0.0),
        ];
        let m = summarize_metrics(&trace, 0.5);
        assert_eq!(m.hourly_charge.iter().sum::<f64>(), m.charge_energy);
        assert_eq!(m.hourly_discharge.iter().sum::<f64>(), m.discharge_energy);
        assert_eq!(m.revenue_total, m.revenue_solar + m.revenue_bess - m.cost_deg);
        assert!(m.mean_charge_price < m.mean_discharge_price);
    }
}
