//! Train, evaluate and report.
//!
//! A report directory holds `metrics.csv` (one row per policy),
//! `hourly.csv` (24-hour energy profiles), `trace.csv` (every interval of
//! every policy), `summary.txt`, `training_log.csv` and `checkpoints/` with
//! one file per trained agent. Reports are built in `<out>.partial` and
//! renamed into place only when complete.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;

use crate::acnet::AcNet;
use crate::ddpg::{train, training_log_csv, AgentSelection, TrainLogRow, Trained};
use crate::env::{Env, Interval};
use crate::io::config::ExperimentConfig;
use crate::io::data::{align, load_market_csv, load_solar_csv};
use crate::io::metrics::{Metrics, HOURLY_CSV_HEADER};
use crate::io::synth::synth_generate;
use crate::mdp::MdpEnv;
use crate::policy::{arbitrage_upper_bound, evaluate, make_policy, AcdrlPolicy, Evaluation, PolicyKind};
use crate::{Error, Result};

type Series = Arc<[Interval]>;

pub const SOLAR_CHECKPOINT: &str = "solar.ckpt";
pub const BESS_CHECKPOINT: &str = "bess.ckpt";

/// Loads the configured CSV files, or generates enough synthetic days for
/// the train and evaluation ranges.
pub fn load_intervals(cfg: &ExperimentConfig) -> Result<Vec<Interval>> {
    match (&cfg.market_csv, &cfg.solar_csv) {
        (Some(m), Some(s)) => {
            let market = load_market_csv(m, cfg.env.dt_hours)?;
            let solar = load_solar_csv(s, cfg.env.dt_hours, cfg.env.p_solar_max)?;
            align(&market, &solar)
        }
        _ => {
            let (market, solar) = synth_generate(cfg.seed, cfg.train_days + cfg.eval_days, &cfg.synth);
            align(&market, &solar)
        }
    }
}

/// Training range followed by the held-out evaluation range.
pub fn split_intervals(cfg: &ExperimentConfig, data: &[Interval]) -> Result<(Series, Series)> {
    let per_day = cfg.intervals_per_day();
    let n_train = cfg.train_days * per_day;
    let n_eval = cfg.eval_days * per_day;
    if data.len() < n_train + n_eval {
        return Err(Error::config(
            "eval_days",
            format!("{} intervals available, {} train + {} eval needed", data.len(), n_train, n_eval),
        ));
    }
    Ok((Arc::from(&data[..n_train]), Arc::from(&data[n_train..n_train + n_eval])))
}

pub fn make_env(cfg: &ExperimentConfig, data: Arc<[Interval]>) -> Result<MdpEnv> {
    Ok(MdpEnv::new(Env::new(cfg.env.clone(), cfg.degradation.clone(), data)?))
}

pub fn train_agents(cfg: &ExperimentConfig, data: Arc<[Interval]>) -> Result<Trained> {
    let started = Instant::now();
    let mut factory = || make_env(cfg, data.clone());
    let trained = train(&mut factory, cfg.net.solar(), cfg.net.bess(), &cfg.train, cfg.agent)?;
    info!("trained {} episodes in {:.1} s", trained.log.len(), started.elapsed().as_secs_f64());
    Ok(trained)
}

pub fn save_checkpoints(dir: &Path, policy: &AcdrlPolicy) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(net) = &policy.solar {
        net.save(&dir.join(SOLAR_CHECKPOINT))?;
    }
    if let Some(net) = &policy.bess {
        net.save(&dir.join(BESS_CHECKPOINT))?;
    }
    Ok(())
}

/// Loads the checkpoints the selection asks for; a missing file is an error.
pub fn load_checkpoints(dir: &Path, selection: AgentSelection) -> Result<AcdrlPolicy> {
    let load = |on: bool, name: &str| -> Result<Option<AcNet>> {
        if !on {
            return Ok(None);
        }
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} not found", path.display())));
        }
        AcNet::load(&path).map(Some)
    };
    Ok(AcdrlPolicy {
        solar: load(selection.solar(), SOLAR_CHECKPOINT)?,
        bess: load(selection.bess(), BESS_CHECKPOINT)?,
    })
}

/// Runs one policy over the evaluation range from a fresh plant.
pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    data: Arc<[Interval]>,
    acdrl: Option<&AcdrlPolicy>,
) -> Result<Evaluation> {
    let env = make_env(cfg, data)?;
    let mut policy = make_policy(kind, &env, acdrl, cfg.seed, cfg.dp_levels, cfg.mpc_horizon)?;
    evaluate(policy.as_mut(), env)
}

/// Trained battery revenue against the best arbitrage revenue on the same
/// prices and curtailment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundCheck {
    pub agent_revenue_bess: f64,
    pub dp_value: f64,
}

impl UpperBoundCheck {
    pub fn holds(&self) -> bool {
        self.agent_revenue_bess <= self.dp_value
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub evaluations: Vec<Evaluation>,
    pub upper_bound: Option<UpperBoundCheck>,
    pub training_log: Vec<TrainLogRow>,
    pub acdrl: Option<AcdrlPolicy>,
}

impl Report {
    pub fn metrics(&self, policy: &str) -> Option<&Metrics> {
        self.evaluations.iter().find(|e| e.policy == policy).map(|e| &e.metrics)
    }
}

pub fn metrics_csv(evals: &[Evaluation]) -> String {
    let mut s = format!("{}\n", Metrics::CSV_HEADER);
    for e in evals {
        s.push_str(&e.metrics.csv_row(e.policy));
        s.push('\n');
    }
    s
}

pub fn hourly_csv(evals: &[Evaluation]) -> String {
    let mut s = format!("{HOURLY_CSV_HEADER}\n");
    for e in evals {
        e.metrics.hourly_csv_rows(e.policy, &mut s);
    }
    s
}

pub const TRACE_CSV_HEADER: &str = "policy,index,hour,price,bid_mw,actual_mw,avail_mw,dispatched_mw,curtailed_mw,mode,p_sm,p_sc_planned,p_sc_actual,e_after,e_max_after,d_deg,revenue_solar,revenue_bess,cost_deg,solar_reward,bess_reward,ema";

pub fn trace_csv(evals: &[Evaluation]) -> String {
    let mut s = format!("{TRACE_CSV_HEADER}\n");
    for e in evals {
        for st in &e.steps {
            let o = &st.outcome;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.policy,
                o.index,
                o.hour,
                o.price,
                o.solar.p_bid,
                o.solar.p_actual,
                o.solar.p_avail,
                o.solar.p_dispatched,
                o.solar.p_curtailed,
                o.bess.mode.as_str(),
                o.bess.p_sm,
                o.bess.p_sc_planned,
                o.bess.p_sc_actual,
                o.e_after,
                o.e_max_after,
                o.d_deg,
                o.revenue_solar,
                o.revenue_bess,
                o.cost_deg,
                st.solar_reward,
                st.bess_reward.total(),
                st.ema
            );
        }
    }
    s
}

pub fn summary_text(cfg: &ExperimentConfig, report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "seed {}  train_days {}  eval_days {}  agent {}",
        cfg.seed, cfg.train_days, cfg.eval_days, cfg.agent
    );
    let _ = writeln!(s);
    for e in &report.evaluations {
        let m = &e.metrics;
        let _ = writeln!(s, "[{}]", e.policy);
        let _ = writeln!(
            s,
            "  revenue_total {:.2} = solar {:.2} + bess {:.2} - degradation {:.2}",
            m.revenue_total, m.revenue_solar, m.revenue_bess, m.cost_deg
        );
        let _ = writeln!(
            s,
            "  curtailment events {}  responses {}  response rate {:.3}",
            m.curtail_events,
            m.response_events,
            m.response_rate()
        );
        let _ = writeln!(
            s,
            "  curtailed {:.3} MWh  absorbed {:.3} MWh  bought {:.3} MWh  sold {:.3} MWh",
            m.curtailed_energy, m.absorbed_energy, m.charge_energy, m.discharge_energy
        );
        let _ = writeln!(
            s,
            "  mean charge price {:.2}  mean discharge price {:.2}",
            m.mean_charge_price, m.mean_discharge_price
        );
    }
    if let Some(ub) = &report.upper_bound {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "arbitrage bound: acdrl revenue_bess {:.2} <= perfect-foresight {:.2}: {}",
            ub.agent_revenue_bess,
            ub.dp_value,
            if ub.holds() { "holds" } else { "VIOLATED" }
        );
    }
    s
}

/// Trains (when `acdrl` is requested) and evaluates every configured policy.
pub fn build_report(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let data = load_intervals(cfg)?;
    let (train_data, eval_data) = split_intervals(cfg, &data)?;
    let (acdrl, training_log) = if cfg.policies.contains(&PolicyKind::Acdrl) {
        let trained = train_agents(cfg, train_data)?;
        (Some(AcdrlPolicy::from_trained(&trained)), trained.log)
    } else {
        (None, Vec::new())
    };
    let mut evaluations = Vec::with_capacity(cfg.policies.len());
    for &kind in &cfg.policies {
        let started = Instant::now();
        let ev = evaluate_policy(cfg, kind, eval_data.clone(), acdrl.as_ref())?;
        info!("{kind}: revenue {:.2} in {:.1} s", ev.metrics.revenue_total, started.elapsed().as_secs_f64());
        evaluations.push(ev);
    }
    let upper_bound = match evaluations.iter().find(|e| e.policy == PolicyKind::Acdrl.as_str()) {
        Some(ev) => Some(UpperBoundCheck {
            agent_revenue_bess: ev.metrics.revenue_bess,
            dp_value: arbitrage_upper_bound(&ev.outcomes(), &cfg.env, cfg.dp_levels)?,
        }),
        None => None,
    };
    Ok(Report { evaluations, upper_bound, training_log, acdrl })
}

/// Writes every report file into `dir`, which must exist.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &Report) -> Result<()> {
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&report.evaluations))?;
    std::fs::write(dir.join("hourly.csv"), hourly_csv(&report.evaluations))?;
    std::fs::write(dir.join("trace.csv"), trace_csv(&report.evaluations))?;
    std::fs::write(dir.join("summary.txt"), summary_text(cfg, report))?;
    if let Some(acdrl) = &report.acdrl {
        std::fs::write(dir.join("training_log.csv"), training_log_csv(&report.training_log))?;
        save_checkpoints(&dir.join("checkpoints"), acdrl)?;
    }
    Ok(())
}

/// Builds `out` through a staging directory: `fill` writes into
/// `<out>.partial`, which replaces `out` on success and is removed on
/// failure.
pub fn write_staged<T>(out: &Path, fill: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let mut staged = out.as_os_str().to_owned();
    staged.push(".partial");
    let staged = PathBuf::from(staged);
    if staged.exists() {
        std::fs::remove_dir_all(&staged)?;
    }
    std::fs::create_dir_all(&staged)?;
    let result = fill(&staged).and_then(|v| {
        if out.exists() {
            std::fs::remove_dir_all(out)?;
        }
        std::fs::rename(&staged, out)?;
        Ok(v)
    });
    if result.is_err() && staged.exists() {
        let _ = std::fs::remove_dir_all(&staged);
    }
    result
}

/// Full pipeline into the report directory `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    write_staged(out, |dir| {
        let report = build_report(cfg)?;
        write_report(dir, cfg, &report)?;
        Ok(report)
    })
}

/// Replaces the file at `path` through a temporary sibling.
pub fn write_file_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig { train_days: 1, eval_days: 1, seed: 5, ..ExperimentConfig::default() };
        cfg.policies = vec![PolicyKind::Ema, PolicyKind::Dp, PolicyKind::Random];
        cfg
    }

    #[test]
    fn split_needs_enough_data() {
        let cfg = small_cfg();
        let data = load_intervals(&cfg).unwrap();
        assert_eq!(data.len(), 576);
        let (a, b) = split_intervals(&cfg, &data).unwrap();
        assert_eq!((a.len(), b.len()), (288, 288));
        assert!(split_intervals(&cfg, &data[..500]).is_err());
    }

    #[test]
    fn report_is_written_and_staging_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("report");
        let report = run_experiment(&small_cfg(), &out).unwrap();
        for f in ["metrics.csv", "hourly.csv", "trace.csv", "summary.txt"] {
            assert!(out.join(f).exists(), "{f}");
        }
        assert!(!tmp.path().join("report.partial").exists());
        let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        for m in report.evaluations.iter().map(|e| &e.metrics) {
            assert!(m.response_events <= m.curtail_events);
            assert_eq!(m.revenue_total, m.revenue_solar + m.revenue_bess - m.cost_deg);
        }
    }

    #[test]
    fn failed_run_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("report");
        let mut cfg = small_cfg();
        cfg.market_csv = Some(tmp.path().join("missing.csv"));
        cfg.solar_csv = Some(tmp.path().join("missing_solar.csv"));
        assert!(run_experiment(&cfg, &out).is_err());
        assert!(!out.exists());
        assert!(!tmp.path().join("report.partial").exists());
    }
}
