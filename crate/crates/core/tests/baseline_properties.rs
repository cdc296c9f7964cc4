use std::sync::Arc;

use proptest::prelude::*;

use solar_bess::baselines::mpc::plan_first_command;
use solar_bess::baselines::{perfect_foresight_dp, DpGrid};
use solar_bess::env::{BessMode, Env, EnvConfig, Interval, EPS_ENERGY};
use solar_bess::io::data::align;
use solar_bess::io::synth::{synth_generate, SynthParams};
use solar_bess::policy::{arbitrage_upper_bound, evaluate, DpPolicy, EmaPolicy, MpcPolicy, Policy, RandomPolicy};
use solar_bess::{DegradationParams, MdpEnv};

fn prices() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..300.0f64, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn finer_nested_grid_never_loses(p in prices(), levels in 2usize..12, start in 0.0..=1.0f64, d_deg in 0.0..5.0f64) {
        let cfg = EnvConfig::default();
        let curtailed = vec![0.0; p.len()];
        let coarse = DpGrid::new(cfg.e_min, cfg.e_max_initial, levels).unwrap();
        let fine = DpGrid::new(cfg.e_min, cfg.e_max_initial, 2 * levels - 1).unwrap();
        // start on a level shared by both grids
        let e0 = coarse.levels()[(start * (levels - 1) as f64).round() as usize];
        let a = perfect_foresight_dp(&p, &curtailed, &coarse, e0, d_deg, &cfg).unwrap();
        let b = perfect_foresight_dp(&p, &curtailed, &fine, e0, d_deg, &cfg).unwrap();
        prop_assert!(b.value >= a.value - 1e-9 * a.value.abs().max(1.0), "{} < {}", b.value, a.value);
        prop_assert!(a.value >= -1e-9);
    }

    #[test]
    fn dp_schedule_is_feasible_and_consistent(p in prices(), levels in 2usize..30) {
        let cfg = EnvConfig::default();
        let curtailed: Vec<f64> = p.iter().map(|x| if *x < 0.0 { 5.0 } else { 0.0 }).collect();
        let grid = DpGrid::new(cfg.e_min, cfg.e_max_initial, levels).unwrap();
        let sol = perfect_foresight_dp(&p, &curtailed, &grid, cfg.e_min, 0.0, &cfg).unwrap();
        let mut total = 0.0;
        for w in sol.schedule.windows(2) {
            prop_assert_eq!(w[0].e_after, w[1].e_before);
        }
        for s in &sol.schedule {
            let c = s.command;
            prop_assert!(c.p_sm >= 0.0 && c.p_sm + c.p_sc_planned <= cfg.p_bat_max + 1e-9);
            prop_assert!(s.e_after >= cfg.e_min - EPS_ENERGY && s.e_after <= cfg.e_max_initial + EPS_ENERGY);
            prop_assert!((s.e_before + c.energy_delta(&cfg) - s.e_after).abs() <= 1e-9);
            total += s.reward;
        }
        prop_assert!((total - sol.value).abs() <= 1e-9 * sol.value.abs().max(1.0));
    }

    #[test]
    // long enough to empty the battery later, so acting now only ties with
    // waiting; below zero, lossy cycling is itself paid, so prices start at 0
    fn constant_forecast_gains_nothing_from_acting_now(price in 0.0..300.0f64, start in 0.0..=1.0f64, horizon in 20usize..60) {
        let cfg = EnvConfig::default();
        let grid = DpGrid::new(cfg.e_min, cfg.e_max_initial, 41).unwrap();
        let i = (start * 40.0).round() as usize;
        let sol = perfect_foresight_dp(&vec![price; horizon], &vec![0.0; horizon], &grid, grid.levels()[i], 0.0, &cfg).unwrap();
        prop_assert!((sol.values[0][i] - sol.values[1][i]).abs() <= 1e-9 * sol.values[0][i].abs().max(1.0));
        let cmd = plan_first_command(&[80.0; 50], &[0.0; 50], 41, grid.levels()[i], cfg.e_max_initial, 0.0, &cfg).unwrap();
        prop_assert_eq!(cmd.mode, BessMode::Idle);
    }
}

fn synth_env(seed: u64, days: usize) -> MdpEnv {
    let params = SynthParams { solar_peak_frac: 0.95, spikes_per_day: 2.0, ..SynthParams::default() };
    let (m, s) = synth_generate(seed, days, &params);
    let data: Arc<[Interval]> = Arc::from(align(&m, &s).unwrap());
    MdpEnv::new(Env::new(EnvConfig::default(), DegradationParams::default(), data).unwrap())
}

#[test]
fn baseline_runs_respect_the_battery_and_the_arbitrage_bound() {
    for seed in [3, 4] {
        let env = synth_env(seed, 2);
        let cfg = env.config().clone();
        let policies: Vec<Box<dyn Policy>> = vec![
            Box::new(EmaPolicy),
            Box::new(RandomPolicy::new(seed)),
            Box::new(MpcPolicy::new(&cfg, 24, 41)),
            Box::new(DpPolicy::new(&env, 101).unwrap()),
        ];
        for mut p in policies {
            let ev = evaluate(p.as_mut(), env.clone()).unwrap();
            assert_eq!(ev.steps.len(), 576);
            let trace = ev.outcomes();
            for o in &trace {
                assert!(o.e_after >= cfg.e_min - EPS_ENERGY && o.e_after <= o.e_max_after + EPS_ENERGY);
                assert!(o.bess.v_ch() * o.bess.v_dch() == 0.0);
                assert!(o.solar.p_bid + o.bess.p_sm + o.bess.p_sc_planned <= cfg.export_cap() + 1e-6);
            }
            let bound = arbitrage_upper_bound(&trace, &cfg, 101).unwrap();
            assert!(
                ev.metrics.revenue_bess <= bound + 1e-6,
                "{}: {} above bound {bound}",
                ev.policy,
                ev.metrics.revenue_bess
            );
        }
    }
}

#[test]
fn perfect_foresight_beats_the_heuristic_on_the_battery() {
    let env = synth_env(8, 2);
    let dp = evaluate(&mut DpPolicy::new(&env, 101).unwrap(), env.clone()).unwrap();
    let ema = evaluate(&mut EmaPolicy, env).unwrap();
    assert!(dp.metrics.revenue_bess > ema.metrics.revenue_bess);
    assert!(dp.metrics.revenue_solar >= ema.metrics.revenue_solar);
}
