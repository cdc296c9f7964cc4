//! Decision policies behind one interface, and the evaluation loop.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acnet::AcNet;
use crate::baselines::dp::{perfect_foresight_dp, DpGrid};
use crate::baselines::heuristic::{ema_heuristic_policy, persistence_bid};
use crate::baselines::mpc::{raw_action_for, rolling_horizon_mpc, MpcHistory};
use crate::ddpg::{bess_outputs_for, Trained};
use crate::env::{BessCommand, EnvConfig, StepOutcome, EPS_POWER};
use crate::io::metrics::{summarize_metrics, Metrics};
use crate::mdp::{MdpEnv, MdpStep, RawAction};
use crate::{Error, Result};

pub trait Policy {
    fn name(&self) -> &'static str;

    fn act(&mut self, env: &MdpEnv) -> Result<RawAction>;

    /// Called with every completed interval.
    fn observe(&mut self, _step: &MdpStep) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Acdrl,
    Ema,
    Dp,
    Mpc,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [Self::Acdrl, Self::Ema, Self::Dp, Self::Mpc, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Acdrl => "acdrl",
            Self::Ema => "ema",
            Self::Dp => "dp",
            Self::Mpc => "mpc",
            Self::Random => "random",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("policy", format!("{s:?} is not one of acdrl, ema, dp, mpc, random")))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trained actors; a missing one is replaced by its non-learning fallback
/// (persistence bid for solar, EMA threshold rule for the battery).
#[derive(Debug, Clone)]
pub struct AcdrlPolicy {
    pub solar: Option<AcNet>,
    pub bess: Option<AcNet>,
}

impl AcdrlPolicy {
    pub fn from_trained(t: &Trained) -> Self {
        Self {
            solar: t.selection.solar().then(|| t.solar.online.clone()),
            bess: t.selection.bess().then(|| t.bess.online.clone()),
        }
    }
}

impl Policy for AcdrlPolicy {
    fn name(&self) -> &'static str {
        "acdrl"
    }

    fn act(&mut self, env: &MdpEnv) -> Result<RawAction> {
        let cfg = env.config();
        let (so, bo) = env.observe();
        let fallback = ema_heuristic_policy(&so, env.ema(), env.last_ratio());
        let solar = match &self.solar {
            Some(net) => net.act(&so.features(cfg)),
            None => vec![fallback.solar_frac],
        };
        let bess = match &self.bess {
            Some(net) => net.act(&bo.features(cfg)),
            None => bess_outputs_for(&fallback),
        };
        Ok(RawAction::from_agent_outputs(&solar, &bess))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmaPolicy;

impl Policy for EmaPolicy {
    fn name(&self) -> &'static str {
        "ema"
    }

    fn act(&mut self, env: &MdpEnv) -> Result<RawAction> {
        let (so, _) = env.observe();
        Ok(ema_heuristic_policy(&so, env.ema(), env.last_ratio()))
    }
}

/// Uniform random components.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn act(&mut self, _env: &MdpEnv) -> Result<RawAction> {
        Ok(RawAction {
            solar_frac: self.rng.random(),
            mode: self.rng.random(),
            sm_frac: self.rng.random(),
            sc_frac: self.rng.random(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MpcPolicy {
    history: MpcHistory,
    horizon: usize,
    levels: usize,
}

impl MpcPolicy {
    pub fn new(cfg: &EnvConfig, horizon: usize, levels: usize) -> Self {
        Self { history: MpcHistory::new(cfg), horizon, levels }
    }
}

impl Policy for MpcPolicy {
    fn name(&self) -> &'static str {
        "mpc"
    }

    fn act(&mut self, env: &MdpEnv) -> Result<RawAction> {
        rolling_horizon_mpc(&self.history, self.horizon, self.levels, env)
    }

    fn observe(&mut self, step: &MdpStep) {
        self.history.record_step(step);
    }
}

/// Perfect foresight over the remaining series: the solar bid equals the
/// realised generation ratio and the battery follows the DP schedule.
#[derive(Debug, Clone)]
pub struct DpPolicy {
    ratios: Vec<f64>,
    schedule: Vec<BessCommand>,
    t: usize,
}

impl DpPolicy {
    pub fn new(env: &MdpEnv, levels: usize) -> Result<Self> {
        let cfg = env.config();
        let data = &env.env().data()[env.env().time()..];
        let ratios: Vec<f64> =
            data.iter().map(|iv| if iv.p_avail < EPS_POWER { 0.0 } else { iv.p_actual / iv.p_avail }).collect();
        let prices: Vec<f64> = data.iter().map(|iv| iv.price).collect();
        let b = env.env().bess();
        let grid = DpGrid::new(cfg.e_min, b.e_max, levels)?;
        let plan = perfect_foresight_dp(&prices, &vec![0.0; prices.len()], &grid, b.e, b.d_deg, cfg)?;
        Ok(Self { ratios, schedule: plan.schedule.iter().map(|s| s.command).collect(), t: 0 })
    }
}

impl Policy for DpPolicy {
    fn name(&self) -> &'static str {
        "dp"
    }

    fn act(&mut self, env: &MdpEnv) -> Result<RawAction> {
        let cmd = self.schedule.get(self.t).copied().unwrap_or_else(BessCommand::idle);
        let ratio = self.ratios.get(self.t).copied().unwrap_or(0.0);
        Ok(raw_action_for(&cmd, ratio, env.config()))
    }

    fn observe(&mut self, _step: &MdpStep) {
        self.t += 1;
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub policy: &'static str,
    pub steps: Vec<MdpStep>,
    pub metrics: Metrics,
}

impl Evaluation {
    pub fn outcomes(&self) -> Vec<StepOutcome> {
        self.steps.iter().map(|s| s.outcome.clone()).collect()
    }
}

/// Runs `policy` until the environment's data is exhausted.
pub fn evaluate(policy: &mut dyn Policy, mut env: MdpEnv) -> Result<Evaluation> {
    let mut steps = Vec::with_capacity(env.env().remaining());
    while !env.is_done() {
        let a = policy.act(&env)?;
        let step = env.step(&a)?;
        policy.observe(&step);
        steps.push(step);
    }
    let dt = env.config().dt_hours;
    let outcomes: Vec<StepOutcome> = steps.iter().map(|s| s.outcome.clone()).collect();
    Ok(Evaluation { policy: policy.name(), metrics: summarize_metrics(&outcomes, dt), steps })
}

/// Best spot-arbitrage revenue any battery schedule could earn on the
/// realised prices and curtailment of `trace`, starting empty at full
/// capacity without degradation charges.
pub fn arbitrage_upper_bound(trace: &[StepOutcome], cfg: &EnvConfig, levels: usize) -> Result<f64> {
    let prices: Vec<f64> = trace.iter().map(|s| s.price).collect();
    let curtailed: Vec<f64> = trace.iter().map(|s| s.solar.p_curtailed).collect();
    let grid = DpGrid::new(cfg.e_min, cfg.e_max_initial, levels)?;
    Ok(perfect_foresight_dp(&prices, &curtailed, &grid, cfg.e_min, 0.0, cfg)?.value)
}

/// Builds a non-learning policy, or the trained one for `Acdrl`.
pub fn make_policy(
    kind: PolicyKind,
    env: &MdpEnv,
    acdrl: Option<&AcdrlPolicy>,
    seed: u64,
    dp_levels: usize,
    mpc_horizon: usize,
) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Acdrl => Box::new(
            acdrl.cloned().ok_or_else(|| Error::config("policy", "acdrl needs trained agents or checkpoints"))?,
        ),
        PolicyKind::Ema => Box::new(EmaPolicy),
        PolicyKind::Dp => Box::new(DpPolicy::new(env, dp_levels)?),
        PolicyKind::Mpc => Box::new(MpcPolicy::new(env.config(), mpc_horizon, dp_levels)),
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
    })
}

/// Persistence bid helper re-exported for callers that only need the rule.
pub fn persistence(env: &MdpEnv) -> f64 {
    persistence_bid(env.last_ratio())
}
