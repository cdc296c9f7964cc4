//! `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and repeated keys are errors. Every key is optional; the
//! documented defaults apply otherwise. `gamma` sets both the environment
//! and the learner discount. Relative CSV paths resolve against the config
//! file's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::acnet::AcNetConfig;
use crate::ddpg::{AgentSelection, TrainConfig};
use crate::degradation::DegradationParams;
use crate::env::EnvConfig;
use crate::io::synth::SynthParams;
use crate::mdp::{BESS_ACT_DIM, BESS_OBS_DIM, SOLAR_ACT_DIM, SOLAR_OBS_DIM};
use crate::policy::PolicyKind;
use crate::{Error, Result};

/// Network sizes shared by both agents. The number of filter heights is
/// capped per agent at its feature count.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSizes {
    pub embed_dim: usize,
    pub heads: usize,
    pub num_mhca: usize,
    pub num_conv: usize,
    pub conv_channels: usize,
    pub head_kernel: usize,
    pub critic_hidden: usize,
}

impl Default for NetSizes {
    fn default() -> Self {
        let c = AcNetConfig::bess();
        Self {
            embed_dim: c.embed_dim,
            heads: c.heads,
            num_mhca: c.num_mhca,
            num_conv: 5,
            conv_channels: c.conv_channels,
            head_kernel: c.head_kernel,
            critic_hidden: c.critic_hidden,
        }
    }
}

impl NetSizes {
    fn for_agent(&self, num_features: usize, action_dim: usize) -> AcNetConfig {
        AcNetConfig {
            num_features,
            action_dim,
            embed_dim: self.embed_dim,
            heads: self.heads,
            num_mhca: self.num_mhca,
            num_conv: self.num_conv.min(num_features),
            conv_channels: self.conv_channels,
            head_kernel: self.head_kernel,
            critic_hidden: self.critic_hidden,
        }
    }

    pub fn solar(&self) -> AcNetConfig {
        self.for_agent(SOLAR_OBS_DIM, SOLAR_ACT_DIM)
    }

    pub fn bess(&self) -> AcNetConfig {
        self.for_agent(BESS_OBS_DIM, BESS_ACT_DIM)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_days: usize,
    pub eval_days: usize,
    /// Both set: load these files instead of generating data.
    pub market_csv: Option<PathBuf>,
    pub solar_csv: Option<PathBuf>,
    pub agent: AgentSelection,
    pub policies: Vec<PolicyKind>,
    pub dp_levels: usize,
    pub mpc_horizon: usize,
    pub env: EnvConfig,
    pub degradation: DegradationParams,
    pub train: TrainConfig,
    pub net: NetSizes,
    pub synth: SynthParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_days: 30,
            eval_days: 3,
            market_csv: None,
            solar_csv: None,
            agent: AgentSelection::Both,
            policies: PolicyKind::ALL.to_vec(),
            dp_levels: 101,
            mpc_horizon: 50,
            env: EnvConfig::default(),
            degradation: DegradationParams::default(),
            train: TrainConfig::default(),
            net: NetSizes::default(),
            synth: SynthParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::config(key, format!("{value:?}: {e}")))
}

impl ExperimentConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "train_days" => self.train_days = parse(key, v)?,
            "eval_days" => self.eval_days = parse(key, v)?,
            "market_csv" => self.market_csv = Some(base_dir.join(v)),
            "solar_csv" => self.solar_csv = Some(base_dir.join(v)),
            "agent" => self.agent = v.parse()?,
            "policies" => {
                self.policies = v.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?;
            }
            "dp_levels" => self.dp_levels = parse(key, v)?,
            "mpc_horizon" => self.mpc_horizon = parse(key, v)?,

            "dt_hours" => {
                self.env.dt_hours = parse(key, v)?;
                self.synth.dt_hours = self.env.dt_hours;
            }
            "alpha" => self.env.alpha = parse(key, v)?,
            "sigma" => self.env.sigma = parse(key, v)?,
            "battery_cost" => self.env.battery_cost = parse(key, v)?,
            "p_bat_max" => self.env.p_bat_max = parse(key, v)?,
            "p_solar_max" => {
                self.env.p_solar_max = parse(key, v)?;
                self.synth.p_solar_max = self.env.p_solar_max;
            }
            "e_min" => self.env.e_min = parse(key, v)?,
            "e_max_initial" => self.env.e_max_initial = parse(key, v)?,
            "eta_ch" => self.env.eta_ch = parse(key, v)?,
            "eta_dch" => self.env.eta_dch = parse(key, v)?,
            "deg_period" => self.env.deg_period = parse(key, v)?,
            "ema_tau" => self.env.ema_tau = parse(key, v)?,
            "beta" => self.env.beta = parse(key, v)?,
            "window_l" => self.env.window_l = parse(key, v)?,
            "gamma" => {
                self.env.gamma = parse(key, v)?;
                self.train.gamma = self.env.gamma;
            }

            "k_cal_per_hour" => self.degradation.k_cal_per_hour = parse(key, v)?,
            "cycle_coeff_a" => self.degradation.cycle_coeff_a = parse(key, v)?,
            "cycle_exp_b" => self.degradation.cycle_exp_b = parse(key, v)?,

            "batch_size" => self.train.batch_size = parse(key, v)?,
            "actor_lr" => self.train.actor_lr = parse(key, v)?,
            "critic_lr" => self.train.critic_lr = parse(key, v)?,
            "noise_sigma" => self.train.noise_sigma = parse(key, v)?,
            "soft_update_rho" => self.train.soft_update_rho = parse(key, v)?,
            "episodes" => self.train.episodes = parse(key, v)?,
            "steps_per_episode" => self.train.steps_per_episode = parse(key, v)?,
            "warmup_steps" => self.train.warmup_steps = parse(key, v)?,
            "buffer_capacity" => self.train.buffer_capacity = parse(key, v)?,
            "grad_clip" => self.train.grad_clip = parse(key, v)?,
            "update_every" => self.train.update_every = parse(key, v)?,

            "embed_dim" => self.net.embed_dim = parse(key, v)?,
            "heads" => self.net.heads = parse(key, v)?,
            "num_mhca" => self.net.num_mhca = parse(key, v)?,
            "num_conv" => self.net.num_conv = parse(key, v)?,
            "conv_channels" => self.net.conv_channels = parse(key, v)?,
            "head_kernel" => self.net.head_kernel = parse(key, v)?,
            "critic_hidden" => self.net.critic_hidden = parse(key, v)?,

            "synth_solar_peak_frac" => self.synth.solar_peak_frac = parse(key, v)?,
            "synth_cloud_mean" => self.synth.cloud_mean = parse(key, v)?,
            "synth_cloud_persistence" => self.synth.cloud_persistence = parse(key, v)?,
            "synth_cloud_sigma" => self.synth.cloud_sigma = parse(key, v)?,
            "synth_base_price" => self.synth.base_price = parse(key, v)?,
            "synth_price_sigma" => self.synth.price_sigma = parse(key, v)?,
            "synth_spikes_per_day" => self.synth.spikes_per_day = parse(key, v)?,

            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(Error::config(key, format!("line {}: set twice", i + 1)));
            }
            cfg.set(key, value, base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.net.solar().validate()?;
        self.net.bess().validate()?;
        if self.market_csv.is_some() != self.solar_csv.is_some() {
            return Err(Error::config("market_csv", "market_csv and solar_csv must be given together"));
        }
        if self.train_days == 0 && self.policies.contains(&PolicyKind::Acdrl) {
            return Err(Error::config("train_days", "must be >= 1 to train agents"));
        }
        if self.eval_days == 0 {
            return Err(Error::config("eval_days", "must be >= 1"));
        }
        if self.dp_levels < 2 {
            return Err(Error::config("dp_levels", "must be >= 2"));
        }
        if self.mpc_horizon == 0 {
            return Err(Error::config("mpc_horizon", "must be >= 1"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy"));
        }
        let per_day = 24.0 / self.env.dt_hours;
        if (per_day - per_day.round()).abs() > 1e-9 {
            return Err(Error::config("dt_hours", "must divide a day into whole intervals"));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        (24.0 / self.env.dt_hours).round() as usize
    }
}
