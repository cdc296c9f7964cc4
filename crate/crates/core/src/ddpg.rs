//! DDPG training for the solar and battery agents.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::acnet::{AcNet, AcNetConfig, ParamGroup};
use crate::autodiff::{clip_global_norm, AdamState, Tape, Tensor};
use crate::baselines::heuristic::{ema_heuristic_policy, persistence_bid};
use crate::mdp::{scores_for_mode, MdpEnv, RawAction, REWARD_SCALE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Already multiplied by the reward scale.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` draws with replacement, uniform over the current contents.
    pub fn sample(&mut self, n: usize) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let len = self.items.len();
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..len)).collect();
        idx.into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub soft_update_rho: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub grad_clip: f64,
    /// Environment steps between gradient updates.
    pub update_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            actor_lr: 8e-4,
            critic_lr: 8e-4,
            gamma: 0.99,
            noise_sigma: 0.1,
            soft_update_rho: 0.005,
            episodes: 200,
            steps_per_episode: 288,
            seed: 0,
            warmup_steps: 2000,
            buffer_capacity: 100_000,
            grad_clip: 1.0,
            update_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", format!("{} not in (0, 1)", self.gamma)));
        }
        if !(self.soft_update_rho > 0.0 && self.soft_update_rho <= 1.0) {
            return Err(Error::config("soft_update_rho", format!("{} not in (0, 1]", self.soft_update_rho)));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        for (key, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("grad_clip", self.grad_clip)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("steps_per_episode", self.steps_per_episode),
            ("buffer_capacity", self.buffer_capacity),
            ("update_every", self.update_every),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Gaussian exploration clamped to the unit box.
pub fn explore(action: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return action.to_vec();
    }
    let noise = Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative");
    action.iter().map(|&a| (a + noise.sample(rng)).clamp(0.0, 1.0)).collect()
}

/// `target <- (1 - rho) * target + rho * online`, parameter by parameter.
pub fn soft_update(target: &mut AcNet, online: &AcNet, rho: f64) {
    assert_eq!(target.config(), online.config(), "soft update between different layouts");
    if rho == 1.0 {
        target.copy_from(online);
        return;
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = (1.0 - rho) * *tv + rho * ov;
        }
    }
}

fn stack(rows: impl Iterator<Item = impl AsRef<[f64]>>, width: usize) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        let r = r.as_ref();
        assert_eq!(r.len(), width, "batch row of length {} for width {width}", r.len());
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new(vec![n, width], data)
}

fn subset<'a>(net: &'a mut AcNet, idx: &[usize]) -> Vec<&'a mut Tensor> {
    net.params_mut().iter_mut().enumerate().filter(|(i, _)| idx.binary_search(i).is_ok()).map(|(_, t)| t).collect()
}

/// Bellman targets `r + gamma * Q'(s', mu'(s'))`, without bootstrapping past
/// a terminal transition.
pub fn bellman_targets(target: &AcNet, batch: &[&Transition], gamma: f64) -> Vec<f64> {
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_obs.as_slice()).collect();
    let q_next = target.q_of_policy(&next);
    batch.iter().zip(q_next).map(|(t, q)| if t.terminal { t.reward } else { t.reward + gamma * q }).collect()
}

/// One Adam step of the trunk and critic head towards the Bellman targets.
/// Returns the pre-step loss, or `None` when the step was skipped.
pub fn critic_update(
    net: &mut AcNet,
    opt: &mut AdamState,
    target: &AcNet,
    batch: &[&Transition],
    cfg: &TrainConfig,
) -> Option<f64> {
    if batch.is_empty() {
        return None;
    }
    let y = bellman_targets(target, batch, cfg.gamma);
    let ncfg = net.config().clone();
    let mut tape = Tape::new();
    let p = net.bind(&mut tape, |g| g != ParamGroup::Actor);
    let x = tape.constant(stack(batch.iter().map(|t| &t.obs), ncfg.num_features));
    let a = tape.constant(stack(batch.iter().map(|t| &t.action), ncfg.action_dim));
    let yv = tape.constant(Tensor::new(vec![batch.len(), 1], y));
    let trunk = net.trunk(&mut tape, &p, x);
    let q = net.critic_head(&mut tape, &p, trunk.features, a);
    let loss = tape.mse(q, yv);
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        warn!("critic loss {loss_value} is not finite, update skipped");
        return None;
    }
    tape.backward(loss);
    let idx: Vec<usize> = (0..net.params().len()).filter(|&i| net.groups()[i] != ParamGroup::Actor).collect();
    let mut grads: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| tape.grad(p.vars()[i]).map_or_else(|| vec![0.0; net.params()[i].len()], <[f64]>::to_vec))
        .collect();
    clip_global_norm(&mut grads, cfg.grad_clip);
    let mut params = subset(net, &idx);
    opt.update(&mut params, &grads, cfg.critic_lr);
    Some(loss_value)
}

/// One Adam step of the actor head ascending `mean Q(s, mu(s))`; the trunk
/// and critic are held fixed. Returns the pre-step objective.
pub fn actor_update(net: &mut AcNet, opt: &mut AdamState, batch: &[&Transition], cfg: &TrainConfig) -> Option<f64> {
    if batch.is_empty() {
        return None;
    }
    let nf = net.config().num_features;
    let mut tape = Tape::new();
    let p = net.bind(&mut tape, |g| g == ParamGroup::Actor);
    let x = tape.constant(stack(batch.iter().map(|t| &t.obs), nf));
    let trunk = net.trunk(&mut tape, &p, x);
    let a = net.actor_head(&mut tape, &p, trunk.features);
    let q = net.critic_head(&mut tape, &p, trunk.features, a);
    let objective = tape.mean(q);
    let value = tape.value(objective).item();
    if !value.is_finite() {
        warn!("actor objective {value} is not finite, update skipped");
        return None;
    }
    let loss = tape.scale(objective, -1.0);
    tape.backward(loss);
    let idx = net.group_indices(ParamGroup::Actor);
    let mut grads: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| tape.grad(p.vars()[i]).map_or_else(|| vec![0.0; net.params()[i].len()], <[f64]>::to_vec))
        .collect();
    clip_global_norm(&mut grads, cfg.grad_clip);
    let mut params = subset(net, &idx);
    opt.update(&mut params, &grads, cfg.actor_lr);
    Some(value)
}

/// Online and target networks, optimiser state and replay memory of one
/// agent.
#[derive(Debug, Clone)]
pub struct Agent {
    pub online: AcNet,
    pub target: AcNet,
    pub buffer: ReplayBuffer,
    critic_opt: AdamState,
    actor_opt: AdamState,
}

impl Agent {
    pub fn new(net_cfg: AcNetConfig, train: &TrainConfig, rng: &mut impl Rng) -> Result<Self> {
        let online = AcNet::new(net_cfg, rng)?;
        let target = online.clone();
        let critic_opt = AdamState::new(
            online.params().iter().zip(online.groups()).filter(|(_, g)| **g != ParamGroup::Actor).map(|(p, _)| p),
        );
        let actor_opt = AdamState::new(
            online.params().iter().zip(online.groups()).filter(|(_, g)| **g == ParamGroup::Actor).map(|(p, _)| p),
        );
        let buffer = ReplayBuffer::new(train.buffer_capacity, rng.random());
        Ok(Self { online, target, buffer, critic_opt, actor_opt })
    }

    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.online.act(obs)
    }

    /// One critic step, one actor step and a target update on a sampled
    /// batch. Returns `(critic loss, actor objective)` for the steps taken.
    pub fn learn(&mut self, cfg: &TrainConfig) -> (Option<f64>, Option<f64>) {
        let Self { online, target, buffer, critic_opt, actor_opt } = self;
        let batch = buffer.sample(cfg.batch_size);
        let loss = critic_update(online, critic_opt, target, &batch, cfg);
        let obj = actor_update(online, actor_opt, &batch, cfg);
        soft_update(target, online, cfg.soft_update_rho);
        (loss, obj)
    }
}

/// Which agents learn; the other one follows its non-learning fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentSelection {
    Solar,
    Bess,
    Both,
}

impl AgentSelection {
    pub fn solar(self) -> bool {
        matches!(self, Self::Solar | Self::Both)
    }

    pub fn bess(self) -> bool {
        matches!(self, Self::Bess | Self::Both)
    }
}

impl FromStr for AgentSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solar" => Ok(Self::Solar),
            "bess" => Ok(Self::Bess),
            "both" => Ok(Self::Both),
            _ => Err(Error::config("agent", format!("{s:?} is not one of solar, bess, both"))),
        }
    }
}

impl fmt::Display for AgentSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Solar => "solar",
            Self::Bess => "bess",
            Self::Both => "both",
        })
    }
}

/// Battery actor outputs equivalent to a decided raw action.
pub fn bess_outputs_for(raw: &RawAction) -> Vec<f64> {
    let (ch, dch) = scores_for_mode(raw.mode);
    vec![ch, dch, raw.sm_frac, raw.sc_frac]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub steps: usize,
    pub solar_reward_sum: f64,
    pub bess_reward_sum: f64,
    pub revenue_total: f64,
    pub critic_loss_mean: f64,
    pub actor_objective_mean: f64,
}

impl TrainLogRow {
    pub const HEADER: &'static str =
        "episode,steps,solar_reward_sum,bess_reward_sum,revenue_total,critic_loss_mean,actor_objective_mean";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.solar_reward_sum,
            self.bess_reward_sum,
            self.revenue_total,
            self.critic_loss_mean,
            self.actor_objective_mean
        )
    }
}

pub fn training_log_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from(TrainLogRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub solar: Agent,
    pub bess: Agent,
    pub selection: AgentSelection,
    pub log: Vec<TrainLogRow>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains the selected agents on environments produced by `make_env`.
/// Episodes run back to back over one environment; when its data runs out a
/// fresh one is created.
pub fn train(
    make_env: &mut dyn FnMut() -> Result<MdpEnv>,
    solar_cfg: AcNetConfig,
    bess_cfg: AcNetConfig,
    cfg: &TrainConfig,
    selection: AgentSelection,
) -> Result<Trained> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let mut solar = Agent::new(solar_cfg, cfg, &mut init_rng)?;
    let mut bess = Agent::new(bess_cfg, cfg, &mut init_rng)?;
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut env = make_env()?;
    let mut total_steps = 0usize;

    for episode in 0..cfg.episodes {
        if env.is_done() {
            env = make_env()?;
        }
        if env.is_done() {
            return Err(Error::EndOfSeries(env.env().time()));
        }
        let env_cfg = env.config().clone();
        let mut row = TrainLogRow {
            episode,
            steps: 0,
            solar_reward_sum: 0.0,
            bess_reward_sum: 0.0,
            revenue_total: 0.0,
            critic_loss_mean: 0.0,
            actor_objective_mean: 0.0,
        };
        let mut losses = Vec::new();
        let mut objectives = Vec::new();
        while row.steps < cfg.steps_per_episode && !env.is_done() {
            let warm = total_steps < cfg.warmup_steps;
            let (so, bo) = env.observe();
            let s_obs = so.features(&env_cfg).to_vec();
            let b_obs = bo.features(&env_cfg).to_vec();
            let fallback = ema_heuristic_policy(&so, env.ema(), env.last_ratio());

            let s_act = if !selection.solar() {
                vec![persistence_bid(env.last_ratio())]
            } else if warm {
                vec![noise_rng.random::<f64>()]
            } else {
                explore(&solar.act(&s_obs), cfg.noise_sigma, &mut noise_rng)
            };
            let b_act = if !selection.bess() {
                bess_outputs_for(&fallback)
            } else if warm {
                (0..4).map(|_| noise_rng.random::<f64>()).collect()
            } else {
                explore(&bess.act(&b_obs), cfg.noise_sigma, &mut noise_rng)
            };
            let raw = RawAction::from_agent_outputs(&s_act, &b_act);
            let step = env.step(&raw)?;
            let terminal = env.is_done();
            let (nso, nbo) = env.observe();

            row.steps += 1;
            row.solar_reward_sum += step.solar_reward;
            row.bess_reward_sum += step.bess_reward.total();
            row.revenue_total += step.outcome.total_revenue();
            total_steps += 1;

            if selection.solar() {
                solar.buffer.push(Transition {
                    obs: s_obs,
                    action: s_act,
                    reward: step.solar_reward * REWARD_SCALE,
                    next_obs: nso.features(&env_cfg).to_vec(),
                    terminal,
                });
            }
            if selection.bess() {
                bess.buffer.push(Transition {
                    obs: b_obs,
                    action: b_act,
                    reward: step.bess_reward.total() * REWARD_SCALE,
                    next_obs: nbo.features(&env_cfg).to_vec(),
                    terminal,
                });
            }

            if total_steps > cfg.warmup_steps && total_steps.is_multiple_of(cfg.update_every) {
                for (on, agent) in [(selection.solar(), &mut solar), (selection.bess(), &mut bess)] {
                    if on && agent.buffer.len() >= cfg.batch_size.min(cfg.warmup_steps.max(1)) {
                        let (l, o) = agent.learn(cfg);
                        losses.extend(l);
                        objectives.extend(o);
                    }
                }
            }
        }
        row.critic_loss_mean = mean(&losses);
        row.actor_objective_mean = mean(&objectives);
        debug!(
            "episode {} steps {} revenue {:.2} critic {:.5} actor {:.5}",
            episode, row.steps, row.revenue_total, row.critic_loss_mean, row.actor_objective_mean
        );
        log.push(row);
    }
    Ok(Trained { solar, bess, selection, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition { obs: vec![r], action: vec![0.5], reward: r, next_obs: vec![r], terminal: false }
    }

    #[test]
    fn buffer_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3, 0);
        for i in 0..5 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let fill = |seed| {
            let mut b = ReplayBuffer::new(100, seed);
            for i in 0..50 {
                b.push(tr(i as f64));
            }
            b.sample(20).iter().map(|t| t.reward).collect::<Vec<_>>()
        };
        assert_eq!(fill(11), fill(11));
        assert_ne!(fill(11), fill(12));
    }

    #[test]
    fn explore_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(explore(&[0.3, 0.9], 0.0, &mut rng), vec![0.3, 0.9]);
        for _ in 0..100 {
            let a = explore(&[1.0, 0.0], 0.1, &mut rng);
            assert!(a[0] <= 1.0 && a[1] >= 0.0);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(explore(&[0.5; 4], 0.1, &mut r1), explore(&[0.5; 4], 0.1, &mut r2));
    }

    fn small_net(seed: u64) -> AcNet {
        let cfg = AcNetConfig { embed_dim: 8, heads: 2, conv_channels: 4, critic_hidden: 8, ..AcNetConfig::new(3, 2) };
        AcNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn soft_update_extremes() {
        let online = small_net(1);
        let mut target = small_net(2);
        let before = target.params().to_vec();
        soft_update(&mut target, &online, 0.0);
        assert_eq!(target.params(), before.as_slice());
        soft_update(&mut target, &online, 1.0);
        assert_eq!(target.params(), online.params());
    }

    #[test]
    fn soft_update_converges_geometrically() {
        let online = small_net(1);
        let mut target = small_net(2);
        let gap = |t: &AcNet| -> f64 {
            t.params()
                .iter()
                .zip(online.params())
                .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max)
        };
        let g0 = gap(&target);
        for _ in 0..10 {
            soft_update(&mut target, &online, 0.1);
        }
        assert!((gap(&target) - g0 * 0.9f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let net = small_net(3);
        let batch = [
            Transition {
                obs: vec![0.1; 3],
                action: vec![0.5; 2],
                reward: 1.5,
                next_obs: vec![0.2; 3],
                terminal: false,
            },
            Transition {
                obs: vec![0.3; 3],
                action: vec![0.1; 2],
                reward: -0.5,
                next_obs: vec![0.4; 3],
                terminal: false,
            },
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        assert_eq!(bellman_targets(&net, &refs, 0.0), vec![1.5, -0.5]);
        let y = bellman_targets(&net, &refs, 0.9);
        let q = net.q_of_policy(&[&[0.2; 3], &[0.4; 3]]);
        assert_eq!(y, vec![1.5 + 0.9 * q[0], -0.5 + 0.9 * q[1]]);
    }

    #[test]
    fn config_validation_names_keys() {
        let bad = TrainConfig { gamma: 1.0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { key, .. }) if key == "gamma"));
        let bad = TrainConfig { soft_update_rho: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn selection_parses() {
        assert_eq!("both".parse::<AgentSelection>().unwrap(), AgentSelection::Both);
        assert!("all".parse::<AgentSelection>().is_err());
        assert_eq!(AgentSelection::Solar.to_string(), "solar");
    }
}
