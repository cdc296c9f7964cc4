//! Attention-convolution actor-critic network.
//!
//! One network per agent. A shared trunk embeds each scalar observation
//! feature into its own row, runs stacked multi-head convolutional attention
//! blocks over the rows, and summarises the result with max-pooled filters of
//! heights `1..=num_conv`. The actor head and the critic feed-forward both sit
//! on that feature vector.
//!
//! Checkpoint format (text, UTF-8):
//!
//! ```text
//! acnet-checkpoint 1
//! config <key>=<value> ...
//! tensor <name> <dim> <dim> ...
//! <values separated by single spaces>
//! ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip decimal form, so a
//! save/load cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::mdp::{BESS_ACT_DIM, BESS_OBS_DIM, SOLAR_ACT_DIM, SOLAR_OBS_DIM};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &str = "acnet-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcNetConfig {
    pub num_features: usize,
    pub action_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub num_mhca: usize,
    pub num_conv: usize,
    pub conv_channels: usize,
    pub head_kernel: usize,
    pub critic_hidden: usize,
}

impl AcNetConfig {
    /// Table sizes for an agent with `num_features` inputs. The number of
    /// filter heights is capped at the feature count.
    pub fn new(num_features: usize, action_dim: usize) -> Self {
        Self {
            num_features,
            action_dim,
            embed_dim: 64,
            heads: 8,
            num_mhca: 2,
            num_conv: 5.min(num_features),
            conv_channels: 16,
            head_kernel: 3,
            critic_hidden: 64,
        }
    }

    pub fn solar() -> Self {
        Self::new(SOLAR_OBS_DIM, SOLAR_ACT_DIM)
    }

    pub fn bess() -> Self {
        Self::new(BESS_OBS_DIM, BESS_ACT_DIM)
    }

    pub fn feature_len(&self) -> usize {
        self.num_conv * self.conv_channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_features", self.num_features),
            ("action_dim", self.action_dim),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("num_mhca", self.num_mhca),
            ("num_conv", self.num_conv),
            ("conv_channels", self.conv_channels),
            ("critic_hidden", self.critic_hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(
                "embed_dim",
                format!("{} is not divisible by {} heads", self.embed_dim, self.heads),
            ));
        }
        if self.num_conv > self.num_features {
            return Err(Error::config(
                "num_conv",
                format!("filter height {} exceeds {} features", self.num_conv, self.num_features),
            ));
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(Error::config("head_kernel", "must be odd for same padding"));
        }
        Ok(())
    }

    fn to_line(&self) -> String {
        format!(
            "config num_features={} action_dim={} embed_dim={} heads={} num_mhca={} num_conv={} conv_channels={} head_kernel={} critic_hidden={}",
            self.num_features,
            self.action_dim,
            self.embed_dim,
            self.heads,
            self.num_mhca,
            self.num_conv,
            self.conv_channels,
            self.head_kernel,
            self.critic_hidden
        )
    }

    fn from_line(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix("config ")
            .ok_or_else(|| Error::Checkpoint(format!("expected config line, got {line:?}")))?;
        let mut cfg = Self::new(1, 1);
        for kv in rest.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad config entry {kv:?}")))?;
            let v: usize = v.parse().map_err(|_| Error::Checkpoint(format!("bad value in {kv:?}")))?;
            match k {
                "num_features" => cfg.num_features = v,
                "action_dim" => cfg.action_dim = v,
                "embed_dim" => cfg.embed_dim = v,
                "heads" => cfg.heads = v,
                "num_mhca" => cfg.num_mhca = v,
                "num_conv" => cfg.num_conv = v,
                "conv_channels" => cfg.conv_channels = v,
                "head_kernel" => cfg.head_kernel = v,
                "critic_hidden" => cfg.critic_hidden = v,
                _ => return Err(Error::Checkpoint(format!("unknown config key {k:?}"))),
            }
        }
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(cfg)
    }
}

/// Which update may touch a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    Actor,
    Critic,
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct MhcaIdx {
    q: Affine,
    k: Affine,
    v: Affine,
    conv: Affine,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Affine,
    mhca: Vec<MhcaIdx>,
    filters: Vec<Affine>,
    actor: Affine,
    critic_hidden: Affine,
    critic_out: Affine,
}

/// Parameter tensors bound to a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Trunk output for a batch.
#[derive(Debug, Clone)]
pub struct TrunkOutput {
    /// `[B, num_conv * conv_channels]`.
    pub features: Var,
    /// Per block, `[B * heads, F, F]` row-stochastic attention weights.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct AcNet {
    cfg: AcNetConfig,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    params: Vec<Tensor>,
    layout: Layout,
}

fn glorot(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

impl AcNet {
    pub fn new(cfg: AcNetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut net = Self {
            cfg: cfg.clone(),
            names: Vec::new(),
            groups: Vec::new(),
            params: Vec::new(),
            layout: Layout {
                embed: Affine { w: 0, b: 0 },
                mhca: Vec::new(),
                filters: Vec::new(),
                actor: Affine { w: 0, b: 0 },
                critic_hidden: Affine { w: 0, b: 0 },
                critic_out: Affine { w: 0, b: 0 },
            },
        };
        let (f, d, h, kk) = (cfg.num_features, cfg.embed_dim, cfg.heads, cfg.head_kernel);
        let add = |net: &mut Self, name: String, group, t: Tensor| {
            net.names.push(name);
            net.groups.push(group);
            net.params.push(t);
            net.params.len() - 1
        };
        use ParamGroup::*;
        let w = add(&mut net, "embed.w".into(), Trunk, glorot(rng, vec![f, d], 1, d));
        let b = add(&mut net, "embed.b".into(), Trunk, Tensor::zeros(vec![f, d]));
        net.layout.embed = Affine { w, b };
        for i in 0..cfg.num_mhca {
            let d_in = if i == 0 { d } else { 2 * d };
            let mut proj = |net: &mut Self, tag: &str| {
                let w = add(net, format!("mhca{i}.{tag}.w"), Trunk, glorot(rng, vec![d_in, d], d_in, d));
                let b = add(net, format!("mhca{i}.{tag}.b"), Trunk, Tensor::zeros(vec![d]));
                Affine { w, b }
            };
            let q = proj(&mut net, "q");
            let k = proj(&mut net, "k");
            let v = proj(&mut net, "v");
            let cw = add(&mut net, format!("mhca{i}.conv.w"), Trunk, glorot(rng, vec![h, kk, kk], kk * kk, kk * kk));
            let cb = add(&mut net, format!("mhca{i}.conv.b"), Trunk, Tensor::zeros(vec![h]));
            net.layout.mhca.push(MhcaIdx { q, k, v, conv: Affine { w: cw, b: cb } });
        }
        let c = cfg.conv_channels;
        for k in 1..=cfg.num_conv {
            let w = add(&mut net, format!("filter{k}.w"), Trunk, glorot(rng, vec![k * d, c], k * d, c));
            let b = add(&mut net, format!("filter{k}.b"), Trunk, Tensor::zeros(vec![c]));
            net.layout.filters.push(Affine { w, b });
        }
        let feat = cfg.feature_len();
        let a = cfg.action_dim;
        let w = add(&mut net, "actor.w".into(), Actor, glorot(rng, vec![feat, a], feat, a));
        let b = add(&mut net, "actor.b".into(), Actor, Tensor::zeros(vec![a]));
        net.layout.actor = Affine { w, b };
        let hid = cfg.critic_hidden;
        let w = add(&mut net, "critic.hidden.w".into(), Critic, glorot(rng, vec![feat + a, hid], feat + a, hid));
        let b = add(&mut net, "critic.hidden.b".into(), Critic, Tensor::zeros(vec![hid]));
        net.layout.critic_hidden = Affine { w, b };
        let w = add(&mut net, "critic.out.w".into(), Critic, glorot(rng, vec![hid, 1], hid, 1));
        let b = add(&mut net, "critic.out.b".into(), Critic, Tensor::zeros(vec![1]));
        net.layout.critic_out = Affine { w, b };
        Ok(net)
    }

    pub fn config(&self) -> &AcNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Indices of the parameters in `group`.
    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.groups[i] == group).collect()
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    /// Records every parameter on `tape`; those for which `trainable` returns
    /// true become gradient-carrying leaves, the rest constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> Bound {
        self.bind_with(tape, &self.params, trainable)
    }

    /// As [`AcNet::bind`] but with substitute parameter values of the same
    /// layout, used by the gradient checker.
    pub fn bind_with(&self, tape: &mut Tape, params: &[Tensor], trainable: impl Fn(ParamGroup) -> bool) -> Bound {
        assert_eq!(params.len(), self.params.len(), "parameter count mismatch");
        let vars = params
            .iter()
            .zip(&self.groups)
            .map(|(p, &g)| if trainable(g) { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        Bound { vars }
    }

    /// Wraps pre-bound variables, e.g. from the gradient checker.
    pub fn bound_from_vars(&self, vars: Vec<Var>) -> Bound {
        assert_eq!(vars.len(), self.params.len(), "parameter count mismatch");
        Bound { vars }
    }

    fn affine(&self, tape: &mut Tape, p: &Bound, a: Affine, x: Var) -> Var {
        tape.linear(x, p.vars[a.w], Some(p.vars[a.b]))
    }

    /// `[B, F]` observations to `[B, F, embed_dim]`.
    pub fn embed_state(&self, tape: &mut Tape, p: &Bound, obs: Var) -> Var {
        let e = self.layout.embed;
        tape.feature_embed(obs, p.vars[e.w], p.vars[e.b])
    }

    /// One attention block. Returns the `[B, F, embed_dim]` output and the
    /// attention weights.
    pub fn mhca_forward(&self, tape: &mut Tape, p: &Bound, block: usize, input: Var) -> (Var, Var) {
        let idx = self.layout.mhca[block];
        let h = self.cfg.heads;
        let mut head_proj = |a: Affine| {
            let y = self.affine(tape, p, a, input);
            let y = tape.relu(y);
            tape.split_heads(y, h)
        };
        let q = head_proj(idx.q);
        let k = head_proj(idx.k);
        let v = head_proj(idx.v);
        let scores = tape.bmm_nt(q, k);
        let scores = tape.scale(scores, 1.0 / (self.cfg.embed_dim as f64).sqrt());
        let att = tape.softmax_rows(scores);
        let ctx = tape.bmm(att, v);
        let ctx = tape.conv2d_same(ctx, p.vars[idx.conv.w], p.vars[idx.conv.b]);
        (tape.merge_heads(ctx, h), att)
    }

    /// Stacked blocks; every block after the first sees the embedding joined
    /// to the previous block's output along the embedding axis.
    pub fn stacked_attention(&self, tape: &mut Tape, p: &Bound, embedded: Var) -> (Var, Vec<Var>) {
        let mut out = embedded;
        let mut atts = Vec::with_capacity(self.cfg.num_mhca);
        for i in 0..self.cfg.num_mhca {
            let input = if i == 0 { embedded } else { tape.concat(&[embedded, out], 2) };
            let (o, a) = self.mhca_forward(tape, p, i, input);
            out = o;
            atts.push(a);
        }
        (out, atts)
    }

    /// Filters of heights `1..=num_conv` over the rows, each max-pooled over
    /// positions; `[B, F, D]` to `[B, num_conv * conv_channels]`.
    pub fn multi_grained_conv(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let pooled: Vec<Var> = self
            .layout
            .filters
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let windows = tape.unfold_rows(x, i + 1);
                let resp = self.affine(tape, p, a, windows);
                tape.maxpool_over_axis(resp, 1)
            })
            .collect();
        tape.concat(&pooled, 1)
    }

    pub fn trunk(&self, tape: &mut Tape, p: &Bound, obs: Var) -> TrunkOutput {
        let s = tape.shape(obs);
        assert!(
            s.len() == 2 && s[1] == self.cfg.num_features,
            "observation batch shape {s:?} for {} features",
            self.cfg.num_features
        );
        let emb = self.embed_state(tape, p, obs);
        let (att_out, attention) = self.stacked_attention(tape, p, emb);
        let features = self.multi_grained_conv(tape, p, att_out);
        TrunkOutput { features, attention }
    }

    /// `[B, feature_len]` to `[B, action_dim]` in `[0, 1]`.
    pub fn actor_head(&self, tape: &mut Tape, p: &Bound, features: Var) -> Var {
        let y = self.affine(tape, p, self.layout.actor, features);
        tape.sigmoid(y)
    }

    /// `[B, feature_len]` and `[B, action_dim]` to `[B, 1]`.
    pub fn critic_head(&self, tape: &mut Tape, p: &Bound, features: Var, action: Var) -> Var {
        let x = tape.concat(&[features, action], 1);
        let hdn = self.affine(tape, p, self.layout.critic_hidden, x);
        let hdn = tape.relu(hdn);
        self.affine(tape, p, self.layout.critic_out, hdn)
    }

    fn batch_tensor(&self, rows: &[&[f64]], width: usize) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            assert_eq!(r.len(), width, "row length {} for width {width}", r.len());
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    /// Deterministic actions for a batch of observations.
    pub fn actor_forward(&self, obs: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let x = tape.constant(self.batch_tensor(obs, self.cfg.num_features));
        let t = self.trunk(&mut tape, &p, x);
        let a = self.actor_head(&mut tape, &p, t.features);
        tape.value(a).data().chunks(self.cfg.action_dim).map(<[f64]>::to_vec).collect()
    }

    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.actor_forward(&[obs]).pop().unwrap()
    }

    /// Q values for a batch of observation/action pairs.
    pub fn critic_forward(&self, obs: &[&[f64]], actions: &[&[f64]]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let x = tape.constant(self.batch_tensor(obs, self.cfg.num_features));
        let a = tape.constant(self.batch_tensor(actions, self.cfg.action_dim));
        let t = self.trunk(&mut tape, &p, x);
        let q = self.critic_head(&mut tape, &p, t.features, a);
        tape.value(q).data().to_vec()
    }

    /// Q of the actor's own action, `Q(s, actor(s))`, for a batch.
    pub fn q_of_policy(&self, obs: &[&[f64]]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let x = tape.constant(self.batch_tensor(obs, self.cfg.num_features));
        let t = self.trunk(&mut tape, &p, x);
        let a = self.actor_head(&mut tape, &p, t.features);
        let q = self.critic_head(&mut tape, &p, t.features, a);
        tape.value(q).data().to_vec()
    }

    /// Copies parameters from `other`, which must share the layout.
    pub fn copy_from(&mut self, other: &AcNet) {
        assert_eq!(self.cfg, other.cfg, "copy between different network layouts");
        self.params.clone_from(&other.params);
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{}\n", self.cfg.to_line());
        for (name, t) in self.names.iter().zip(&self.params) {
            s.push_str("tensor ");
            s.push_str(name);
            for d in t.shape() {
                let _ = write!(s, " {d}");
            }
            s.push('\n');
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        match header.split_once(' ') {
            Some((CHECKPOINT_MAGIC, v)) if v.trim() == CHECKPOINT_VERSION.to_string() => {}
            _ => return Err(bad(format!("unsupported header {header:?}"))),
        }
        let cfg = AcNetConfig::from_line(lines.next().ok_or_else(|| bad("missing config line".into()))?)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = AcNet::new(cfg, &mut rng)?;
        for i in 0..net.params.len() {
            let head = lines.next().ok_or_else(|| bad(format!("missing tensor {}", net.names[i])))?;
            let mut parts = head.split_whitespace();
            if parts.next() != Some("tensor") || parts.next() != Some(net.names[i].as_str()) {
                return Err(bad(format!("expected tensor {}, got {head:?}", net.names[i])));
            }
            let shape: Vec<usize> = parts
                .map(|d| d.parse().map_err(|_| bad(format!("bad dimension in {head:?}"))))
                .collect::<Result<_>>()?;
            if shape != net.params[i].shape() {
                return Err(bad(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    net.names[i],
                    net.params[i].shape()
                )));
            }
            let body = lines.next().ok_or_else(|| bad(format!("missing values for {}", net.names[i])))?;
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(format!("bad value {v:?} in {}", net.names[i]))))
                .collect::<Result<_>>()?;
            if values.len() != net.params[i].len() {
                return Err(bad(format!(
                    "tensor {} has {} values, expected {}",
                    net.names[i],
                    values.len(),
                    net.params[i].len()
                )));
            }
            net.params[i] = Tensor::new(shape, values);
        }
        if lines.next() != Some("end") {
            return Err(bad("missing end marker".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(cfg: AcNetConfig, seed: u64) -> AcNet {
        AcNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn bess_shape_pipeline() {
        let n = net(AcNetConfig::bess(), 1);
        let mut tape = Tape::new();
        let p = n.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::new(vec![1, 6], vec![0.1, -0.2, 0.3, 0.5, 0.0, 1.0]));
        let emb = n.embed_state(&mut tape, &p, x);
        assert_eq!(tape.shape(emb), &[1, 6, 64]);
        let (first, _) = n.mhca_forward(&mut tape, &p, 0, emb);
        assert_eq!(tape.shape(first), &[1, 6, 64]);
        let joined = tape.concat(&[emb, first], 2);
        assert_eq!(tape.shape(joined), &[1, 6, 128]);
        let (second, att) = n.mhca_forward(&mut tape, &p, 1, joined);
        assert_eq!(tape.shape(second), &[1, 6, 64]);
        assert_eq!(tape.shape(att), &[8, 6, 6]);
        let feats = n.multi_grained_conv(&mut tape, &p, second);
        assert_eq!(tape.shape(feats), &[1, 80]);
        let a = n.actor_head(&mut tape, &p, feats);
        assert_eq!(tape.shape(a), &[1, 4]);
    }

    #[test]
    fn solar_network_caps_filter_heights() {
        let cfg = AcNetConfig::solar();
        assert_eq!(cfg.num_conv, 4);
        let n = net(cfg, 2);
        let a = n.act(&[0.2, 0.4, 0.6, 0.8]);
        assert_eq!(a.len(), 1);
        assert!((0.0..=1.0).contains(&a[0]));
    }

    #[test]
    fn oversized_filters_are_rejected() {
        let cfg = AcNetConfig { num_conv: 5, ..AcNetConfig::solar() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { .. })));
        let cfg = AcNetConfig { heads: 7, ..AcNetConfig::bess() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_input_zero_bias_embeds_to_zero() {
        let n = net(AcNetConfig::bess(), 3);
        let mut tape = Tape::new();
        let p = n.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::zeros(vec![2, 6]));
        let e = n.embed_state(&mut tape, &p, x);
        assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_feature_attention_is_one() {
        let cfg = AcNetConfig { num_conv: 1, ..AcNetConfig::new(1, 1) };
        let n = net(cfg, 4);
        let mut tape = Tape::new();
        let p = n.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::new(vec![1, 1], vec![0.7]));
        let t = n.trunk(&mut tape, &p, x);
        for a in t.attention {
            assert!(tape.value(a).data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn two_heads_restore_width() {
        let cfg = AcNetConfig { heads: 2, ..AcNetConfig::bess() };
        let n = net(cfg, 5);
        let mut tape = Tape::new();
        let p = n.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::filled(vec![1, 6], 0.5));
        let emb = n.embed_state(&mut tape, &p, x);
        let (o, att) = n.mhca_forward(&mut tape, &p, 0, emb);
        assert_eq!(tape.shape(att), &[2, 6, 6]);
        assert_eq!(tape.shape(o), &[1, 6, 64]);
    }

    #[test]
    fn single_block_is_one_mhca() {
        let cfg = AcNetConfig { num_mhca: 1, ..AcNetConfig::bess() };
        let n = net(cfg, 6);
        let mut tape = Tape::new();
        let p = n.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::filled(vec![1, 6], 0.25));
        let emb = n.embed_state(&mut tape, &p, x);
        let (stacked, _) = n.stacked_attention(&mut tape, &p, emb);
        let (single, _) = n.mhca_forward(&mut tape, &p, 0, emb);
        assert_eq!(tape.value(stacked), tape.value(single));
    }

    #[test]
    fn zero_output_layer_gives_bias() {
        let mut n = net(AcNetConfig::bess(), 7);
        let i = n.names().iter().position(|s| s == "critic.out.w").unwrap();
        n.params_mut()[i].data_mut().fill(0.0);
        let j = n.names().iter().position(|s| s == "critic.out.b").unwrap();
        n.params_mut()[j].data_mut()[0] = 0.42;
        let q = n.critic_forward(&[&[0.1; 6]], &[&[0.5; 4]]);
        assert_eq!(q, vec![0.42]);
    }

    #[test]
    fn forward_is_deterministic() {
        let n = net(AcNetConfig::bess(), 8);
        let obs = [0.3, 0.1, -0.4, 0.9, 0.0, 0.2];
        assert_eq!(n.act(&obs), n.act(&obs));
        assert_eq!(net(AcNetConfig::bess(), 8).act(&obs), n.act(&obs));
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let n = net(AcNetConfig::solar(), 9);
        let text = n.to_checkpoint_string();
        let back = AcNet::from_checkpoint_str(&text).unwrap();
        assert_eq!(back.params(), n.params());
        assert_eq!(back.config(), n.config());
        let broken = text.replacen("tensor embed.w 4 64", "tensor embed.w 4 63", 1);
        assert!(matches!(AcNet::from_checkpoint_str(&broken), Err(Error::Checkpoint(_))));
    }
}
