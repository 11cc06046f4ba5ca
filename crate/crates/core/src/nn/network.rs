//! Per-agent policy and Q networks.
//!
//! The attention body encodes the agent itself, the other agents and the
//! interaction regions with three encoders (one parameter group each),
//! attends from the self embedding over every entity, and feeds
//! `self + LayerNorm(g(v))` through a two-layer head. The MLP body is the
//! fixed-width baseline: all entity features are concatenated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::entity::EntityBatch;
use super::params::{BoundParams, Linear, Mlp2, ParamId, ParamSet};
use crate::autodiff::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{DairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Attention,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Policy,
    QValue,
}

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: Architecture,
    pub head: HeadKind,
    pub embed_dim: usize,
    pub agent_features: usize,
    pub region_features: usize,
    pub action_dim: usize,
    pub n_agents: usize,
    /// Region count the MLP input is sized for; unused by attention.
    pub mlp_regions: usize,
}

impl NetConfig {
    fn output_dim(&self) -> usize {
        match self.head {
            HeadKind::Policy => 2 * self.action_dim,
            HeadKind::QValue => 1,
        }
    }

    fn self_input_dim(&self) -> usize {
        match self.head {
            HeadKind::Policy => self.agent_features,
            HeadKind::QValue => self.agent_features + self.action_dim,
        }
    }
}

#[derive(Debug, Clone)]
struct AttentionBody {
    self_enc: Mlp2,
    other_enc: Mlp2,
    region_enc: Mlp2,
    w_q: ParamId,
    w_k: ParamId,
    g: Linear,
    ln_gain: ParamId,
    ln_bias: ParamId,
    head: Mlp2,
}

#[derive(Debug, Clone)]
struct MlpBody {
    body: Mlp2,
    head: Mlp2,
}

#[derive(Debug, Clone)]
enum Body {
    Attention(AttentionBody),
    Mlp(MlpBody),
}

/// Output of one forward pass. `alpha` is `[batch, n_agents + n_regions]`
/// for attention networks, in global entity order (agents, then regions).
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub out: Var,
    pub alpha: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    params: ParamSet,
    body: Body,
}

impl Network {
    pub fn new(cfg: NetConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.embed_dim;
        let mut params = ParamSet::new();
        let body = match cfg.arch {
            Architecture::Attention => {
                let self_enc = Mlp2::new(&mut params, "self_enc", cfg.self_input_dim(), d, d, rng);
                let other_enc = Mlp2::new(&mut params, "other_enc", cfg.agent_features, d, d, rng);
                let region_enc = Mlp2::new(&mut params, "region_enc", cfg.region_features, d, d, rng);
                let w_q = params.add_uniform("w_q", d, d, d, rng);
                let w_k = params.add_uniform("w_k", d, d, d, rng);
                let g = Linear::new(&mut params, "g", d, d, rng);
                let ln_gain = params.add("ln.gain", crate::autodiff::Tensor::full(1, d, 1.0));
                let ln_bias = params.add("ln.bias", crate::autodiff::Tensor::zeros(1, d));
                let head = Mlp2::new(&mut params, "head", d, d, cfg.output_dim(), rng);
                Body::Attention(AttentionBody {
                    self_enc,
                    other_enc,
                    region_enc,
                    w_q,
                    w_k,
                    g,
                    ln_gain,
                    ln_bias,
                    head,
                })
            }
            Architecture::Mlp => {
                let input = cfg.self_input_dim()
                    + (cfg.n_agents - 1) * cfg.agent_features
                    + cfg.mlp_regions * cfg.region_features;
                let body = Mlp2::new(&mut params, "body", input, d, d, rng);
                let head = Mlp2::new(&mut params, "head", d, d, cfg.output_dim(), rng);
                Body::Mlp(MlpBody { body, head })
            }
        };
        Self { cfg, params, body }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of distinct encoder parameter groups (three for attention).
    pub fn encoder_groups(&self) -> usize {
        match self.body {
            Body::Attention(_) => 3,
            Body::Mlp(_) => 1,
        }
    }

    /// Projection matrices `(W_q, W_k)`, attention networks only.
    pub fn query_key(&self) -> Option<(ParamId, ParamId)> {
        match &self.body {
            Body::Attention(a) => Some((a.w_q, a.w_k)),
            Body::Mlp(_) => None,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.params.bind(tape, trainable)
    }

    fn check_batch(&self, batch: &EntityBatch, agent: usize, action: Option<Var>, tape: &Tape) -> Result<()> {
        let cfg = &self.cfg;
        if batch.agent_features != cfg.agent_features {
            return Err(DairError::FeatureLength {
                kind: super::EntityKind::Agent,
                expected: cfg.agent_features,
                got: batch.agent_features,
            });
        }
        if batch.region_features != cfg.region_features {
            return Err(DairError::FeatureLength {
                kind: super::EntityKind::Region,
                expected: cfg.region_features,
                got: batch.region_features,
            });
        }
        if batch.n_agents != cfg.n_agents || agent >= cfg.n_agents {
            return Err(DairError::Layout(format!(
                "network built for {} agents, got batch with {} (agent index {agent})",
                cfg.n_agents, batch.n_agents
            )));
        }
        if cfg.arch == Architecture::Mlp && batch.n_regions != cfg.mlp_regions {
            return Err(DairError::Incompatible(format!(
                "mlp network has a fixed input for {} regions, got {}",
                cfg.mlp_regions, batch.n_regions
            )));
        }
        match (cfg.head, action) {
            (HeadKind::Policy, Some(_)) => Err(DairError::Layout("policy network takes no action input".into())),
            (HeadKind::QValue, None) => Err(DairError::Layout("q network needs the agent's action".into())),
            (HeadKind::QValue, Some(a)) if tape.shape(a) != [batch.batch, cfg.action_dim] => Err(DairError::Layout(format!(
                "action shape {:?}, expected [{}, {}]",
                tape.shape(a),
                batch.batch,
                cfg.action_dim
            ))),
            _ => Ok(()),
        }
    }

    /// Runs the network for agent `agent` over `batch`. `action` must be a
    /// `[batch, action_dim]` node for Q networks and `None` for policies.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize, action: Option<Var>) -> Result<Forward> {
        self.check_batch(batch, agent, action, tape)?;
        match &self.body {
            Body::Attention(a) => self.forward_attention(a, tape, p, batch, agent, action),
            Body::Mlp(m) => self.forward_mlp(m, tape, p, batch, agent, action),
        }
    }

    fn self_input(&self, tape: &mut Tape, batch: &EntityBatch, agent: usize, action: Option<Var>) -> Result<Var> {
        let own = tape.constant(batch.batch, batch.agent_features, batch.agent_rows(agent));
        Ok(match action {
            Some(a) => tape.concat_cols(&[own, a])?,
            None => own,
        })
    }

    /// Embeddings `(self [B, d], others [B*(N-1), d], regions [B*M, d])`.
    pub(crate) fn encode(&self, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize, action: Option<Var>) -> Result<(Var, Option<Var>, Var)> {
        let Body::Attention(a) = &self.body else {
            return Err(DairError::Incompatible("mlp network has no entity encoders".into()));
        };
        self.check_batch(batch, agent, action, tape)?;
        let x_self = self.self_input(tape, batch, agent, action)?;
        let f_self = a.self_enc.forward(tape, p, x_self)?;
        let f_other = if batch.n_agents > 1 {
            let x = tape.constant(batch.batch * (batch.n_agents - 1), batch.agent_features, batch.other_agent_rows(agent));
            Some(a.other_enc.forward(tape, p, x)?)
        } else {
            None
        };
        let x_reg = tape.constant(batch.batch * batch.n_regions, batch.region_features, batch.regions.clone());
        let f_reg = a.region_enc.forward(tape, p, x_reg)?;
        Ok((f_self, f_other, f_reg))
    }

    /// Scaled dot-product attention from the self embedding over all
    /// entities. Returns `(v [B, d], alpha [B, N + M])`.
    pub(crate) fn attend(&self, tape: &mut Tape, p: &BoundParams, n_agents: usize, agent: usize, f_self: Var, f_other: Option<Var>, f_reg: Var) -> Result<(Var, Var)> {
        let Body::Attention(a) = &self.body else {
            return Err(DairError::Incompatible("mlp network has no attention block".into()));
        };
        let d = self.cfg.embed_dim;
        let w_q = p.var(a.w_q);
        let w_k = p.var(a.w_k);
        let b = tape.shape(f_self)[0];
        let n_regions = tape.shape(f_reg)[0] / b;
        let q = tape.matmul(f_self, w_q)?;
        let k_self = tape.matmul(f_self, w_k)?;
        let beta_self = tape.group_dot(q, k_self, 1)?;
        let k_reg = tape.matmul(f_reg, w_k)?;
        let beta_reg = tape.group_dot(q, k_reg, n_regions)?;
        let mut pieces = Vec::with_capacity(4);
        let beta_other = match f_other {
            Some(fo) => {
                let k_other = tape.matmul(fo, w_k)?;
                Some(tape.group_dot(q, k_other, n_agents - 1)?)
            }
            None => None,
        };
        // Global order: agents 0..N (self at position `agent`), then regions.
        if let Some(bo) = beta_other {
            if agent > 0 {
                pieces.push(tape.slice_cols(bo, 0, agent)?);
            }
            pieces.push(beta_self);
            if agent < n_agents - 1 {
                pieces.push(tape.slice_cols(bo, agent, n_agents - 1)?);
            }
        } else {
            pieces.push(beta_self);
        }
        pieces.push(beta_reg);
        let beta = tape.concat_cols(&pieces)?;
        let beta = tape.scale(beta, 1.0 / (d as f64).sqrt());
        let alpha = tape.softmax(beta)?;

        let a_self = tape.slice_cols(alpha, agent, agent + 1)?;
        let mut v = tape.group_weighted_sum(a_self, f_self, 1)?;
        if let Some(fo) = f_other {
            let mut parts = Vec::with_capacity(2);
            if agent > 0 {
                parts.push(tape.slice_cols(alpha, 0, agent)?);
            }
            if agent < n_agents - 1 {
                parts.push(tape.slice_cols(alpha, agent + 1, n_agents)?);
            }
            let a_other = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
            let vo = tape.group_weighted_sum(a_other, fo, n_agents - 1)?;
            v = tape.add(v, vo)?;
        }
        let a_reg = tape.slice_cols(alpha, n_agents, n_agents + n_regions)?;
        let vr = tape.group_weighted_sum(a_reg, f_reg, n_regions)?;
        v = tape.add(v, vr)?;
        Ok((v, alpha))
    }

    fn forward_attention(&self, a: &AttentionBody, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize, action: Option<Var>) -> Result<Forward> {
        let (f_self, f_other, f_reg) = self.encode(tape, p, batch, agent, action)?;
        let (v, alpha) = self.attend(tape, p, batch.n_agents, agent, f_self, f_other, f_reg)?;
        let gv = a.g.forward(tape, p, v)?;
        let ln = tape.layer_norm(gv, p.var(a.ln_gain), p.var(a.ln_bias), LAYER_NORM_EPS)?;
        let z = tape.add(f_self, ln)?;
        let out = a.head.forward(tape, p, z)?;
        Ok(Forward { out, alpha: Some(alpha) })
    }

    fn forward_mlp(&self, m: &MlpBody, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize, action: Option<Var>) -> Result<Forward> {
        let width = batch.n_agents * batch.agent_features + batch.n_regions * batch.region_features;
        let rows: Vec<f64> = (0..batch.batch).flat_map(|b| batch.flat_row(b, agent)).collect();
        let x = tape.constant(batch.batch, width, rows);
        let x = match action {
            Some(a) => tape.concat_cols(&[x, a])?,
            None => x,
        };
        let h = m.body.forward(tape, p, x)?;
        let h = tape.relu(h);
        let out = m.head.forward(tape, p, h)?;
        Ok(Forward { out, alpha: None })
    }

    /// Policy head: `(mean, log_std, alpha)`, with `log_std` clamped.
    pub fn forward_policy(&self, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize) -> Result<(Var, Var, Option<Var>)> {
        if self.cfg.head != HeadKind::Policy {
            return Err(DairError::Layout("forward_policy on a q network".into()));
        }
        let f = self.forward(tape, p, batch, agent, None)?;
        let a = self.cfg.action_dim;
        let mean = tape.slice_cols(f.out, 0, a)?;
        let log_std = tape.slice_cols(f.out, a, 2 * a)?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        Ok((mean, log_std, f.alpha))
    }

    /// Q head: `([batch, 1] values, alpha)`.
    pub fn forward_q(&self, tape: &mut Tape, p: &BoundParams, batch: &EntityBatch, agent: usize, action: Var) -> Result<(Var, Option<Var>)> {
        if self.cfg.head != HeadKind::QValue {
            return Err(DairError::Layout("forward_q on a policy network".into()));
        }
        let f = self.forward(tape, p, batch, agent, Some(action))?;
        Ok((f.out, f.alpha))
    }
}
