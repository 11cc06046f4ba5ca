//! Multi-agent soft actor-critic with learned temperatures, twin critics
//! and the attention-overlap penalty on both branches.

mod replay;
#[cfg(test)]
mod tests;

pub use replay::{her_relabel, relabel_one, sample_future, write_goals, ReplayBuffer, Transition};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::dair::{joint_policy_loss, joint_q_loss, total_overlap_loss, DairConfig};
use crate::env::{ACTION_DIM, AGENT_FEATURES, REGION_FEATURES};
use crate::error::{DairError, Result};
use crate::nn::{draw_noise, sample_with_noise, Architecture, BoundParams, EntityBatch, HeadKind, NetConfig, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub her_k: usize,
    /// Target update `target <- polyak * target + (1 - polyak) * online`.
    pub polyak: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub temperature_lr: f64,
    pub init_temperature: f64,
    /// Desired minimum policy entropy per agent.
    pub target_entropy: f64,
    pub twin_q: bool,
    /// Subtract `tau * log pi(a'|s')` in the critic target.
    pub entropy_in_target: bool,
    /// Gradient updates per collected environment step.
    pub updates_per_step: f64,
    pub episodes_per_collection: usize,
    pub rollout_workers: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            batch_size: 512,
            buffer_capacity: 1_000_000,
            her_k: 4,
            polyak: 0.995,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            temperature_lr: 3e-3,
            init_temperature: 0.1,
            target_entropy: -(ACTION_DIM as f64),
            twin_q: true,
            entropy_in_target: true,
            updates_per_step: 0.5,
            episodes_per_collection: 2,
            rollout_workers: 1,
        }
    }
}

impl SacConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn temperature_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.temperature_lr,
            ..self.adam()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DairError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("sac.gamma must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("sac.batch_size must be >= 1");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("sac.buffer_capacity must be >= sac.batch_size");
        }
        if !(0.0..1.0).contains(&self.polyak) {
            return bad("sac.polyak must be in [0, 1)");
        }
        if !self.adam().is_valid() || !self.temperature_adam().is_valid() {
            return bad("sac optimizer settings are invalid");
        }
        if !(self.init_temperature > 0.0) {
            return bad("sac.init_temperature must be > 0");
        }
        if !(self.updates_per_step >= 0.0) {
            return bad("sac.updates_per_step must be >= 0");
        }
        if self.episodes_per_collection == 0 || self.rollout_workers == 0 {
            return bad("sac.episodes_per_collection and sac.rollout_workers must be >= 1");
        }
        Ok(())
    }
}

/// Learner state of one agent.
#[derive(Debug, Clone)]
pub struct AgentLearner {
    pub policy: Network,
    /// One or two critics.
    pub q: Vec<Network>,
    pub q_target: Vec<Network>,
    /// `[1, 1]` tensor holding `log tau`.
    pub log_tau: Tensor,
    opt_policy: AdamState,
    opt_q: Vec<AdamState>,
    opt_tau: AdamState,
}

impl AgentLearner {
    pub fn tau(&self) -> f64 {
        self.log_tau.data()[0].exp()
    }
}

/// Minibatch stacked for the networks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: EntityBatch,
    pub next_obs: EntityBatch,
    /// Per agent, `[batch, action_dim]` row-major.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let obs = EntityBatch::from_states(items.iter().map(|t| t.obs.as_slice()), AGENT_FEATURES, REGION_FEATURES)?;
        let next_obs =
            EntityBatch::from_states(items.iter().map(|t| t.next_obs.as_slice()), AGENT_FEATURES, REGION_FEATURES)?;
        let n_agents = obs.n_agents;
        let mut actions = vec![Vec::with_capacity(items.len() * ACTION_DIM); n_agents];
        for t in items {
            if t.actions.len() != n_agents {
                return Err(DairError::Layout(format!(
                    "transition has {} actions for {n_agents} agents",
                    t.actions.len()
                )));
            }
            for (dst, a) in actions.iter_mut().zip(&t.actions) {
                dst.extend_from_slice(a);
            }
        }
        Ok(Self {
            obs,
            next_obs,
            actions,
            rewards: items.iter().map(|t| t.reward).collect(),
            done: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.obs.batch
    }

    pub fn is_empty(&self) -> bool {
        self.obs.batch == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub q_overlap: f64,
    pub actor_loss: f64,
    pub policy_overlap: f64,
    pub temperature_loss: f64,
}

/// Policy-branch graph, exposed for gradient checks.
#[derive(Debug, Clone)]
pub struct ActorGraph {
    pub loss: Var,
    pub sac_loss: Var,
    pub overlap: Option<Var>,
    pub log_probs: Vec<Var>,
}

/// Critic-branch graph.
#[derive(Debug, Clone)]
pub struct CriticGraph {
    pub loss: Var,
    pub bellman: Var,
    pub overlap: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub cfg: SacConfig,
    pub dair: DairConfig,
    pub agents: Vec<AgentLearner>,
    pub updates: u64,
}

fn check_finite(what: &str, v: f64, update: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(DairError::NonFinite {
            what: what.to_string(),
            update,
        })
    }
}

impl TrainerState {
    pub fn new(
        cfg: SacConfig,
        dair: DairConfig,
        arch: Architecture,
        embed_dim: usize,
        n_agents: usize,
        n_regions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        dair.validate()?;
        let net = |head| NetConfig {
            arch,
            head,
            embed_dim,
            agent_features: AGENT_FEATURES,
            region_features: REGION_FEATURES,
            action_dim: ACTION_DIM,
            n_agents,
            mlp_regions: n_regions,
        };
        let n_q = if cfg.twin_q { 2 } else { 1 };
        let agents = (0..n_agents)
            .map(|_| {
                let policy = Network::new(net(HeadKind::Policy), rng);
                let q: Vec<Network> = (0..n_q).map(|_| Network::new(net(HeadKind::QValue), rng)).collect();
                let log_tau = Tensor::scalar(cfg.init_temperature.ln());
                AgentLearner {
                    opt_policy: AdamState::new(cfg.adam(), policy.params().tensors()),
                    opt_q: q.iter().map(|n| AdamState::new(cfg.adam(), n.params().tensors())).collect(),
                    opt_tau: AdamState::new(cfg.temperature_adam(), std::slice::from_ref(&log_tau)),
                    q_target: q.clone(),
                    policy,
                    q,
                    log_tau,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            dair,
            agents,
            updates: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn policies(&self) -> Vec<Network> {
        self.agents.iter().map(|a| a.policy.clone()).collect()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.agents.iter().map(AgentLearner::tau).collect()
    }

    /// Soft Bellman targets per agent, computed outside any gradient graph.
    /// `noise[i]` is the `[batch * action_dim]` standard-normal draw for
    /// agent `i`'s next action.
    pub fn critic_targets(&self, batch: &Batch, noise: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let gamma = self.cfg.gamma;
        let mut out = Vec::with_capacity(self.agents.len());
        for (i, ag) in self.agents.iter().enumerate() {
            let mut tape = Tape::new();
            let pp = ag.policy.bind(&mut tape, false);
            let (mean, log_std, _) = ag.policy.forward_policy(&mut tape, &pp, &batch.next_obs, i)?;
            let (a_next, logp) = sample_with_noise(&mut tape, mean, log_std, &noise[i])?;
            let mut q_min: Option<Vec<f64>> = None;
            for qt in &ag.q_target {
                let qp = qt.bind(&mut tape, false);
                let (q, _) = qt.forward_q(&mut tape, &qp, &batch.next_obs, i, a_next)?;
                let vals = tape.value(q).to_vec();
                q_min = Some(match q_min {
                    Some(m) => m.iter().zip(&vals).map(|(a, b)| a.min(*b)).collect(),
                    None => vals,
                });
            }
            let q_min = q_min.expect("at least one critic");
            let logp = tape.value(logp);
            let tau = if self.cfg.entropy_in_target { ag.tau() } else { 0.0 };
            let targets = (0..batch.len())
                .map(|b| {
                    let not_done = if batch.done[b] { 0.0 } else { 1.0 };
                    batch.rewards[b] + gamma * not_done * (q_min[b] - tau * logp[b])
                })
                .collect();
            out.push(targets);
        }
        Ok(out)
    }

    /// Builds the critic objective: half mean squared Bellman residual summed
    /// over agents and critics, plus the overlap penalty per critic index.
    pub fn critic_graph(&self, tape: &mut Tape, bound: &[Vec<BoundParams>], batch: &Batch, targets: &[Vec<f64>]) -> Result<CriticGraph> {
        let n = batch.len();
        let n_q = self.agents[0].q.len();
        let mut bellman: Option<Var> = None;
        let mut alphas: Vec<Vec<Var>> = vec![Vec::new(); n_q];
        for (i, ag) in self.agents.iter().enumerate() {
            let act = tape.constant(n, ACTION_DIM, batch.actions[i].clone());
            let target = tape.constant(n, 1, targets[i].clone());
            for (k, q_net) in ag.q.iter().enumerate() {
                let (q, alpha) = q_net.forward_q(tape, &bound[i][k], &batch.obs, i, act)?;
                let diff = tape.sub(q, target)?;
                let sq = tape.square(diff);
                let m = tape.mean(sq)?;
                let half = tape.scale(m, 0.5);
                bellman = Some(match bellman {
                    Some(b) => tape.add(b, half)?,
                    None => half,
                });
                if let Some(a) = alpha {
                    alphas[k].push(a);
                }
            }
        }
        let bellman = bellman.ok_or(DairError::Empty("agents"))?;
        let mut overlap: Option<Var> = None;
        if self.dair.q_active() && self.agents.len() > 1 {
            for per_q in &alphas {
                if per_q.len() != self.agents.len() {
                    continue;
                }
                let o = total_overlap_loss(tape, per_q, self.dair.detach_partner)?;
                overlap = Some(match overlap {
                    Some(x) => tape.add(x, o)?,
                    None => o,
                });
            }
        }
        let loss = match overlap {
            Some(o) => joint_q_loss(tape, bellman, o, &self.dair)?,
            None => bellman,
        };
        Ok(CriticGraph { loss, bellman, overlap })
    }

    /// Builds the policy objective `sum_i mean(tau_i log pi_i - min_k Q_ik)`
    /// plus the overlap penalty over the policies' attention.
    pub fn actor_graph(
        &self,
        tape: &mut Tape,
        policy_bound: &[BoundParams],
        q_bound: &[Vec<BoundParams>],
        batch: &Batch,
        noise: &[Vec<f64>],
    ) -> Result<ActorGraph> {
        let mut sac: Option<Var> = None;
        let mut alphas = Vec::new();
        let mut log_probs = Vec::new();
        for (i, ag) in self.agents.iter().enumerate() {
            let (mean, log_std, alpha) = ag.policy.forward_policy(tape, &policy_bound[i], &batch.obs, i)?;
            let (action, logp) = sample_with_noise(tape, mean, log_std, &noise[i])?;
            let mut q_min: Option<Var> = None;
            for (k, q_net) in ag.q.iter().enumerate() {
                let (q, _) = q_net.forward_q(tape, &q_bound[i][k], &batch.obs, i, action)?;
                q_min = Some(match q_min {
                    Some(m) => tape.min(m, q)?,
                    None => q,
                });
            }
            let q_min = q_min.expect("at least one critic");
            let ent = tape.scale(logp, ag.tau());
            let diff = tape.sub(ent, q_min)?;
            let l = tape.mean(diff)?;
            sac = Some(match sac {
                Some(s) => tape.add(s, l)?,
                None => l,
            });
            if let Some(a) = alpha {
                alphas.push(a);
            }
            log_probs.push(logp);
        }
        let sac_loss = sac.ok_or(DairError::Empty("agents"))?;
        let overlap = if self.dair.policy_active() && alphas.len() == self.agents.len() && alphas.len() > 1 {
            Some(total_overlap_loss(tape, &alphas, self.dair.detach_partner)?)
        } else {
            None
        };
        let loss = match overlap {
            Some(o) => joint_policy_loss(tape, sac_loss, o, &self.dair)?,
            None => sac_loss,
        };
        Ok(ActorGraph {
            loss,
            sac_loss,
            overlap,
            log_probs,
        })
    }

    /// Temperature objective `mean(-tau log pi - tau * target_entropy)` as a
    /// graph over a `log tau` leaf.
    pub fn temperature_graph(tape: &mut Tape, log_tau: Var, log_probs: &[f64], target_entropy: f64) -> Result<Var> {
        let tau = tape.exp(log_tau);
        let shifted: Vec<f64> = log_probs.iter().map(|l| -(l + target_entropy)).collect();
        let c = tape.constant(shifted.len(), 1, shifted);
        let prod = tape.mul_scalar_var(c, tau)?;
        Ok(tape.mean(prod)?)
    }

    fn draw_noise_all(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..self.agents.len()).map(|_| draw_noise(rng, n * ACTION_DIM)).collect()
    }

    /// One critic step on `batch`, followed by the Polyak target update.
    /// Returns `(joint loss, overlap)`.
    pub fn critic_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<(f64, f64)> {
        let noise = self.draw_noise_all(batch.len(), rng);
        let targets = self.critic_targets(batch, &noise)?;
        let mut tape = Tape::new();
        let bound: Vec<Vec<BoundParams>> = self
            .agents
            .iter()
            .map(|a| a.q.iter().map(|q| q.bind(&mut tape, true)).collect())
            .collect();
        let g = self.critic_graph(&mut tape, &bound, batch, &targets)?;
        let loss = tape.scalar(g.loss);
        check_finite("critic loss", loss, self.updates)?;
        let overlap = g.overlap.map(|o| tape.scalar(o)).unwrap_or(0.0);
        let grads = tape.backward(g.loss)?;
        for (ag, b) in self.agents.iter_mut().zip(&bound) {
            for ((q, opt), bq) in ag.q.iter_mut().zip(&mut ag.opt_q).zip(b) {
                let p = q.params_mut();
                p.zero_grads();
                p.accumulate_grads(bq, &grads);
                opt.step(p.tensors_mut());
            }
        }
        let polyak = self.cfg.polyak;
        for ag in &mut self.agents {
            for (t, q) in ag.q_target.iter_mut().zip(&ag.q) {
                t.params_mut().polyak_from(q.params(), polyak);
            }
        }
        Ok((loss, overlap))
    }

    /// Policy step with reparameterised actions, then one temperature step
    /// holding the policy fixed. Returns `(joint loss, overlap, temperature loss)`.
    pub fn actor_and_temperature_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<(f64, f64, f64)> {
        let noise = self.draw_noise_all(batch.len(), rng);
        let mut tape = Tape::new();
        let pb: Vec<BoundParams> = self.agents.iter().map(|a| a.policy.bind(&mut tape, true)).collect();
        let qb: Vec<Vec<BoundParams>> = self
            .agents
            .iter()
            .map(|a| a.q.iter().map(|q| q.bind(&mut tape, false)).collect())
            .collect();
        let g = self.actor_graph(&mut tape, &pb, &qb, batch, &noise)?;
        let loss = tape.scalar(g.loss);
        check_finite("actor loss", loss, self.updates)?;
        let overlap = g.overlap.map(|o| tape.scalar(o)).unwrap_or(0.0);
        let log_probs: Vec<Vec<f64>> = g.log_probs.iter().map(|v| tape.value(*v).to_vec()).collect();
        let grads = tape.backward(g.loss)?;
        for (ag, b) in self.agents.iter_mut().zip(&pb) {
            let p = ag.policy.params_mut();
            p.zero_grads();
            p.accumulate_grads(b, &grads);
            ag.opt_policy.step(p.tensors_mut());
        }
        let target = self.cfg.target_entropy;
        let mut temp_loss = 0.0;
        for (ag, lp) in self.agents.iter_mut().zip(&log_probs) {
            let mut t = Tape::new();
            let v = t.param(&ag.log_tau);
            let l = Self::temperature_graph(&mut t, v, lp, target)?;
            temp_loss += t.scalar(l);
            let g = t.backward(l)?;
            ag.log_tau.zero_grad();
            g.accumulate_into(v, &mut ag.log_tau);
            ag.opt_tau.step(std::slice::from_mut(&mut ag.log_tau));
        }
        check_finite("temperature loss", temp_loss, self.updates)?;
        Ok((loss, overlap, temp_loss))
    }

    /// Critic step, actor step, temperature step, target update.
    pub fn update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<UpdateStats> {
        let (critic_loss, q_overlap) = self.critic_update(batch, rng)?;
        let (actor_loss, policy_overlap, temperature_loss) = self.actor_and_temperature_update(batch, rng)?;
        self.updates += 1;
        for ag in &self.agents {
            if !ag.policy.params().all_finite() || ag.q.iter().any(|q| !q.params().all_finite()) {
                return Err(DairError::NonFinite {
                    what: "parameters".into(),
                    update: self.updates,
                });
            }
        }
        Ok(UpdateStats {
            critic_loss,
            q_overlap,
            actor_loss,
            policy_overlap,
            temperature_loss,
        })
    }

    /// Serialises every learnable tensor under `agent{i}.*` prefixes.
    pub fn add_to_checkpoint(&self, ck: &mut crate::nn::Checkpoint) {
        for (i, ag) in self.agents.iter().enumerate() {
            ck.add_params(&format!("agent{i}.policy"), ag.policy.params());
            for (k, q) in ag.q.iter().enumerate() {
                ck.add_params(&format!("agent{i}.q{k}"), q.params());
            }
            for (k, q) in ag.q_target.iter().enumerate() {
                ck.add_params(&format!("agent{i}.q{k}_target"), q.params());
            }
            ck.tensors.push((format!("agent{i}.log_tau"), ag.log_tau.clone()));
        }
    }

    /// Restores tensors written by `add_to_checkpoint`. Optimiser moments
    /// start fresh.
    pub fn load_checkpoint(&mut self, ck: &crate::nn::Checkpoint) -> Result<()> {
        for (i, ag) in self.agents.iter_mut().enumerate() {
            ck.load_params(&format!("agent{i}.policy"), ag.policy.params_mut())?;
            for (k, q) in ag.q.iter_mut().enumerate() {
                ck.load_params(&format!("agent{i}.q{k}"), q.params_mut())?;
            }
            for (k, q) in ag.q_target.iter_mut().enumerate() {
                ck.load_params(&format!("agent{i}.q{k}_target"), q.params_mut())?;
            }
            let key = format!("agent{i}.log_tau");
            let (_, t) = ck
                .tensors
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| DairError::Checkpoint(format!("missing tensor `{key}`")))?;
            ag.log_tau = t.clone();
        }
        Ok(())
    }
}

/// Loads only the policies of a checkpoint written by `add_to_checkpoint`.
pub fn load_policies(ck: &crate::nn::Checkpoint, policies: &mut [Network]) -> Result<()> {
    for (i, p) in policies.iter_mut().enumerate() {
        ck.load_params(&format!("agent{i}.policy"), p.params_mut())?;
    }
    Ok(())
}
