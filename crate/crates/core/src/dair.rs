//! Disentangled-attention regularisation.
//!
//! For agent `i` the penalty is `sum_{j != i} <alpha_i, alpha_j>^2`, averaged
//! over the batch, where each `alpha` is a distribution over all agents and
//! interaction regions. It is added with weight `lambda` to both the actor and
//! the critic objectives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{DairError, Result};
use crate::nn::AttentionWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DairConfig {
    pub lambda: f64,
    pub apply_to_policy: bool,
    pub apply_to_q: bool,
    /// Treat partner attention as a constant when differentiating agent
    /// `i`'s penalty.
    pub detach_partner: bool,
}

impl Default for DairConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            apply_to_policy: true,
            apply_to_q: true,
            detach_partner: false,
        }
    }
}

impl DairConfig {
    pub fn disabled() -> Self {
        Self {
            lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(DairError::Config(format!("dair.lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn policy_active(&self) -> bool {
        self.lambda > 0.0 && self.apply_to_policy
    }

    pub fn q_active(&self) -> bool {
        self.lambda > 0.0 && self.apply_to_q
    }
}

/// Differentiable penalty for `agent_index` over `[batch, entities]` alpha
/// nodes, one per agent. Returns a `[1, 1]` node (batch mean).
pub fn attn_overlap_loss(tape: &mut Tape, alphas: &[Var], agent_index: usize, detach_partner: bool) -> Result<Var> {
    if agent_index >= alphas.len() {
        return Err(DairError::Layout(format!(
            "agent index {agent_index} out of range for {} attention vectors",
            alphas.len()
        )));
    }
    let shape = tape.shape(alphas[agent_index]);
    for a in alphas {
        if tape.shape(*a) != shape {
            return Err(DairError::Layout(format!(
                "attention shapes differ: {:?} vs {:?}",
                tape.shape(*a),
                shape
            )));
        }
    }
    let mine = alphas[agent_index];
    let mut total: Option<Var> = None;
    for (j, &other) in alphas.iter().enumerate() {
        if j == agent_index {
            continue;
        }
        let other = if detach_partner {
            let v = tape.value(other).to_vec();
            tape.constant(shape[0], shape[1], v)
        } else {
            other
        };
        let prod = tape.mul(mine, other)?;
        let dot = tape.row_sum(prod);
        let sq = tape.square(dot);
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    match total {
        Some(t) => Ok(tape.mean(t)?),
        None => Ok(tape.constant(1, 1, vec![0.0])),
    }
}

/// Sum of every agent's penalty. With `detach_partner == false` each term
/// back-propagates into both alphas of the pair.
pub fn total_overlap_loss(tape: &mut Tape, alphas: &[Var], detach_partner: bool) -> Result<Var> {
    let mut total: Option<Var> = None;
    for i in 0..alphas.len() {
        let l = attn_overlap_loss(tape, alphas, i, detach_partner)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or(DairError::Empty("attention list"))
}

fn joint(tape: &mut Tape, rl_loss: Var, overlap: Var, lambda: f64, active: bool) -> Result<Var> {
    if !active || lambda == 0.0 {
        return Ok(rl_loss);
    }
    let scaled = tape.scale(overlap, lambda);
    Ok(tape.add(rl_loss, scaled)?)
}

/// `sac_loss + lambda * overlap` on the policy branch.
pub fn joint_policy_loss(tape: &mut Tape, sac_loss: Var, overlap: Var, cfg: &DairConfig) -> Result<Var> {
    joint(tape, sac_loss, overlap, cfg.lambda, cfg.apply_to_policy)
}

/// `critic_loss + lambda * overlap` on the Q branch.
pub fn joint_q_loss(tape: &mut Tape, critic_loss: Var, overlap: Var, cfg: &DairConfig) -> Result<Var> {
    joint(tape, critic_loss, overlap, cfg.lambda, cfg.apply_to_q)
}

/// Plain `sum_{j != i} <alpha_i, alpha_j>^2` for one state.
pub fn overlap_value(alphas: &[AttentionWeights], agent_index: usize) -> Result<f64> {
    let n = alphas.first().map(|a| a.probs.len()).ok_or(DairError::Empty("attention list"))?;
    if alphas.iter().any(|a| a.probs.len() != n) {
        return Err(DairError::Layout("attention vectors differ in length".into()));
    }
    let mine = &alphas[agent_index].probs;
    Ok(alphas
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != agent_index)
        .map(|(_, a)| mine.iter().zip(&a.probs).map(|(x, y)| x * y).sum::<f64>().powi(2))
        .sum())
}

/// Mean of `<alpha_1, alpha_2>` over paired states (not squared); logging only.
pub fn batch_overlap_metric(first: &[AttentionWeights], second: &[AttentionWeights]) -> Result<f64> {
    if first.is_empty() {
        return Err(DairError::Empty("overlap batch"));
    }
    if first.len() != second.len() {
        return Err(DairError::Layout(format!(
            "overlap batches differ in length: {} vs {}",
            first.len(),
            second.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in first.iter().zip(second) {
        if a.probs.len() != b.probs.len() {
            return Err(DairError::Layout("attention vectors differ in length".into()));
        }
        total += a.probs.iter().zip(&b.probs).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(total / first.len() as f64)
}
