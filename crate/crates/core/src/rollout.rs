//! Running policies in an environment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::env::{Env, WorldState, ACTION_DIM, AGENT_FEATURES, P2, REGION_FEATURES};
use crate::error::Result;
use crate::metrics::{conflict_rate, domination_rate, finish_steps, manipulating_counts, EpisodeMetrics};
use crate::nn::{mean_action, sample_action, EntityBatch, EntityState, Network};
use crate::sac::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    /// `tanh(mean)`, no sampling.
    Mean,
}

/// Snapshot of one step for trajectory dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub agents: Vec<P2>,
    pub objects: Vec<P2>,
    pub goals: Vec<P2>,
    pub door: f64,
    /// Per-agent policy attention over all entities; absent for MLP policies.
    pub alpha: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub transitions: Vec<Transition>,
    pub metrics: EpisodeMetrics,
    pub steps: usize,
    pub trace: Vec<StepRecord>,
}

/// One action per agent plus each policy's attention row.
pub fn act(policies: &[Network], obs: &[EntityState], mode: ActionMode, rng: &mut impl Rng) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    let batch = EntityBatch::from_states([obs], AGENT_FEATURES, REGION_FEATURES)?;
    let mut actions = Vec::with_capacity(policies.len());
    let mut alphas = Vec::with_capacity(policies.len());
    for (i, p) in policies.iter().enumerate() {
        let mut tape = Tape::new();
        let bp = p.bind(&mut tape, false);
        let (mean, log_std, alpha) = p.forward_policy(&mut tape, &bp, &batch, i)?;
        let a = match mode {
            ActionMode::Sample => sample_action(&mut tape, mean, log_std, rng)?.0,
            ActionMode::Mean => mean_action(&mut tape, mean),
        };
        actions.push(tape.value(a).to_vec());
        if let Some(al) = alpha {
            alphas.push(tape.value(al).to_vec());
        }
    }
    let alphas = (alphas.len() == policies.len()).then_some(alphas);
    Ok((actions, alphas))
}

fn record(s: &WorldState, step: usize, alpha: Option<Vec<Vec<f64>>>) -> StepRecord {
    StepRecord {
        step,
        agents: s.agents.clone(),
        objects: s.objects.clone(),
        goals: s.goals.clone(),
        door: s.door,
        alpha,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plays one episode from a fresh reset. `trace` is filled only when
/// `keep_trace` is set.
pub fn run_episode(env: &Env, policies: &[Network], mode: ActionMode, rng: &mut impl Rng, keep_trace: bool) -> Result<EpisodeResult> {
    let mut state = env.reset(rng)?;
    let horizon = env.horizon();
    let mut obs = env.observe(&state);
    let mut transitions = Vec::with_capacity(horizon);
    let mut flags = Vec::with_capacity(horizon);
    let mut distances = Vec::with_capacity(horizon);
    let mut overlaps = Vec::new();
    let mut trace = Vec::new();
    let mut success_step = env.success(&state, &state.goals).then_some(0);
    let mut t = 0;
    while success_step.is_none() && t < horizon {
        let (actions, alpha) = act(policies, &obs, mode, rng)?;
        if let Some(al) = &alpha {
            if al.len() >= 2 {
                overlaps.push(dot(&al[0], &al[1]));
            }
        }
        if keep_trace {
            trace.push(record(&state, t, alpha));
        }
        let cmds: Vec<P2> = actions.iter().map(|a| [a[0], a[1]]).collect();
        debug_assert!(actions.iter().all(|a| a.len() == ACTION_DIM));
        let out = env.step(&state, &cmds)?;
        let next_obs = env.observe(&out.state);
        transitions.push(Transition {
            obs,
            actions,
            reward: out.reward,
            extra_reward: out.info.reward.extra,
            next_obs: next_obs.clone(),
            achieved_goals: env.achieved_goals(&out.state),
            desired_goals: out.state.goals.clone(),
            done: out.done,
        });
        flags.push(out.info.interacting.clone());
        if let Some(d) = out.info.gripper_distance {
            distances.push(d);
        }
        t += 1;
        if out.done {
            success_step = Some(t);
        }
        state = out.state;
        obs = next_obs;
    }
    if keep_trace {
        let (_, alpha) = act(policies, &obs, ActionMode::Mean, rng)?;
        trace.push(record(&state, t, alpha));
    }
    let counts = manipulating_counts(&flags)?;
    let (finish, _) = finish_steps(success_step, horizon);
    let metrics = EpisodeMetrics {
        success: success_step.is_some(),
        finish_steps: finish,
        domination_rate: domination_rate(&counts),
        no_manipulation: counts.iter().sum::<usize>() == 0,
        conflict_rate: conflict_rate(&distances, env.config().conflict_threshold),
        mean_overlap: (!overlaps.is_empty()).then(|| overlaps.iter().sum::<f64>() / overlaps.len() as f64),
        manipulating_steps: counts,
    };
    Ok(EpisodeResult {
        transitions,
        metrics,
        steps: t,
        trace,
    })
}
