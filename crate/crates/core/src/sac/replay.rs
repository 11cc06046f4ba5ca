//! Episode-granular replay storage and hindsight goal relabelling.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, OBS_POS_SCALE, P2};
use crate::nn::{EntityKind, EntityState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<EntityState>,
    /// One action vector per agent.
    pub actions: Vec<Vec<f64>>,
    /// Shared reward.
    pub reward: f64,
    /// Goal-independent part of `reward` (door bonus, collision penalty),
    /// kept so relabelled rewards can be recomputed.
    pub extra_reward: f64,
    pub next_obs: Vec<EntityState>,
    /// Achieved goals in the next state.
    pub achieved_goals: Vec<P2>,
    pub desired_goals: Vec<P2>,
    pub done: bool,
}

/// Overwrites the goal features of goal-bearing regions. Region `k` carries
/// goal `k`.
pub fn write_goals(obs: &mut [EntityState], goals: &[P2]) {
    let mut regions = obs.iter_mut().filter(|e| e.kind == EntityKind::Region);
    for g in goals {
        if let Some(r) = regions.next() {
            r.features[4] = g[0] * OBS_POS_SCALE;
            r.features[5] = g[1] * OBS_POS_SCALE;
        }
    }
}

/// Index of the future step used for each relabelled copy of step `t`,
/// uniform over `t + 1 .. len`.
pub fn sample_future(t: usize, len: usize, rng: &mut impl Rng) -> Option<usize> {
    (t + 1 < len).then(|| rng.random_range(t + 1..len))
}

/// Copy of `tr` aimed at `goals`. `paid` lists which sub-goals were already
/// satisfied earlier in the episode under the same goals.
pub fn relabel_one(env: &Env, tr: &Transition, goals: &[P2], paid: &[bool]) -> Transition {
    let mut out = tr.clone();
    write_goals(&mut out.obs, goals);
    write_goals(&mut out.next_obs, goals);
    out.desired_goals = goals.to_vec();
    out.reward = env.goal_reward_for(&tr.achieved_goals, goals, paid) + tr.extra_reward;
    out.done = env.success_of(&tr.achieved_goals, goals);
    out
}

/// Future-strategy relabelling: every transition is followed by up to `k`
/// copies whose desired goals are achieved goals from strictly later steps
/// of the same episode. The last step has no future and gets no copies.
pub fn her_relabel(env: &Env, episode: &[Transition], k: usize, rng: &mut impl Rng) -> Vec<Transition> {
    let radius = env.config().success_radius;
    let mut out = Vec::with_capacity(episode.len() * (k + 1));
    for (t, tr) in episode.iter().enumerate() {
        out.push(tr.clone());
        for _ in 0..k {
            let Some(f) = sample_future(t, episode.len(), rng) else {
                break;
            };
            let goals = &episode[f].achieved_goals;
            let paid: Vec<bool> = (0..goals.len())
                .map(|j| episode[..t].iter().any(|p| crate::env::dist(p.achieved_goals[j], goals[j]) <= radius))
                .collect();
            out.push(relabel_one(env, tr, goals, &paid));
        }
    }
    out
}

/// Fixed-capacity transition store that evicts whole episodes, oldest first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    episode_lens: VecDeque<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
            episode_lens: VecDeque::new(),
        }
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

    pub fn episodes(&self) -> usize {
        self.episode_lens.len()
    }

    /// Stores one (possibly relabelled) episode. An episode longer than the
    /// whole capacity keeps only its first `capacity` transitions.
    pub fn push_episode(&mut self, mut episode: Vec<Transition>) {
        if episode.is_empty() || self.capacity == 0 {
            return;
        }
        episode.truncate(self.capacity);
        while self.items.len() + episode.len() > self.capacity {
            let n = self.episode_lens.pop_front().expect("non-empty buffer has an episode");
            self.items.drain(..n);
        }
        self.episode_lens.push_back(episode.len());
        self.items.extend(episode);
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.episode_lens.clear();
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample with replacement; `None` below one full batch.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}
