//! Planar bimanual task suite.
//!
//! Agents are kinematic mass points that move by at most `max_step` per
//! tick. Blocks are discs pushed quasi-statically: overlaps are resolved by
//! projecting along the contact normal, with no restitution. The table is
//! `table_width x table_height`, centred on the origin.
//!
//! Push-door layout (x to the right, y up):
//!
//! ```text
//!            wall (x = 0)
//!              |
//!   block      |   goal          door slides +y by `door_travel`;
//!    ( )      [=]  (x)           handle rides on the door centre at
//!              |                 (0, slider * door_travel)
//!              |
//! ```
//!
//! The doorway spans `|y| <= door_gap_half`. A closed door covers it; an
//! opened door exposes `[-gap, -gap + slider * travel]`. Grippers move above
//! the wall, only blocks collide with it. An agent within `door_hold_radius`
//! of the handle drags the door along y; with nobody holding it the slider
//! decays by `door_decay` per tick.

mod physics;

pub use physics::{dist, Table, P2};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DairError, Result};
use crate::nn::EntityState;
use physics::{add, norm, push_out, scale, separate, sub};

/// Positions are multiplied by this in observations.
pub const OBS_POS_SCALE: f64 = 2.0;
pub const AGENT_FEATURES: usize = 4;
pub const REGION_FEATURES: usize = 6;
pub const ACTION_DIM: usize = 2;
const MAX_SPAWN_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Rearrange,
    PushDoor,
    AdjustBar,
    Reach,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rearrange => "rearrange",
            Task::PushDoor => "push-door",
            Task::AdjustBar => "adjust-bar",
            Task::Reach => "reach",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    Sparse,
    Informative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Set from the experiment's top-level `task` key.
    #[serde(skip)]
    pub task: Task,
    pub agents: usize,
    /// Block count for rearrangement; other tasks fix their own layout.
    pub objects: usize,
    pub reward_mode: RewardMode,
    pub collision_penalty: bool,
    /// Push-door variant whose cover stays open once fully opened.
    pub cover_latch: bool,
    /// Accept either bar-end/goal assignment in adjust-bar.
    pub bar_symmetric_goals: bool,
    pub table_width: f64,
    pub table_height: f64,
    pub agent_radius: f64,
    pub block_radius: f64,
    pub success_radius: f64,
    pub max_step: f64,
    pub agent_spawn_side: f64,
    pub object_spawn_radius: f64,
    pub interaction_threshold: f64,
    /// Gripper distance below which a step is a conflict (and penalised
    /// when `collision_penalty` is on).
    pub conflict_threshold: f64,
    pub door_gap_half: f64,
    pub door_travel: f64,
    pub door_hold_radius: f64,
    pub door_decay: f64,
    pub door_open_threshold: f64,
    pub wall_half_thickness: f64,
    pub bar_length: f64,
    pub bar_grip_radius: f64,
    /// Episode length per interaction region.
    pub steps_per_region: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::Rearrange,
            agents: 2,
            objects: 1,
            reward_mode: RewardMode::Sparse,
            collision_penalty: false,
            cover_latch: false,
            bar_symmetric_goals: false,
            table_width: 1.0,
            table_height: 0.7,
            agent_radius: 0.02,
            block_radius: 0.025,
            success_radius: 0.05,
            max_step: 0.03,
            agent_spawn_side: 0.4,
            object_spawn_radius: 0.2,
            interaction_threshold: 0.06,
            conflict_threshold: 0.06,
            door_gap_half: 0.05,
            door_travel: 0.12,
            door_hold_radius: 0.04,
            door_decay: 0.05,
            door_open_threshold: 0.75,
            wall_half_thickness: 0.01,
            bar_length: 0.2,
            bar_grip_radius: 0.04,
            steps_per_region: 50,
        }
    }
}

impl EnvConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            agents: if task == Task::Reach { 1 } else { 2 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DairError::Config(m));
        if self.agents == 0 {
            return bad("env.agents must be >= 1".into());
        }
        if self.task == Task::Rearrange && self.objects == 0 {
            return bad("env.objects must be >= 1 for rearrange".into());
        }
        if self.task == Task::AdjustBar && self.agents < 2 {
            return bad("adjust-bar needs two agents".into());
        }
        for (name, v) in [
            ("table_width", self.table_width),
            ("table_height", self.table_height),
            ("agent_radius", self.agent_radius),
            ("block_radius", self.block_radius),
            ("success_radius", self.success_radius),
            ("max_step", self.max_step),
            ("door_travel", self.door_travel),
            ("bar_length", self.bar_length),
        ] {
            if !(v > 0.0) {
                return bad(format!("env.{name} must be > 0"));
            }
        }
        if self.steps_per_region == 0 {
            return bad("env.steps_per_region must be >= 1".into());
        }
        Ok(())
    }

    /// Number of interaction-region entities (`M` in the observation).
    pub fn n_regions(&self) -> usize {
        match self.task {
            Task::Rearrange => self.objects,
            Task::PushDoor | Task::AdjustBar => 2,
            Task::Reach => 1,
        }
    }

    /// Number of goal-bearing objects.
    pub fn n_goals(&self) -> usize {
        match self.task {
            Task::Rearrange => self.objects,
            Task::PushDoor | Task::Reach => 1,
            Task::AdjustBar => 2,
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps_per_region * self.n_regions()
    }

    pub fn table(&self) -> Table {
        Table {
            half_w: self.table_width / 2.0,
            half_h: self.table_height / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<P2>,
    pub agent_vel: Vec<P2>,
    /// Blocks, or the two bar ends in adjust-bar. Empty for reach.
    pub objects: Vec<P2>,
    pub object_vel: Vec<P2>,
    pub goals: Vec<P2>,
    /// Door slider in `[0, 1]`, 0 = closed.
    pub door: f64,
    pub door_vel: f64,
    pub cover_latched: bool,
    /// Sub-goals already paid in informative mode.
    pub paid_goals: Vec<bool>,
    pub paid_door: bool,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardParts {
    /// Part that depends on the desired goals.
    pub goal: f64,
    /// Door-open bonus (informative) and collision penalty.
    pub extra: f64,
}

impl RewardParts {
    pub fn total(&self) -> f64 {
        self.goal + self.extra
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub success: bool,
    pub door_open: bool,
    /// Distance between agents 0 and 1 (None with a single agent).
    pub gripper_distance: Option<f64>,
    pub interacting: Vec<bool>,
    pub reward: RewardParts,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: WorldState,
    pub reward: f64,
    /// Terminal success; bootstrapping stops here.
    pub done: bool,
    /// Horizon reached without success.
    pub truncated: bool,
    pub info: StepInfo,
}

/// Stateless task definition; every method is a pure function of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    cfg: EnvConfig,
}

fn within(a: P2, b: P2, r: f64) -> bool {
    dist(a, b) <= r
}

/// Sub-goal satisfaction and informative payout for arbitrary goals.
pub fn goal_reward(mode: RewardMode, radius: f64, achieved: &[P2], desired: &[P2], paid: &[bool]) -> (f64, bool) {
    let sat: Vec<bool> = achieved.iter().zip(desired).map(|(a, d)| within(*a, *d, radius)).collect();
    let success = sat.iter().all(|s| *s);
    let r = match mode {
        RewardMode::Sparse => {
            if success {
                1.0
            } else {
                0.0
            }
        }
        RewardMode::Informative => sat.iter().zip(paid).filter(|(s, p)| **s && !**p).count() as f64,
    };
    (r, success)
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_agents(&self) -> usize {
        self.cfg.agents
    }

    pub fn n_regions(&self) -> usize {
        self.cfg.n_regions()
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon()
    }

    fn sample_in_circle(&self, rng: &mut impl Rng) -> P2 {
        let r = self.cfg.object_spawn_radius;
        loop {
            let p = [rng.random_range(-r..=r), rng.random_range(-r..=r)];
            if norm(p) <= r {
                return p;
            }
        }
    }

    fn sample_agent(&self, rng: &mut impl Rng) -> P2 {
        let h = self.cfg.agent_spawn_side / 2.0;
        [rng.random_range(-h..=h), rng.random_range(-h..=h)]
    }

    fn handle_pos(&self, slider: f64) -> P2 {
        [0.0, slider * self.cfg.door_travel]
    }

    fn bar_from(&self, centre: P2, angle: f64) -> [P2; 2] {
        let h = self.cfg.bar_length / 2.0;
        let d = [angle.cos() * h, angle.sin() * h];
        [sub(centre, d), add(centre, d)]
    }

    /// Samples a fresh episode start by rejection.
    pub fn reset(&self, rng: &mut impl Rng) -> Result<WorldState> {
        let c = &self.cfg;
        let table = c.table();
        for _ in 0..MAX_SPAWN_TRIES {
            let agents: Vec<P2> = (0..c.agents).map(|_| self.sample_agent(rng)).collect();
            let agents_ok = agents
                .iter()
                .enumerate()
                .all(|(i, a)| agents[..i].iter().all(|b| dist(*a, *b) > 2.0 * c.agent_radius));
            if !agents_ok {
                continue;
            }
            let (objects, goals) = match c.task {
                Task::Rearrange => {
                    let objs: Vec<P2> = (0..c.objects).map(|_| self.sample_in_circle(rng)).collect();
                    let goals: Vec<P2> = (0..c.objects).map(|_| self.sample_in_circle(rng)).collect();
                    (objs, goals)
                }
                Task::PushDoor => {
                    let band = c.wall_half_thickness + c.block_radius;
                    let b = self.sample_in_circle(rng);
                    let g = self.sample_in_circle(rng);
                    if b[0] > -band || g[0] < band {
                        continue;
                    }
                    (vec![b], vec![g])
                }
                Task::AdjustBar => {
                    let ends = self.bar_from(self.sample_in_circle(rng), rng.random_range(0.0..std::f64::consts::TAU));
                    let goal = self.bar_from(self.sample_in_circle(rng), rng.random_range(0.0..std::f64::consts::TAU));
                    if !ends.iter().chain(&goal).all(|p| table.contains(*p, 0.0)) {
                        continue;
                    }
                    (ends.to_vec(), goal.to_vec())
                }
                Task::Reach => (Vec::new(), vec![self.sample_in_circle(rng)]),
            };
            let discs = matches!(c.task, Task::Rearrange | Task::PushDoor);
            if discs {
                let rb = c.block_radius;
                let blocks_ok = objects.iter().enumerate().all(|(i, o)| {
                    objects[..i].iter().all(|p| dist(*o, *p) > 2.0 * rb)
                        && agents.iter().all(|a| dist(*o, *a) > c.agent_radius + rb)
                });
                let goals_ok = goals
                    .iter()
                    .enumerate()
                    .all(|(i, g)| goals[..i].iter().all(|p| dist(*g, *p) > 2.0 * rb));
                if !blocks_ok || !goals_ok {
                    continue;
                }
            }
            let n_obj = objects.len();
            let n_goals = goals.len();
            let state = WorldState {
                agent_vel: vec![[0.0; 2]; agents.len()],
                agents,
                object_vel: vec![[0.0; 2]; n_obj],
                objects,
                goals,
                door: 0.0,
                door_vel: 0.0,
                cover_latched: false,
                paid_goals: vec![false; n_goals],
                paid_door: false,
                step: 0,
            };
            // An episode that starts solved carries no signal.
            if self.success(&state, &state.goals) {
                continue;
            }
            return Ok(state);
        }
        Err(DairError::Env(format!(
            "spawn rejection sampling exceeded {MAX_SPAWN_TRIES} tries for {}",
            c.task.name()
        )))
    }

    /// Positions whose distance to the goals defines success.
    pub fn achieved_goals(&self, s: &WorldState) -> Vec<P2> {
        match self.cfg.task {
            Task::Reach => vec![s.agents[0]],
            _ => s.objects.clone(),
        }
    }

    /// Interaction-region positions, velocities and goals, in entity order.
    pub fn regions(&self, s: &WorldState) -> Vec<(P2, P2, P2)> {
        let c = &self.cfg;
        match c.task {
            Task::Rearrange | Task::AdjustBar => s
                .objects
                .iter()
                .zip(&s.object_vel)
                .zip(&s.goals)
                .map(|((p, v), g)| (*p, *v, *g))
                .collect(),
            Task::PushDoor => vec![
                (s.objects[0], s.object_vel[0], s.goals[0]),
                (
                    self.handle_pos(s.door),
                    [0.0, s.door_vel * c.door_travel / c.max_step],
                    self.handle_pos(1.0),
                ),
            ],
            Task::Reach => vec![(s.agents[0], s.agent_vel[0], s.goals[0])],
        }
    }

    /// Entity observation: agents first, then regions.
    pub fn observe(&self, s: &WorldState) -> Vec<EntityState> {
        let k = OBS_POS_SCALE;
        let mut out: Vec<EntityState> = s
            .agents
            .iter()
            .zip(&s.agent_vel)
            .map(|(p, v)| EntityState::agent(vec![p[0] * k, p[1] * k, v[0], v[1]]))
            .collect();
        out.extend(
            self.regions(s)
                .into_iter()
                .map(|(p, v, g)| EntityState::region(vec![p[0] * k, p[1] * k, v[0], v[1], g[0] * k, g[1] * k])),
        );
        out
    }

    pub fn door_open(&self, s: &WorldState) -> bool {
        self.cfg.task == Task::PushDoor && s.door >= self.cfg.door_open_threshold
    }

    /// True iff every goal-bearing object is within the success radius.
    pub fn success(&self, s: &WorldState, goals: &[P2]) -> bool {
        self.success_of(&self.achieved_goals(s), goals)
    }

    /// Success predicate on achieved-goal positions alone.
    pub fn success_of(&self, achieved: &[P2], goals: &[P2]) -> bool {
        let r = self.cfg.success_radius;
        let direct = achieved.iter().zip(goals).all(|(a, g)| within(*a, *g, r));
        if direct {
            return true;
        }
        self.cfg.task == Task::AdjustBar
            && self.cfg.bar_symmetric_goals
            && within(achieved[0], goals[1], r)
            && within(achieved[1], goals[0], r)
    }

    /// Goal-dependent reward for arriving at `achieved`, given which
    /// sub-goals were already paid. Used for both stepping and relabelling.
    pub fn goal_reward_for(&self, achieved: &[P2], goals: &[P2], paid: &[bool]) -> f64 {
        let c = &self.cfg;
        match c.reward_mode {
            RewardMode::Sparse => {
                if self.success_of(achieved, goals) {
                    1.0
                } else {
                    0.0
                }
            }
            RewardMode::Informative => goal_reward(c.reward_mode, c.success_radius, achieved, goals, paid).0,
        }
    }

    pub fn gripper_distance(&self, s: &WorldState) -> Option<f64> {
        (s.agents.len() >= 2).then(|| dist(s.agents[0], s.agents[1]))
    }

    pub fn interacting(&self, s: &WorldState) -> Vec<bool> {
        let regions = self.regions(s);
        let t = self.cfg.interaction_threshold;
        s.agents
            .iter()
            .map(|a| regions.iter().any(|(p, _, _)| dist(*a, *p) < t))
            .collect()
    }

    /// Reward for arriving in `s`, whose `paid_*` flags still hold the
    /// values from before the step.
    pub fn compute_reward(&self, s: &WorldState, goals: &[P2]) -> RewardParts {
        let c = &self.cfg;
        let goal = self.goal_reward_for(&self.achieved_goals(s), goals, &s.paid_goals);
        let mut extra = 0.0;
        if c.reward_mode == RewardMode::Informative && self.door_open(s) && !s.paid_door {
            extra += 1.0;
        }
        if c.collision_penalty && self.gripper_distance(s).is_some_and(|d| d < c.conflict_threshold) {
            extra -= 1.0;
        }
        RewardParts { goal, extra }
    }

    /// Advances one tick. `actions` holds one planar command in `[-1, 1]^2`
    /// per agent (values outside are clipped).
    pub fn step(&self, s: &WorldState, actions: &[P2]) -> Result<StepOutcome> {
        let c = &self.cfg;
        if actions.len() != c.agents {
            return Err(DairError::Env(format!("expected {} actions, got {}", c.agents, actions.len())));
        }
        if let Some((i, a)) = actions.iter().enumerate().find(|(_, a)| !a[0].is_finite() || !a[1].is_finite()) {
            return Err(DairError::Env(format!("non-finite action {a:?} for agent {i}")));
        }
        let table = c.table();
        let mut next = s.clone();
        let moves: Vec<P2> = actions
            .iter()
            .map(|a| [a[0].clamp(-1.0, 1.0) * c.max_step, a[1].clamp(-1.0, 1.0) * c.max_step])
            .collect();
        for (p, m) in next.agents.iter_mut().zip(&moves) {
            *p = table.clamp(add(*p, *m), c.agent_radius);
        }

        match c.task {
            Task::Rearrange | Task::PushDoor => self.resolve_blocks(s, &mut next, &moves),
            Task::AdjustBar => self.move_bar(s, &mut next),
            Task::Reach => {}
        }
        if c.task == Task::PushDoor {
            self.move_door(s, &mut next);
        }

        let inv = 1.0 / c.max_step;
        for (i, v) in next.agent_vel.iter_mut().enumerate() {
            *v = scale(sub(next.agents[i], s.agents[i]), inv);
        }
        for (i, v) in next.object_vel.iter_mut().enumerate() {
            *v = scale(sub(next.objects[i], s.objects[i]), inv);
        }
        next.door_vel = next.door - s.door;
        next.step = s.step + 1;

        let reward = self.compute_reward(&next, &next.goals);
        let success = self.success(&next, &next.goals);
        let door_open = self.door_open(&next);
        if c.reward_mode == RewardMode::Informative {
            let achieved = self.achieved_goals(&next);
            for (k, paid) in next.paid_goals.iter_mut().enumerate() {
                *paid |= within(achieved[k], next.goals[k], c.success_radius);
            }
            next.paid_door |= door_open;
        }
        let info = StepInfo {
            success,
            door_open,
            gripper_distance: self.gripper_distance(&next),
            interacting: self.interacting(&next),
            reward,
        };
        let truncated = !success && next.step >= self.horizon();
        Ok(StepOutcome {
            reward: reward.total(),
            done: success,
            truncated,
            state: next,
            info,
        })
    }

    fn resolve_blocks(&self, prev: &WorldState, next: &mut WorldState, moves: &[P2]) {
        let c = &self.cfg;
        let table = c.table();
        let rb = c.block_radius;
        let contact = c.agent_radius + rb;
        for _ in 0..4 {
            let mut moved = false;
            for (a, m) in next.agents.iter().zip(moves) {
                for o in next.objects.iter_mut() {
                    moved |= push_out(*a, o, contact, *m);
                }
            }
            let n = next.objects.len();
            for i in 0..n {
                for j in i + 1..n {
                    let (lo, hi) = next.objects.split_at_mut(j);
                    moved |= separate(&mut lo[i], &mut hi[0], 2.0 * rb);
                }
            }
            for (i, o) in next.objects.iter_mut().enumerate() {
                *o = table.clamp(*o, rb);
                if c.task == Task::PushDoor {
                    self.wall_constraint(prev.objects[i], o, next.door.max(prev.door));
                }
            }
            if !moved {
                break;
            }
        }
    }

    /// Keeps a block out of the wall band unless the open doorway admits it.
    fn wall_constraint(&self, prev: P2, o: &mut P2, slider: f64) {
        let c = &self.cfg;
        let rb = c.block_radius;
        let band = c.wall_half_thickness + rb;
        if o[0].abs() >= band {
            // Crossed the whole band in one tick is impossible at these speeds,
            // but a sign flip without passing the doorway must still be blocked.
            if prev[0].abs() >= band && prev[0].signum() != o[0].signum() && !self.fits_doorway(*o, slider) {
                o[0] = prev[0].signum() * band;
            }
            return;
        }
        if self.fits_doorway(*o, slider) {
            return;
        }
        let side = if prev[0] != 0.0 { prev[0].signum() } else { o[0].signum() };
        let side = if side == 0.0 { -1.0 } else { side };
        o[0] = side * band;
    }

    fn fits_doorway(&self, o: P2, slider: f64) -> bool {
        let c = &self.cfg;
        let open_top = (-c.door_gap_half + slider * c.door_travel).min(c.door_gap_half);
        o[1] - c.block_radius >= -c.door_gap_half && o[1] + c.block_radius <= open_top
    }

    fn move_door(&self, prev: &WorldState, next: &mut WorldState) {
        let c = &self.cfg;
        let handle = self.handle_pos(prev.door);
        let holder = prev
            .agents
            .iter()
            .enumerate()
            .find(|(_, a)| dist(**a, handle) <= c.door_hold_radius)
            .map(|(i, _)| i);
        let mut slider = prev.door;
        if prev.cover_latched {
            slider = 1.0;
        } else if let Some(i) = holder {
            let dy = next.agents[i][1] - prev.agents[i][1];
            slider = (slider + dy / c.door_travel).clamp(0.0, 1.0);
        } else {
            slider = (slider - c.door_decay).max(0.0);
        }
        // A block in the doorway props the door open.
        let rb = c.block_radius;
        let band = c.wall_half_thickness + rb;
        for o in &next.objects {
            if o[0].abs() < band {
                let needed = (o[1] + rb + c.door_gap_half) / c.door_travel;
                slider = slider.max(needed.clamp(0.0, 1.0));
            }
        }
        next.door = slider;
        if c.cover_latch && slider >= 1.0 {
            next.cover_latched = true;
        }
    }

    fn move_bar(&self, prev: &WorldState, next: &mut WorldState) {
        let c = &self.cfg;
        let table = c.table();
        let ends = [prev.objects[0], prev.objects[1]];
        // Each end follows at most one gripper, and one gripper holds at most
        // one end.
        let holder = |e: P2, skip: Option<usize>| {
            prev.agents
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .filter(|(_, a)| dist(**a, e) <= c.bar_grip_radius)
                .min_by(|x, y| dist(*x.1, e).total_cmp(&dist(*y.1, e)))
                .map(|(i, _)| i)
        };
        let h0 = holder(ends[0], None);
        let h1 = holder(ends[1], h0);
        let moved = |e: P2, h: Option<usize>| match h {
            Some(i) => add(e, sub(next.agents[i], prev.agents[i])),
            None => e,
        };
        let e0 = moved(ends[0], h0);
        let e1 = moved(ends[1], h1);
        let axis = sub(e1, e0);
        let len = norm(axis);
        let dir = if len > 1e-12 { scale(axis, 1.0 / len) } else { sub(ends[1], ends[0]) };
        let dir = scale(dir, 1.0 / norm(dir));
        let l = c.bar_length;
        // Rigid re-projection: a single held end swings the bar about the
        // free end; two held ends move it about their midpoint.
        let new = match (h0.is_some(), h1.is_some()) {
            (false, false) => return,
            (true, false) => [sub(e1, scale(dir, l)), e1],
            (false, true) => [e0, add(e0, scale(dir, l))],
            (true, true) => {
                let mid = scale(add(e0, e1), 0.5);
                let half = scale(dir, l / 2.0);
                [sub(mid, half), add(mid, half)]
            }
        };
        if new.iter().all(|p| table.contains(*p, 0.0)) {
            next.objects[0] = new[0];
            next.objects[1] = new[1];
        }
    }
}
