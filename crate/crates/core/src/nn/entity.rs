use serde::{Deserialize, Serialize};

use crate::error::{DairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Agent,
    Region,
}

/// Observation slice for one entity. Agents carry effector position and
/// velocity; interaction regions carry position, velocity and goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub kind: EntityKind,
    pub features: Vec<f64>,
}

impl EntityState {
    pub fn agent(features: Vec<f64>) -> Self {
        Self {
            kind: EntityKind::Agent,
            features,
        }
    }

    pub fn region(features: Vec<f64>) -> Self {
        Self {
            kind: EntityKind::Region,
            features,
        }
    }
}

/// A batch of observations stacked per entity kind.
///
/// `agents` is `[batch * n_agents, agent_features]` and `regions` is
/// `[batch * n_regions, region_features]`, both batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityBatch {
    pub batch: usize,
    pub n_agents: usize,
    pub n_regions: usize,
    pub agent_features: usize,
    pub region_features: usize,
    pub agents: Vec<f64>,
    pub regions: Vec<f64>,
}

impl EntityBatch {
    /// Stacks per-sample entity lists. Every sample must list its `n_agents`
    /// agents first, followed by the same number of regions.
    pub fn from_states<'a, I>(samples: I, agent_features: usize, region_features: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [EntityState]>,
    {
        let mut out = Self {
            batch: 0,
            n_agents: 0,
            n_regions: 0,
            agent_features,
            region_features,
            agents: Vec::new(),
            regions: Vec::new(),
        };
        for (b, sample) in samples.into_iter().enumerate() {
            let n_agents = sample.iter().take_while(|e| e.kind == EntityKind::Agent).count();
            let n_regions = sample.len() - n_agents;
            if sample[n_agents..].iter().any(|e| e.kind != EntityKind::Region) {
                return Err(DairError::Layout("agents must precede regions".into()));
            }
            if b == 0 {
                out.n_agents = n_agents;
                out.n_regions = n_regions;
            } else if (n_agents, n_regions) != (out.n_agents, out.n_regions) {
                return Err(DairError::Layout(format!(
                    "sample {b} has {n_agents} agents / {n_regions} regions, expected {} / {}",
                    out.n_agents, out.n_regions
                )));
            }
            for e in sample {
                let (expected, dst) = match e.kind {
                    EntityKind::Agent => (agent_features, &mut out.agents),
                    EntityKind::Region => (region_features, &mut out.regions),
                };
                if e.features.len() != expected {
                    return Err(DairError::FeatureLength {
                        kind: e.kind,
                        expected,
                        got: e.features.len(),
                    });
                }
                dst.extend_from_slice(&e.features);
            }
            out.batch += 1;
        }
        if out.batch == 0 {
            return Err(DairError::Empty("entity batch"));
        }
        if out.n_agents == 0 || out.n_regions == 0 {
            return Err(DairError::Layout("need at least one agent and one region".into()));
        }
        Ok(out)
    }

    pub fn n_entities(&self) -> usize {
        self.n_agents + self.n_regions
    }

    /// Rows `[batch, agent_features]` of agent `agent`.
    pub fn agent_rows(&self, agent: usize) -> Vec<f64> {
        let fa = self.agent_features;
        (0..self.batch)
            .flat_map(|b| {
                let off = (b * self.n_agents + agent) * fa;
                self.agents[off..off + fa].iter().copied()
            })
            .collect()
    }

    /// Rows `[batch * (n_agents - 1), agent_features]` of every agent except `agent`.
    pub fn other_agent_rows(&self, agent: usize) -> Vec<f64> {
        let fa = self.agent_features;
        let mut out = Vec::with_capacity(self.batch * (self.n_agents - 1) * fa);
        for b in 0..self.batch {
            for j in (0..self.n_agents).filter(|j| *j != agent) {
                let off = (b * self.n_agents + j) * fa;
                out.extend_from_slice(&self.agents[off..off + fa]);
            }
        }
        out
    }

    /// Every entity of one sample flattened in global order, with `agent`'s
    /// own features first.
    pub fn flat_row(&self, b: usize, agent: usize) -> Vec<f64> {
        let fa = self.agent_features;
        let fr = self.region_features;
        let mut row = Vec::with_capacity(self.n_agents * fa + self.n_regions * fr);
        let a0 = b * self.n_agents * fa;
        row.extend_from_slice(&self.agents[a0 + agent * fa..a0 + (agent + 1) * fa]);
        for j in (0..self.n_agents).filter(|j| *j != agent) {
            row.extend_from_slice(&self.agents[a0 + j * fa..a0 + (j + 1) * fa]);
        }
        let r0 = b * self.n_regions * fr;
        row.extend_from_slice(&self.regions[r0..r0 + self.n_regions * fr]);
        row
    }
}
