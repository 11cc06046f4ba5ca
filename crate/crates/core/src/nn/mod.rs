//! Entity-attention policy and Q networks.

pub mod checkpoint;
mod entity;
mod network;
mod params;
mod policy;

pub use checkpoint::Checkpoint;
pub use entity::{EntityBatch, EntityKind, EntityState};
pub use network::{Architecture, Forward, HeadKind, NetConfig, Network, LOG_STD_MAX, LOG_STD_MIN};
pub use params::{BoundParams, Linear, Mlp2, ParamId, ParamSet};
pub use policy::{draw_noise, mean_action, sample_action, sample_with_noise};

/// Per-agent attention distribution over all `N + M` entities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub probs: Vec<f64>,
}

impl AttentionWeights {
    pub fn new(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    /// Every entry in `[0, 1]` and the sum within `tol` of one.
    pub fn is_simplex(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p)) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// Splits a `[batch, entities]` row-major matrix into per-row weights.
    pub fn from_rows(values: &[f64], entities: usize) -> Vec<Self> {
        values.chunks(entities).map(|r| Self::new(r.to_vec())).collect()
    }
}
