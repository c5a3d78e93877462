//! Convolutional deep belief network: CRBM layers with deterministic
//! max-pooling, trained greedily with contrastive divergence.
//!
//! Geometry per layer (square maps): visible extent `MR`, filter extent
//! `MN`, hidden extent `MQ = MR - MN + 1`, pooling window `Q` dividing
//! `MQ`, pooled extent `NP = MQ / Q`. Layer `l + 1` sees layer `l`'s pooled
//! maps as its visible units.

mod crbm;
mod stack;

pub use crbm::{
    apply_update, cd_step, hidden_prob, max_pool, phase_stats, sample_bernoulli, visible_prob, CrbmParams, CrbmSpec,
    PhaseStats,
};
pub use stack::{default_specs, extract_features, two_pattern_dataset, pretrain_greedy, CrbmLayer, DbnStack, DbnTrainCfg, Pretrained};
