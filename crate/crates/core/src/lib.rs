//! Learned pseudo-label refinement and per-class confidence thresholds for
//! class-imbalanced semi-supervised learning.
//!
//! * [`offsets`] fits per-class logit offsets on a labeled holdout.
//! * [`thresholds`] fits per-class confidence cutoffs for a target accuracy.
//! * [`curriculum`] schedules both over training with moving averages.
//! * [`pl_engine`] turns logits into refined, masked pseudo-labels.
//! * [`metrics`] has the pseudo-label diagnostics.
//! * [`synthdata`] and [`sim`] provide a desk-scale end-to-end experiment.

pub mod curriculum;
pub mod error;
pub mod logits;
pub mod metrics;
pub mod offsets;
pub mod pl_engine;
pub mod sim;
pub mod synthdata;
pub mod thresholds;

pub use error::{Error, Result};
pub use logits::{LabeledBatch, LogitMatrix, ProbMatrix};
pub use offsets::{OffsetFitConfig, OffsetVector};
pub use thresholds::{ClassWeights, ThresholdFitConfig, ThresholdFitReport, ThresholdVector};
