//! Satisfied machine ratio (SMR) toolkit.
//!
//! Computes per-machine satisfaction with compressed images, aggregates it into
//! SMR annotations, analyses machine diversity and JND behaviour, trains
//! full-reference SMR predictors over precomputed features, and uses SMR to
//! pick quantization parameters and score them with BD-rate.

pub mod analysis;
pub mod coding;
pub mod error;
pub mod grid;
pub mod predictor;
pub mod records;
pub mod rng;
pub mod satisfaction;
pub mod smr;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use records::{
    BBox, BitrateTable, ClassificationPrediction, DatasetManifest, Detection, FeatureSet, Payload,
    PerceptionRecord, PerceptionSet, QpLadder, QualityLevel, Task,
};
pub use satisfaction::{DetectionScoringConfig, SatisfactionScore};
pub use smr::{SmrDistribution, SmrTable, SmrType};
pub use coding::{BdRateMethod, BdRateReport, QpDecision, RateSmrCurve, ThresholdSet};
pub use predictor::{MlpRegressor, ModelKind, TrainingConfig};
