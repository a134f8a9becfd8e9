//! Objective prosody metrics and the continuation evaluation protocol.

pub mod dtw;
pub mod eval;
pub mod plot;
pub mod scores;

pub use dtw::{dtw, Alignment};
pub use eval::{
    aggregate, continuation_split, evaluate_continuation, evaluate_speaker_mean_baseline,
    evaluate_with, prompt_sensitivity, split_at_fraction, swap_prompt, EnergyBlock, EvalConfig,
    Evaluation, F0Block, MetricReport, SpeakerMeans, UtteranceMetrics,
};
pub use scores::{
    error_metrics, mean_std, phoneme_mae, pitch_accuracy, stats_diff, ErrorMetrics, Feature, Level,
    PitchAccuracy, PitchMode, StatsDiff,
};

use thiserror::Error;

use crate::data::PreprocessError;
use crate::model::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("no utterances to evaluate")]
    EmptySplit,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("pitch threshold must be positive, got {0} cents")]
    Threshold(f64),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model: {0}")]
    Model(String),
    #[error("report format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<PreprocessError> for MetricError {
    fn from(e: PreprocessError) -> Self {
        MetricError::Input(e.to_string())
    }
}

impl From<ModelError> for MetricError {
    fn from(e: ModelError) -> Self {
        MetricError::Model(e.to_string())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}
