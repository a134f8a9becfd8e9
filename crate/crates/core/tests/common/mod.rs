#![allow(dead_code)]

use promode::data::UtteranceRecord;
use promode::model::ModelError;
use promode::synth::{fixed_length_utterance, sample_speaker, GenConfig, Inventory};
use promode_tensor::TensorError;

/// Valid synthetic record with exactly `frames` frames.
pub fn record(frames: usize, seed: u64) -> UtteranceRecord {
    let cfg = GenConfig::default();
    let inv = Inventory::new(&cfg);
    let spk = sample_speaker(&cfg, "fixture", 11);
    fixed_length_utterance(&cfg, &inv, &spk, frames, 4, seed).unwrap()
}

pub fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}
