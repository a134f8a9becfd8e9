use promode_tensor::Real;

use super::{ModelConfig, ModelError};
use crate::data::{length_regulate, preprocess_energy, EnergyConfig, UtteranceRecord, MEL_BANDS};
use crate::masking::FrameMask;

/// F0 inputs and predictions are carried in units of this many Hz.
pub const F0_UNIT_HZ: f64 = 100.0;
/// Energy head outputs are carried in units of this many log₂ steps.
pub const ENERGY_UNIT: f64 = 10.0;

/// Frame-aligned model inputs for one utterance under one mask.
///
/// Energy inputs are smoothed separately within each unmasked run, so no
/// value stored at a masked frame reaches the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<F> {
    pub frames: usize,
    pub mask: Vec<bool>,
    /// F0 in [`F0_UNIT_HZ`] units, 0 where unvoiced.
    pub f0: Vec<F>,
    /// log₂ energy, divided by [`ENERGY_UNIT`].
    pub energy: Vec<F>,
    pub vuv: Vec<F>,
    /// `[frames, 10]` row-major.
    pub mel: Vec<F>,
    /// ln(1 + duration of the phoneme covering the frame).
    pub log_duration: Vec<F>,
    pub phoneme: Vec<usize>,
    pub speaker: Vec<F>,
}

/// Reconstruction targets for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<F> {
    pub f0_hz: Vec<F>,
    /// Preprocessed (zeroed, floored, log₂, smoothed) energy.
    pub energy_log: Vec<F>,
    pub mel: Vec<F>,
    pub vuv: Vec<F>,
}

fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < mask.len() {
        if mask[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < mask.len() && !mask[t] {
            t += 1;
        }
        out.push((start, t));
    }
    out
}

pub fn energy_targets(
    record: &UtteranceRecord,
    energy: &EnergyConfig,
) -> Result<Vec<f64>, ModelError> {
    preprocess_energy(&record.energy_raw, &record.vuv, energy)
        .map_err(|e| ModelError::Input(e.to_string()))
}

impl<F: Real> ModelInput<F> {
    pub fn new(
        record: &UtteranceRecord,
        mask: &FrameMask,
        cfg: &ModelConfig,
        energy: &EnergyConfig,
    ) -> Result<Self, ModelError> {
        let t = record.frames();
        let violations = record.validate();
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(ModelError::Input(format!(
                "invalid record {}: {}",
                record.id,
                text.join("; ")
            )));
        }
        if mask.len() != t {
            return Err(ModelError::Input(format!(
                "mask length {} for {t} frames",
                mask.len()
            )));
        }
        if record.speaker_vec.len() != cfg.speaker_dim {
            return Err(ModelError::Input(format!(
                "speaker vector has {} values, model expects {}",
                record.speaker_vec.len(),
                cfg.speaker_dim
            )));
        }
        if let Some(&p) = record
            .phoneme_ids
            .iter()
            .find(|&&p| p as usize >= cfg.phoneme_vocab)
        {
            return Err(ModelError::Input(format!(
                "phoneme id {p} outside vocabulary of {}",
                cfg.phoneme_vocab
            )));
        }
        let mut energy_in = vec![0.0f64; t];
        for (a, b) in runs(&mask.flags) {
            let part = preprocess_energy(&record.energy_raw[a..b], &record.vuv[a..b], energy)
                .map_err(|e| ModelError::Input(e.to_string()))?;
            energy_in[a..b].copy_from_slice(&part);
        }
        let durations: Vec<u32> = record.durations_frames.clone();
        let per_frame_duration = length_regulate(&durations, &durations)
            .map_err(|e| ModelError::Input(e.to_string()))?;
        let phoneme = length_regulate(&record.phoneme_ids, &durations)
            .map_err(|e| ModelError::Input(e.to_string()))?;
        let keep = |t: usize| !mask.flags[t];
        Ok(Self {
            frames: t,
            mask: mask.flags.clone(),
            f0: (0..t)
                .map(|i| {
                    if keep(i) {
                        F::c(f64::from(record.f0_hz[i]) / F0_UNIT_HZ)
                    } else {
                        F::zero()
                    }
                })
                .collect(),
            energy: (0..t)
                .map(|i| {
                    if keep(i) {
                        F::c(energy_in[i] / ENERGY_UNIT)
                    } else {
                        F::zero()
                    }
                })
                .collect(),
            vuv: (0..t)
                .map(|i| {
                    if keep(i) {
                        F::c(f64::from(record.vuv[i]))
                    } else {
                        F::zero()
                    }
                })
                .collect(),
            mel: (0..t)
                .flat_map(|i| (0..MEL_BANDS).map(move |k| (i, k)))
                .map(|(i, k)| {
                    if keep(i) {
                        F::c(f64::from(record.mel10[i][k]))
                    } else {
                        F::zero()
                    }
                })
                .collect(),
            log_duration: per_frame_duration
                .iter()
                .map(|&d| F::c(f64::from(d).ln_1p()))
                .collect(),
            phoneme: phoneme.iter().map(|&p| p as usize).collect(),
            speaker: record
                .speaker_vec
                .iter()
                .map(|&v| F::c(f64::from(v)))
                .collect(),
        })
    }
}

impl<F: Real> Targets<F> {
    pub fn new(record: &UtteranceRecord, energy: &EnergyConfig) -> Result<Self, ModelError> {
        let e = energy_targets(record, energy)?;
        Ok(Self {
            f0_hz: record.f0_hz.iter().map(|&v| F::c(f64::from(v))).collect(),
            energy_log: e.iter().map(|&v| F::c(v)).collect(),
            mel: record
                .mel10
                .iter()
                .flat_map(|r| r.iter().map(|&v| F::c(f64::from(v))))
                .collect(),
            vuv: record.vuv.iter().map(|&v| F::c(f64::from(v))).collect(),
        })
    }
}
