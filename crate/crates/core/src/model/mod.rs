//! The ProMode prosody model.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod input;
pub mod layers;
pub mod network;

use promode_tensor::{ParamStore, Real, Tape, TensorError};
use thiserror::Error;

pub use check::full_model_gradcheck;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION,
};
pub use config::{Ablations, ModelConfig, ABLATION_NAMES};
pub use input::{ModelInput, Targets, ENERGY_UNIT, F0_UNIT_HZ};
pub use network::{Forward, LossVars, Modulation, Network, PredVars, TextSlot, COMPONENTS};

use crate::data::{EnergyConfig, UtteranceRecord, MEL_BANDS};
use crate::masking::FrameMask;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid model input: {0}")]
    Input(String),
    #[error("mask selects no frames; there is nothing to reconstruct")]
    EmptyMask,
}

/// Per-frame predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub f0_hz: Vec<f32>,
    pub energy_log: Vec<f32>,
    pub mel10: Vec<[f32; MEL_BANDS]>,
    pub vuv_logit: Vec<f32>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn from_vars<F: Real>(tape: &Tape<'_, F>, p: &PredVars) -> Self {
        let col = |v| {
            tape.value(v)
                .iter()
                .map(|x: &F| x.as_f64() as f32)
                .collect::<Vec<f32>>()
        };
        let mel = col(p.mel);
        Self {
            f0_hz: col(p.f0),
            energy_log: col(p.energy),
            mel10: mel
                .chunks_exact(MEL_BANDS)
                .map(|c| c.try_into().expect("mel width"))
                .collect(),
            vuv_logit: col(p.vuv),
        }
    }

    /// Ground truth as predictions, with saturated vuv logits.
    pub fn ground_truth(
        record: &UtteranceRecord,
        energy: &EnergyConfig,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            f0_hz: record.f0_hz.clone(),
            energy_log: input::energy_targets(record, energy)?
                .iter()
                .map(|&v| v as f32)
                .collect(),
            mel10: record.mel10.clone(),
            vuv_logit: record
                .vuv
                .iter()
                .map(|&v| if v == 1 { 20.0 } else { -20.0 })
                .collect(),
        })
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            f0_hz: self.f0_hz[start..end].to_vec(),
            energy_log: self.energy_log[start..end].to_vec(),
            mel10: self.mel10[start..end].to_vec(),
            vuv_logit: self.vuv_logit[start..end].to_vec(),
        }
    }
}

/// Scalar loss values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub components: Vec<(String, f64)>,
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct ProMode<F: Real> {
    pub net: Network,
    pub params: ParamStore<F>,
    pub energy: EnergyConfig,
}

impl<F: Real> ProMode<F> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let (net, params) = Network::build(config, seed)?;
        Ok(Self {
            net,
            params,
            energy: EnergyConfig::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Loss and, when `grads` is set, parameter gradients for one utterance.
    pub fn loss(
        &self,
        record: &UtteranceRecord,
        mask: &FrameMask,
        grads: bool,
    ) -> Result<(LossReport, Option<promode_tensor::Gradients<F>>), ModelError> {
        let input = ModelInput::new(record, mask, self.config(), &self.energy)?;
        let targets = Targets::new(record, &self.energy)?;
        let mut tape = Tape::with_params(&self.params);
        let fwd = self
            .net
            .forward(&mut tape, &input, !self.config().ablations.disable_aol)?;
        let loss = self
            .net
            .loss(&mut tape, fwd.pd1.as_ref(), &fwd.pd2, &targets, &input.mask)?;
        let report = LossReport {
            total: tape.scalar(loss.total).as_f64(),
            components: loss
                .components
                .iter()
                .map(|(n, v)| (n.clone(), tape.scalar(*v).as_f64()))
                .collect(),
        };
        let g = if grads {
            tape.backward(loss.total)?;
            Some(tape.param_gradients())
        } else {
            None
        };
        Ok((report, g))
    }

    /// PD2 predictions for every frame of `record` under `mask`.
    pub fn predict(
        &self,
        record: &UtteranceRecord,
        mask: &FrameMask,
    ) -> Result<Predictions, ModelError> {
        if self.config().oracle {
            return Predictions::ground_truth(record, &self.energy);
        }
        let input = ModelInput::new(record, mask, self.config(), &self.energy)?;
        let mut tape = Tape::with_params(&self.params);
        let fwd = self.net.forward(&mut tape, &input, false)?;
        Ok(Predictions::from_vars(&tape, &fwd.pd2))
    }

    /// Latent for `record` under `mask`.
    pub fn latent(
        &self,
        record: &UtteranceRecord,
        mask: &FrameMask,
    ) -> Result<promode_tensor::Tensor<F>, ModelError> {
        let input = ModelInput::new(record, mask, self.config(), &self.energy)?;
        let mut tape = Tape::with_params(&self.params);
        let frames = self
            .net
            .embed_inputs(&mut tape, &input, TextSlot::Present)?;
        let z = self.net.encode(&mut tape, frames)?;
        Ok(tape.tensor(z))
    }
}
