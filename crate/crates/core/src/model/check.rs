//! Finite-difference check of the complete training loss.

use promode_tensor::{grad_check_params, GradCheckOptions, GradCheckReport, Tape, TensorError};
use rand::Rng;

use super::{ModelConfig, ModelError, ModelInput, ProMode, Targets};
use crate::data::EnergyConfig;
use crate::masking::sample_mask;
use crate::seed;
use crate::synth::{fixed_length_utterance, sample_speaker, GenConfig, Inventory};

/// Gradient check of the full loss on one `frames`-frame synthetic utterance,
/// with every parameter (zero-initialized ones included) drawn uniformly from
/// ±0.3 so that no branch is trivially inactive.
pub fn full_model_gradcheck(
    cfg: &ModelConfig,
    frames: usize,
    seed_value: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut model = ProMode::<f64>::new(cfg, seed_value)?;
    let mut rng = seed::rng(seed_value, &[seed::tag("gradcheck")]);
    for p in model.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    let gen = GenConfig::default();
    let inv = Inventory::new(&gen);
    let speaker = sample_speaker(&gen, "gradcheck", seed_value);
    let record = fixed_length_utterance(&gen, &inv, &speaker, frames, 4, seed_value)
        .map_err(|e| ModelError::Input(e.to_string()))?;
    let mask = sample_mask(&record.durations_frames, cfg.mask_ratio, seed_value)
        .map_err(|e| ModelError::Input(e.to_string()))?;
    let energy = EnergyConfig::default();
    let input = ModelInput::<f64>::new(&record, &mask, cfg, &energy)?;
    let targets = Targets::<f64>::new(&record, &energy)?;
    let opts = GradCheckOptions {
        per_param: Some(24),
        // Loss values near 1e2 give central-difference roundoff near 1e-8.
        floor: 1e-3,
        ..GradCheckOptions::default()
    };
    let net = &model.net;
    let with_pd1 = !cfg.ablations.disable_aol;
    let to_tensor = |e: ModelError| match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    };
    Ok(grad_check_params(
        &model.params,
        opts,
        |tape: &mut Tape<f64>| {
            let fwd = net.forward(tape, &input, with_pd1).map_err(to_tensor)?;
            let l = net
                .loss(tape, fwd.pd1.as_ref(), &fwd.pd2, &targets, &input.mask)
                .map_err(to_tensor)?;
            Ok(l.total)
        },
    )?)
}
