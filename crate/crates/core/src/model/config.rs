use serde::{Deserialize, Serialize};

use super::ModelError;

/// Inputs or modules taken out of the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Drop the PD1 acoustic-only loss.
    pub disable_aol: bool,
    /// One modulation six-tuple per utterance instead of one per frame.
    pub global_adaln: bool,
    pub drop_f0: bool,
    pub drop_energy: bool,
    pub drop_duration: bool,
    pub drop_context_text: bool,
    pub drop_mel10: bool,
}

/// Ablation names accepted by `--ablate`.
pub const ABLATION_NAMES: [&str; 7] = [
    "aol",
    "dur",
    "mel10",
    "context-text",
    "f0",
    "energy",
    "modadaln",
];

impl Ablations {
    pub fn apply(&mut self, name: &str) -> Result<(), ModelError> {
        match name {
            "aol" => self.disable_aol = true,
            "dur" => self.drop_duration = true,
            "mel10" => self.drop_mel10 = true,
            "context-text" => self.drop_context_text = true,
            "f0" => self.drop_f0 = true,
            "energy" => self.drop_energy = true,
            "modadaln" => self.global_adaln = true,
            other => {
                return Err(ModelError::Config(format!(
                    "unknown ablation {other:?}; expected one of {}",
                    ABLATION_NAMES.join("|")
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of each per-feature embedding stack.
    pub feature_dim: usize,
    /// Width of the combined frame embedding.
    pub model_dim: usize,
    pub conv_layers: usize,
    pub conv_hidden: usize,
    pub conv_kernel: usize,
    pub latent_count: usize,
    pub latent_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ff: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_head_dim: usize,
    pub decoder_ff: usize,
    /// One conditional stack feeding all four heads instead of one per head.
    pub shared_pd2_trunk: bool,
    pub phoneme_vocab: usize,
    pub speaker_dim: usize,
    pub mask_ratio: f64,
    pub ablations: Ablations,
    /// Test hook: predictions copy the ground truth. Never set for trained models.
    pub oracle: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            feature_dim: 128,
            model_dim: 768,
            conv_layers: 4,
            conv_hidden: 512,
            conv_kernel: 7,
            latent_count: 64,
            latent_dim: 768,
            encoder_layers: 18,
            encoder_heads: 8,
            encoder_ff: 3072,
            decoder_layers: 4,
            decoder_heads: 4,
            decoder_head_dim: 64,
            decoder_ff: 512,
            shared_pd2_trunk: false,
            phoneme_vocab: 40,
            speaker_dim: 16,
            mask_ratio: 0.6,
            ablations: Ablations::default(),
            oracle: false,
        }
    }

    pub fn desk() -> Self {
        Self {
            feature_dim: 64,
            model_dim: 256,
            conv_hidden: 512,
            latent_count: 16,
            latent_dim: 256,
            encoder_layers: 6,
            encoder_ff: 1024,
            ..Self::full()
        }
    }

    /// Single-core budget: small enough for 5000 iterations in minutes.
    pub fn compact() -> Self {
        Self {
            feature_dim: 16,
            model_dim: 32,
            conv_layers: 2,
            conv_hidden: 64,
            conv_kernel: 7,
            latent_count: 8,
            latent_dim: 32,
            encoder_layers: 2,
            encoder_heads: 2,
            encoder_ff: 64,
            decoder_layers: 2,
            decoder_heads: 2,
            decoder_head_dim: 16,
            decoder_ff: 64,
            ..Self::full()
        }
    }

    /// Gradient-check scale: every width 16, four latents.
    pub fn tiny() -> Self {
        Self {
            feature_dim: 16,
            model_dim: 16,
            conv_layers: 2,
            conv_hidden: 16,
            conv_kernel: 3,
            latent_count: 4,
            latent_dim: 16,
            encoder_layers: 2,
            encoder_heads: 2,
            encoder_ff: 16,
            decoder_layers: 2,
            decoder_heads: 2,
            decoder_head_dim: 8,
            decoder_ff: 16,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "compact" => Some(Self::compact()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn decoder_dim(&self) -> usize {
        self.decoder_heads * self.decoder_head_dim
    }

    /// Number of PD2 conditional stacks.
    pub fn pd2_stacks(&self) -> usize {
        if self.shared_pd2_trunk {
            1
        } else {
            4
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let a = &self.ablations;
        if a.drop_f0 && a.drop_energy && a.drop_mel10 {
            return err("ablations remove every acoustic input (f0, energy, mel10)".into());
        }
        let positive = [
            ("feature_dim", self.feature_dim),
            ("model_dim", self.model_dim),
            ("conv_hidden", self.conv_hidden),
            ("latent_count", self.latent_count),
            ("latent_dim", self.latent_dim),
            ("encoder_heads", self.encoder_heads),
            ("encoder_ff", self.encoder_ff),
            ("decoder_heads", self.decoder_heads),
            ("decoder_head_dim", self.decoder_head_dim),
            ("decoder_ff", self.decoder_ff),
            ("phoneme_vocab", self.phoneme_vocab),
            ("speaker_dim", self.speaker_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if !self.model_dim.is_multiple_of(2) {
            return err(format!(
                "model_dim {} must be even for rotary rotation",
                self.model_dim
            ));
        }
        if !self.decoder_head_dim.is_multiple_of(2) {
            return err(format!(
                "decoder_head_dim {} must be even for rotary rotation",
                self.decoder_head_dim
            ));
        }
        if !self.latent_dim.is_multiple_of(self.encoder_heads) {
            return err(format!(
                "latent_dim {} not divisible by {} encoder heads",
                self.latent_dim, self.encoder_heads
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return err(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return err(format!("mask_ratio {} outside (0, 1]", self.mask_ratio));
        }
        Ok(())
    }
}
