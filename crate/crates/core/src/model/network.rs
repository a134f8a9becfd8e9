//! The ProMode network: input embedding, Perceiver encoder, PD1, modulation and PD2.
//!
//! [`Network`] holds the parameter layout and is independent of the element
//! type; every method records onto a tape built over the matching
//! [`ParamStore`].

use promode_tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

use super::input::{ModelInput, Targets, ENERGY_UNIT, F0_UNIT_HZ};
use super::layers::{
    AdaLnLayer, Attention, ConvNeXt, FeatureStack, FeedForward, Init, Linear, TransformerLayer,
};
use super::{ModelConfig, ModelError};
use crate::data::MEL_BANDS;
use crate::seed;

/// What the context-text slot of the frame embedding carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextSlot {
    Present,
    /// Slot kept but filled with zeros (PD1 queries).
    Zeroed,
}

#[derive(Debug, Clone)]
struct Heads {
    f0: Linear,
    energy: Linear,
    mel: Linear,
    vuv: Linear,
}

impl Heads {
    fn new<F: Real>(init: &mut Init<'_, F>, name: &str, dim: usize) -> Self {
        Self {
            f0: Linear::zero(init, &format!("{name}.f0"), dim, 1),
            energy: Linear::zero(init, &format!("{name}.energy"), dim, 1),
            mel: Linear::zero(init, &format!("{name}.mel10"), dim, MEL_BANDS),
            vuv: Linear::zero(init, &format!("{name}.vuv"), dim, 1),
        }
    }
}

/// Per-frame prediction nodes: f0 `[T,1]` in Hz, energy `[T,1]` in log₂,
/// mel `[T,10]`, vuv logits `[T,1]`.
#[derive(Debug, Clone, Copy)]
pub struct PredVars {
    pub f0: Var,
    pub energy: Var,
    pub mel: Var,
    pub vuv: Var,
}

/// Six modulation tensors per conditional layer, indexed `[stack][layer]`.
#[derive(Debug, Clone)]
pub struct Modulation {
    pub layers: Vec<Vec<[Var; 6]>>,
    pub frames: usize,
}

#[derive(Debug, Clone)]
struct Pd2Stack {
    layers: Vec<AdaLnLayer>,
    modulation: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    f0: Option<FeatureStack>,
    energy: Option<FeatureStack>,
    vuv: FeatureStack,
    mel: Option<FeatureStack>,
    duration: Option<FeatureStack>,
    speaker: FeatureStack,
    phoneme_table: Option<ParamId>,
    combine: Linear,
    mask_embedding: ParamId,
    input_convs: Vec<ConvNeXt>,
    latents: ParamId,
    encoder_cross: Attention,
    encoder_cross_ff: FeedForward,
    encoder_layers: Vec<TransformerLayer>,
    pd1_attention: Attention,
    pd1_heads: Heads,
    modulation_attention: Option<Attention>,
    modulation_global: Option<Linear>,
    text_table: ParamId,
    text_duration: FeatureStack,
    text_proj: Linear,
    text_convs: Vec<ConvNeXt>,
    pd2_attention: Attention,
    pd2_stacks: Vec<Pd2Stack>,
    pd2_heads: Heads,
}

/// Loss graph nodes and their values.
#[derive(Debug, Clone)]
pub struct LossVars {
    pub total: Var,
    /// `(name, node)` in reporting order.
    pub components: Vec<(String, Var)>,
}

pub const COMPONENTS: [&str; 4] = ["f0", "energy", "mel10", "vuv"];

impl Network {
    pub fn build<F: Real>(
        config: &ModelConfig,
        seed_value: u64,
    ) -> Result<(Self, ParamStore<F>), ModelError> {
        config.check()?;
        let c = config;
        let a = c.ablations;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: seed::rng(seed_value, &[seed::tag("init")]),
        };
        let fd = c.feature_dim;
        let opt = |on: bool, init: &mut Init<'_, F>, name: &str, input: usize| {
            on.then(|| FeatureStack::new(init, name, input, fd))
        };
        let f0 = opt(!a.drop_f0, &mut init, "embed.f0", 1);
        let energy = opt(!a.drop_energy, &mut init, "embed.energy", 1);
        let vuv = FeatureStack::new(&mut init, "embed.vuv", 1, fd);
        let mel = opt(!a.drop_mel10, &mut init, "embed.mel10", MEL_BANDS);
        let duration = opt(!a.drop_duration, &mut init, "embed.duration", 1);
        let speaker = FeatureStack::new(&mut init, "embed.speaker", c.speaker_dim, fd);
        let phoneme_table = (!a.drop_context_text)
            .then(|| init.normal("embed.phoneme", vec![c.phoneme_vocab, fd], 1.0));
        let slots = [
            f0.is_some(),
            energy.is_some(),
            true,
            mel.is_some(),
            duration.is_some(),
            true,
            phoneme_table.is_some(),
        ]
        .iter()
        .filter(|&&s| s)
        .count();
        let combine = Linear::new(&mut init, "embed.combine", slots * fd, c.model_dim);
        let mask_embedding = init.normal("embed.mask", vec![c.model_dim], 1.0);
        let input_convs = (0..c.conv_layers)
            .map(|i| {
                ConvNeXt::new(
                    &mut init,
                    &format!("embed.conv{i}"),
                    c.model_dim,
                    c.conv_hidden,
                    c.conv_kernel,
                )
            })
            .collect();

        let dl = c.latent_dim;
        let latents = init.normal("encoder.latents", vec![c.latent_count, dl], 1.0);
        let encoder_cross = Attention::new(
            &mut init,
            "encoder.cross",
            dl,
            c.model_dim,
            dl,
            dl,
            c.encoder_heads,
            false,
        );
        let encoder_cross_ff = FeedForward::new(&mut init, "encoder.cross_ff", dl, c.encoder_ff);
        let encoder_layers = (0..c.encoder_layers)
            .map(|i| {
                TransformerLayer::new(
                    &mut init,
                    &format!("encoder.layer{i}"),
                    dl,
                    c.encoder_heads,
                    c.encoder_ff,
                )
            })
            .collect();

        let cd = c.decoder_dim();
        let pd1_attention = Attention::new(
            &mut init,
            "pd1.cross",
            c.model_dim,
            dl,
            cd,
            cd,
            c.decoder_heads,
            true,
        );
        let pd1_heads = Heads::new(&mut init, "pd1.head", cd);

        let (modulation_attention, modulation_global) = if a.global_adaln {
            (
                None,
                Some(Linear::new(&mut init, "modulate.global", dl, cd)),
            )
        } else {
            (
                Some(Attention::new(
                    &mut init,
                    "modulate.cross",
                    c.model_dim,
                    dl,
                    cd,
                    cd,
                    c.decoder_heads,
                    true,
                )),
                None,
            )
        };

        let text_table = init.normal("pd2.text.phoneme", vec![c.phoneme_vocab, fd], 1.0);
        let text_duration = FeatureStack::new(&mut init, "pd2.text.duration", 1, fd);
        let text_proj = Linear::new(&mut init, "pd2.text.proj", 2 * fd, cd);
        let text_convs = (0..c.conv_layers)
            .map(|i| {
                ConvNeXt::new(
                    &mut init,
                    &format!("pd2.text.conv{i}"),
                    cd,
                    c.conv_hidden,
                    c.conv_kernel,
                )
            })
            .collect();
        let pd2_attention = Attention::new(
            &mut init,
            "pd2.cross",
            cd,
            dl,
            cd,
            cd,
            c.decoder_heads,
            true,
        );
        let pd2_stacks = (0..c.pd2_stacks())
            .map(|s| Pd2Stack {
                layers: (0..c.decoder_layers)
                    .map(|l| {
                        AdaLnLayer::new(
                            &mut init,
                            &format!("pd2.stack{s}.layer{l}"),
                            c.decoder_heads,
                            c.decoder_head_dim,
                            c.decoder_ff,
                        )
                    })
                    .collect(),
                modulation: (0..c.decoder_layers)
                    .map(|l| {
                        Linear::zero(
                            &mut init,
                            &format!("modulate.stack{s}.layer{l}"),
                            cd,
                            6 * cd,
                        )
                    })
                    .collect(),
            })
            .collect();
        let pd2_heads = Heads::new(&mut init, "pd2.head", cd);

        let net = Self {
            config: c.clone(),
            f0,
            energy,
            vuv,
            mel,
            duration,
            speaker,
            phoneme_table,
            combine,
            mask_embedding,
            input_convs,
            latents,
            encoder_cross,
            encoder_cross_ff,
            encoder_layers,
            pd1_attention,
            pd1_heads,
            modulation_attention,
            modulation_global,
            text_table,
            text_duration,
            text_proj,
            text_convs,
            pd2_attention,
            pd2_stacks,
            pd2_heads,
        };
        Ok((net, store))
    }

    fn column<F: Real>(tape: &mut Tape<'_, F>, values: &[F]) -> Result<Var, ModelError> {
        Ok(tape.constant(Tensor::new(vec![values.len(), 1], values.to_vec())?))
    }

    /// Combined frame embeddings `[T, model_dim]` for the encoder (and, with
    /// the text slot zeroed, for PD1 queries).
    pub fn embed_inputs<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        input: &ModelInput<F>,
        text: TextSlot,
    ) -> Result<Var, ModelError> {
        let t = input.frames;
        let mut parts = Vec::with_capacity(7);
        if let Some(s) = &self.f0 {
            let x = Self::column(tape, &input.f0)?;
            parts.push(s.apply(tape, x)?);
        }
        if let Some(s) = &self.energy {
            let x = Self::column(tape, &input.energy)?;
            parts.push(s.apply(tape, x)?);
        }
        let x = Self::column(tape, &input.vuv)?;
        parts.push(self.vuv.apply(tape, x)?);
        if let Some(s) = &self.mel {
            let x = tape.constant(Tensor::new(vec![t, MEL_BANDS], input.mel.clone())?);
            parts.push(s.apply(tape, x)?);
        }
        if let Some(s) = &self.duration {
            let x = Self::column(tape, &input.log_duration)?;
            parts.push(s.apply(tape, x)?);
        }
        let spk = tape.constant(Tensor::new(
            vec![1, input.speaker.len()],
            input.speaker.clone(),
        )?);
        let spk = self.speaker.apply(tape, spk)?;
        parts.push(tape.broadcast_rows(spk, t)?);
        if let Some(table) = self.phoneme_table {
            let fd = self.config.feature_dim;
            let e = match text {
                TextSlot::Present => {
                    let table = tape.param(table);
                    let e = tape.gather_rows(table, &input.phoneme)?;
                    let e = tape.relu(e);
                    tape.layer_norm(e)
                }
                TextSlot::Zeroed => tape.constant(Tensor::zeros(vec![t, fd])),
            };
            parts.push(e);
        }
        let h = tape.concat_cols(&parts)?;
        let h = self.combine.apply(tape, h)?;
        let fill = tape.param(self.mask_embedding);
        let h = tape.mask_rows(h, fill, &input.mask)?;
        let mut h = tape.rotary(h, self.config.model_dim, 0)?;
        for conv in &self.input_convs {
            h = conv.apply(tape, h)?;
        }
        Ok(h)
    }

    /// Fixed-length latent `[latent_count, latent_dim]`.
    pub fn encode<F: Real>(&self, tape: &mut Tape<'_, F>, frames: Var) -> Result<Var, ModelError> {
        if tape.rows(frames) == 0 {
            return Err(ModelError::Input("encoder input has no frames".into()));
        }
        let z = tape.param(self.latents);
        let q = tape.layer_norm(z);
        let kv = tape.layer_norm(frames);
        let a = self.encoder_cross.cross(tape, q, kv)?;
        let z = tape.add(z, a)?;
        let h = tape.layer_norm(z);
        let h = self.encoder_cross_ff.apply(tape, h)?;
        let mut z = tape.add(z, h)?;
        for layer in &self.encoder_layers {
            z = layer.apply(tape, z)?;
        }
        Ok(z)
    }

    fn heads<F: Real>(
        tape: &mut Tape<'_, F>,
        heads: &Heads,
        x: Var,
    ) -> Result<PredVars, ModelError> {
        let f0 = heads.f0.apply(tape, x)?;
        let energy = heads.energy.apply(tape, x)?;
        Ok(PredVars {
            f0: tape.scale(f0, F::c(F0_UNIT_HZ)),
            energy: tape.scale(energy, F::c(ENERGY_UNIT)),
            mel: heads.mel.apply(tape, x)?,
            vuv: heads.vuv.apply(tape, x)?,
        })
    }

    /// Unconditional decoder: frame queries (text slot zeroed) attend to the latent.
    pub fn decode_pd1<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        frames_without_text: Var,
        latent: Var,
    ) -> Result<PredVars, ModelError> {
        let q = tape.layer_norm(frames_without_text);
        let kv = tape.layer_norm(latent);
        let h = self.pd1_attention.cross(tape, q, kv)?;
        Self::heads(tape, &self.pd1_heads, h)
    }

    /// Per-frame (or, under `global_adaln`, broadcast) adaLN-zero parameters.
    pub fn modulate<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        latent: Var,
        frames: Var,
    ) -> Result<Modulation, ModelError> {
        let t = tape.rows(frames);
        let cd = self.config.decoder_dim();
        let latent = tape.layer_norm(latent);
        let ctx = match (&self.modulation_attention, &self.modulation_global) {
            (Some(attn), _) => {
                let q = tape.layer_norm(frames);
                attn.cross(tape, q, latent)?
            }
            (None, Some(proj)) => {
                let pooled = tape.mean_rows(latent);
                proj.apply(tape, pooled)?
            }
            (None, None) => unreachable!("one modulation path is always built"),
        };
        let ctx = tape.gelu(ctx);
        let mut layers = Vec::with_capacity(self.pd2_stacks.len());
        for stack in &self.pd2_stacks {
            let mut per_layer = Vec::with_capacity(stack.modulation.len());
            for head in &stack.modulation {
                let m = head.apply(tape, ctx)?;
                let m = if tape.rows(m) == t {
                    m
                } else {
                    tape.broadcast_rows(m, t)?
                };
                let mut six = [m; 6];
                for (i, slot) in six.iter_mut().enumerate() {
                    *slot = tape.slice_cols(m, i * cd, cd)?;
                }
                per_layer.push(six);
            }
            layers.push(per_layer);
        }
        Ok(Modulation { layers, frames: t })
    }

    /// Text condition `[T, decoder_dim]` from length-regulated phonemes and durations.
    pub fn embed_text<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        input: &ModelInput<F>,
    ) -> Result<Var, ModelError> {
        let table = tape.param(self.text_table);
        let e = tape.gather_rows(table, &input.phoneme)?;
        let e = tape.relu(e);
        let e = tape.layer_norm(e);
        let d = Self::column(tape, &input.log_duration)?;
        let d = self.text_duration.apply(tape, d)?;
        let h = tape.concat_cols(&[e, d])?;
        let h = self.text_proj.apply(tape, h)?;
        let mut h = tape.rotary(h, self.config.decoder_dim(), 0)?;
        for conv in &self.text_convs {
            h = conv.apply(tape, h)?;
        }
        Ok(h)
    }

    /// Text attends to the latent; the result is the input of every conditional stack.
    pub fn pd2_condition<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        text: Var,
        latent: Var,
    ) -> Result<Var, ModelError> {
        let q = tape.layer_norm(text);
        let kv = tape.layer_norm(latent);
        let a = self.pd2_attention.cross(tape, q, kv)?;
        Ok(tape.add(text, a)?)
    }

    /// Runs conditional stack `stack` on `x`.
    pub fn pd2_stack<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        stack: usize,
        x: Var,
        modulation: &Modulation,
    ) -> Result<Var, ModelError> {
        let mut h = x;
        for (layer, mods) in self.pd2_stacks[stack]
            .layers
            .iter()
            .zip(&modulation.layers[stack])
        {
            h = layer.apply(tape, h, mods)?;
        }
        Ok(h)
    }

    /// Conditional decoder.
    pub fn decode_pd2<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        text: Var,
        latent: Var,
        modulation: &Modulation,
    ) -> Result<PredVars, ModelError> {
        let t = tape.rows(text);
        if t != modulation.frames {
            return Err(ModelError::Input(format!(
                "text has {t} frames, modulation has {}",
                modulation.frames
            )));
        }
        let x = self.pd2_condition(tape, text, latent)?;
        let h = &self.pd2_heads;
        let mut outs = Vec::with_capacity(self.pd2_stacks.len());
        for s in 0..self.pd2_stacks.len() {
            let y = self.pd2_stack(tape, s, x, modulation)?;
            outs.push(tape.layer_norm(y));
        }
        let pick = |i: usize| outs[if outs.len() == 1 { 0 } else { i }];
        let f0 = h.f0.apply(tape, pick(0))?;
        let energy = h.energy.apply(tape, pick(1))?;
        Ok(PredVars {
            f0: tape.scale(f0, F::c(F0_UNIT_HZ)),
            energy: tape.scale(energy, F::c(ENERGY_UNIT)),
            mel: h.mel.apply(tape, pick(2))?,
            vuv: h.vuv.apply(tape, pick(3))?,
        })
    }

    /// Full forward pass. PD1 is run only when `with_pd1` is set.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        input: &ModelInput<F>,
        with_pd1: bool,
    ) -> Result<Forward, ModelError> {
        let frames = self.embed_inputs(tape, input, TextSlot::Present)?;
        let latent = self.encode(tape, frames)?;
        let pd1 = if with_pd1 {
            let plain = if self.phoneme_table.is_some() {
                self.embed_inputs(tape, input, TextSlot::Zeroed)?
            } else {
                frames
            };
            Some(self.decode_pd1(tape, plain, latent)?)
        } else {
            None
        };
        let modulation = self.modulate(tape, latent, frames)?;
        let text = self.embed_text(tape, input)?;
        let pd2 = self.decode_pd2(tape, text, latent, &modulation)?;
        Ok(Forward { latent, pd1, pd2 })
    }

    fn decoder_loss<F: Real>(
        tape: &mut Tape<'_, F>,
        p: &PredVars,
        targets: &Targets<F>,
        mask: &[bool],
    ) -> Result<[Var; 4], ModelError> {
        let voiced: Vec<bool> = mask
            .iter()
            .zip(&targets.vuv)
            .map(|(&m, &v)| m && v > F::zero())
            .collect();
        let pick = |values: &[F], sel: &[bool], width: usize| -> Vec<F> {
            sel.iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .flat_map(|(i, _)| values[i * width..(i + 1) * width].iter().copied())
                .collect()
        };
        let nv = voiced.iter().filter(|&&v| v).count();
        let f0 = if nv == 0 {
            tape.constant(Tensor::scalar(F::zero()))
        } else {
            let pred = tape.select_rows(p.f0, &voiced)?;
            let gt = tape.constant_matrix(nv, 1, pick(&targets.f0_hz, &voiced, 1))?;
            let d = tape.sub(pred, gt)?;
            let d = tape.abs(d);
            tape.mean(d)
        };
        let nm = mask.iter().filter(|&&m| m).count();
        let mse = |tape: &mut Tape<'_, F>,
                   pred: Var,
                   gt: Vec<F>,
                   width: usize|
         -> Result<Var, ModelError> {
            let pred = tape.select_rows(pred, mask)?;
            let gt = tape.constant_matrix(nm, width, gt)?;
            let d = tape.sub(pred, gt)?;
            let d = tape.square(d);
            Ok(tape.mean(d))
        };
        let energy = mse(tape, p.energy, pick(&targets.energy_log, mask, 1), 1)?;
        let mel = mse(tape, p.mel, pick(&targets.mel, mask, MEL_BANDS), MEL_BANDS)?;
        let logits = tape.select_rows(p.vuv, mask)?;
        let bce = tape.bce_with_logits(logits, &pick(&targets.vuv, mask, 1))?;
        let vuv = tape.mean(bce);
        Ok([f0, energy, mel, vuv])
    }

    /// Masked-frame reconstruction loss. `pd1` must be present unless AOL is disabled.
    pub fn loss<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        pd1: Option<&PredVars>,
        pd2: &PredVars,
        targets: &Targets<F>,
        mask: &[bool],
    ) -> Result<LossVars, ModelError> {
        if !mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyMask);
        }
        let mut components = Vec::with_capacity(8);
        let pd2_parts = Self::decoder_loss(tape, pd2, targets, mask)?;
        for (name, v) in COMPONENTS.iter().zip(pd2_parts) {
            components.push((format!("pd2.{name}"), v));
        }
        if !self.config.ablations.disable_aol {
            let pd1 = pd1.ok_or_else(|| {
                ModelError::Input("PD1 predictions required for the acoustic-only loss".into())
            })?;
            let pd1_parts = Self::decoder_loss(tape, pd1, targets, mask)?;
            for (name, v) in COMPONENTS.iter().zip(pd1_parts) {
                components.push((format!("pd1.{name}"), v));
            }
        }
        let mut total = components[0].1;
        for &(_, v) in &components[1..] {
            total = tape.add(total, v)?;
        }
        Ok(LossVars { total, components })
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub latent: Var,
    pub pd1: Option<PredVars>,
    pub pd2: PredVars,
}
