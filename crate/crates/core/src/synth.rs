//! Deterministic synthetic prosody corpora.
//!
//! Each utterance draws its own style (declination slope, phrase-level
//! undulation, accent strength, tempo) once, so the first half of an
//! utterance carries information about the second half beyond the speaker's
//! average. Accent placement and intrinsic pitch/energy depend on phoneme
//! identity, giving the text a learnable influence as well.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::manifest::{Manifest, MANIFEST_FILE, MANIFEST_VERSION};
use crate::data::record::{UtteranceRecord, MEL_BANDS};
use crate::data::{write_record, RecordError};
use crate::seed;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub corpus: String,
    pub seed: u64,
    pub inventory_size: u32,
    /// Share of symbols in the unvoiced class.
    pub unvoiced_fraction: f64,
    pub phonemes_min: u32,
    pub phonemes_max: u32,
    pub duration_mean_frames: f64,
    /// Log-normal spread of per-phoneme durations.
    pub duration_spread: f64,
    pub max_frames: u32,
    /// Declination as a fraction of the speaker's pitch range.
    pub declination_min: f64,
    pub declination_max: f64,
    pub accent_probability: f64,
    /// Largest summed accent excursion, semitones.
    pub accent_amplitude: f64,
    pub jitter_semitones: f64,
    pub base_f0_min: f64,
    pub base_f0_max: f64,
    pub f0_range_min: f64,
    pub f0_range_max: f64,
    pub speaker_dim: usize,
    pub utterances_per_speaker: usize,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub frame_hop_ms: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            corpus: "synthetic-prosody".into(),
            seed: 1234,
            inventory_size: 40,
            unvoiced_fraction: 0.3,
            phonemes_min: 28,
            phonemes_max: 80,
            duration_mean_frames: 7.0,
            duration_spread: 0.3,
            max_frames: 600,
            declination_min: 0.1,
            declination_max: 0.9,
            accent_probability: 0.3,
            accent_amplitude: 4.0,
            jitter_semitones: 0.15,
            base_f0_min: 80.0,
            base_f0_max: 300.0,
            f0_range_min: 2.0,
            f0_range_max: 12.0,
            speaker_dim: 16,
            utterances_per_speaker: 10,
            train_utterances: 200,
            dev_utterances: 20,
            test_utterances: 20,
            frame_hop_ms: crate::data::DEFAULT_FRAME_HOP_MS,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("empty phoneme sequence")]
    EmptyPhonemes,
    #[error("phoneme id {0} outside the inventory")]
    UnknownPhoneme(u32),
    #[error(
        "existing manifest at {0} was produced by a different config (use force to overwrite)"
    )]
    IncompatibleManifest(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl GenConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.inventory_size < 2 {
            return bad("inventory needs at least 2 symbols");
        }
        if !(0.0..1.0).contains(&self.unvoiced_fraction) {
            return bad("unvoiced_fraction must be in [0, 1)");
        }
        if self.phonemes_min == 0 || self.phonemes_min > self.phonemes_max {
            return bad("phoneme count range is empty");
        }
        if self.duration_mean_frames < 1.0 || self.duration_spread < 0.0 || self.max_frames == 0 {
            return bad("duration parameters");
        }
        if !(0.0..=1.0).contains(&self.declination_min)
            || self.declination_min > self.declination_max
            || self.declination_max > 1.0
        {
            return bad("declination range must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.accent_probability)
            || self.accent_amplitude < 0.0
            || self.jitter_semitones < 0.0
        {
            return bad("accent/jitter parameters");
        }
        if !(self.base_f0_min > 0.0 && self.base_f0_min <= self.base_f0_max) {
            return bad("base f0 range");
        }
        if !(self.f0_range_min > 0.0 && self.f0_range_min <= self.f0_range_max) {
            return bad("f0 range (semitones)");
        }
        if self.speaker_dim == 0 || self.utterances_per_speaker == 0 || self.frame_hop_ms <= 0.0 {
            return bad("speaker_dim, utterances_per_speaker and frame_hop_ms must be positive");
        }
        Ok(())
    }

    pub fn split_size(&self, split: &str) -> usize {
        match split {
            "train" => self.train_utterances,
            "dev" => self.dev_utterances,
            "test" => self.test_utterances,
            _ => 0,
        }
    }

    /// Largest possible |semitone offset| of a voiced frame from base F0
    /// for a speaker with pitch range `range`.
    pub fn f0_bound_semitones(&self, range: f64) -> f64 {
        range + self.accent_amplitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhonemeClass {
    pub voiced: bool,
    /// Accent-bearing symbol (vowel-like).
    pub accentable: bool,
    pub duration_scale: f64,
    pub pitch_offset: f64,
    pub energy_offset: f64,
    pub mel_color: [f64; MEL_BANDS],
}

/// Phoneme inventory; symbol `i` is `classes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    pub classes: Vec<PhonemeClass>,
}

impl Inventory {
    /// The inventory depends only on size and voicing share, so every corpus
    /// built with the same settings shares one symbol table.
    pub fn new(cfg: &GenConfig) -> Self {
        let mut rng = seed::rng(0x1a7e_11a5, &[u64::from(cfg.inventory_size)]);
        let n = cfg.inventory_size as usize;
        let unvoiced = ((n as f64 * cfg.unvoiced_fraction).round() as usize).min(n - 1);
        let classes = (0..n)
            .map(|i| {
                let voiced = i >= unvoiced;
                let mut mel_color = [0.0; MEL_BANDS];
                for m in mel_color.iter_mut() {
                    *m = rng.random_range(-0.4..0.4);
                }
                PhonemeClass {
                    voiced,
                    accentable: voiced && (i - unvoiced).is_multiple_of(2),
                    duration_scale: rng.random_range(0.6..1.5),
                    pitch_offset: if voiced {
                        rng.random_range(-0.6..0.6)
                    } else {
                        0.0
                    },
                    energy_offset: if voiced {
                        rng.random_range(-0.6..0.6)
                    } else {
                        rng.random_range(-3.0..-1.5)
                    },
                    mel_color,
                }
            })
            .collect();
        Self { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub base_f0_hz: f64,
    pub f0_range_semitones: f64,
    /// log₂ energy offset.
    pub energy_gain: f64,
    /// Preferred declination (fraction of range), speaker-consistent phrase style.
    pub declination_pref: f64,
    /// Amplitude of the phrase-level undulation, fraction of range.
    pub style_amplitude: f64,
    pub timbre_vec: [f64; MEL_BANDS],
    pub speaker_vec: Vec<f32>,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

/// Speaker drawn deterministically from `seed`.
pub fn sample_speaker(cfg: &GenConfig, id: &str, seed: u64) -> SpeakerProfile {
    let mut rng = seed::rng(seed, &[seed::tag("speaker")]);
    // log-uniform base pitch
    let (lo, hi) = (cfg.base_f0_min.ln(), cfg.base_f0_max.ln());
    let base_f0_hz = if hi > lo {
        rng.random_range(lo..=hi).exp()
    } else {
        cfg.base_f0_min
    }
    .clamp(cfg.base_f0_min, cfg.base_f0_max);
    let f0_range_semitones = if cfg.f0_range_max > cfg.f0_range_min {
        rng.random_range(cfg.f0_range_min..=cfg.f0_range_max)
    } else {
        cfg.f0_range_min
    };
    let energy_gain = rng.random_range(3.0..6.0);
    let declination_pref =
        cfg.declination_min + (cfg.declination_max - cfg.declination_min) * rng.random::<f64>();
    let style_amplitude = rng.random_range(0.0..0.5);
    let mut timbre_vec = [0.0; MEL_BANDS];
    for t in timbre_vec.iter_mut() {
        *t = rng.random_range(-1.0..1.0);
    }
    let traits: Vec<f64> = [
        (base_f0_hz / 150.0).log2() * 2.0,
        f0_range_semitones / 6.0 - 1.0,
        energy_gain - 4.5,
        declination_pref * 2.0 - 1.0,
        style_amplitude * 4.0 - 1.0,
    ]
    .into_iter()
    .chain(timbre_vec.iter().copied())
    .collect();
    // Fixed projection shared by all speakers: the vector encodes identity traits.
    let mut proj_rng = seed::rng(0x5eed_5ea4, &[cfg.speaker_dim as u64]);
    let speaker_vec = (0..cfg.speaker_dim)
        .map(|_| {
            let dot: f64 = traits
                .iter()
                .map(|t| t * proj_rng.random_range(-1.0..1.0))
                .sum();
            (dot / (traits.len() as f64).sqrt() + normal(&mut rng, 0.05)) as f32
        })
        .collect();
    SpeakerProfile {
        id: id.into(),
        base_f0_hz,
        f0_range_semitones,
        energy_gain,
        declination_pref,
        style_amplitude,
        timbre_vec,
        speaker_vec,
    }
}

/// What to say: an explicit symbol sequence or a phoneme count to draw.
#[derive(Debug, Clone)]
pub enum Text {
    Phonemes(Vec<u32>),
    /// Phonemes with fixed durations in frames.
    Aligned(Vec<u32>, Vec<u32>),
    Length(usize),
    Random,
}

pub struct UtteranceSpec<'a> {
    pub id: String,
    pub split: String,
    pub text: Text,
    pub profile: &'a SpeakerProfile,
    pub seed: u64,
}

const MEL_CENTERS_HZ: [f64; MEL_BANDS] = [
    25.0, 62.0, 99.0, 136.0, 173.0, 210.0, 247.0, 284.0, 321.0, 358.0,
];

pub fn synth_utterance(
    cfg: &GenConfig,
    inventory: &Inventory,
    spec: &UtteranceSpec<'_>,
) -> Result<UtteranceRecord, SynthError> {
    let profile = spec.profile;
    let mut rng = seed::rng(spec.seed, &[seed::tag("utterance")]);
    let mut fixed = None;
    let mut phonemes = match &spec.text {
        Text::Phonemes(p) => p.clone(),
        Text::Aligned(p, d) => {
            if p.len() != d.len() || d.contains(&0) {
                return Err(SynthError::Config(
                    "aligned text needs one positive duration per phoneme".into(),
                ));
            }
            fixed = Some(d.clone());
            p.clone()
        }
        Text::Length(n) => (0..*n)
            .map(|_| rng.random_range(0..inventory.len() as u32))
            .collect(),
        Text::Random => {
            let n = rng.random_range(cfg.phonemes_min..=cfg.phonemes_max) as usize;
            (0..n)
                .map(|_| rng.random_range(0..inventory.len() as u32))
                .collect()
        }
    };
    if phonemes.is_empty() {
        return Err(SynthError::EmptyPhonemes);
    }
    if let Some(&bad) = phonemes.iter().find(|&&p| p as usize >= inventory.len()) {
        return Err(SynthError::UnknownPhoneme(bad));
    }

    // Utterance-level style, drawn once.
    let range = profile.f0_range_semitones;
    let tempo = rng.random_range(0.8..1.25);
    let declination = (profile.declination_pref + normal(&mut rng, 0.15))
        .clamp(cfg.declination_min, cfg.declination_max);
    let style = profile.style_amplitude * rng.random_range(0.5..1.0);
    let cycles = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let accent_strength = cfg.accent_amplitude * rng.random_range(0.3..1.0);
    let energy_tilt = rng.random_range(-0.8..0.2);

    let n = phonemes.len();
    let drawn: Vec<u32> = phonemes
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let class = &inventory.classes[p as usize];
            let final_lengthening = if i + 2 >= n { 1.4 } else { 1.0 };
            let d = cfg.duration_mean_frames
                * class.duration_scale
                * tempo
                * final_lengthening
                * normal(&mut rng, cfg.duration_spread).exp();
            d.round().max(1.0) as u32
        })
        .collect();
    let durations = match fixed {
        Some(d) => d,
        None => {
            let mut d = drawn;
            while d.len() > 1
                && d.iter().map(|&x| x as usize).sum::<usize>() > cfg.max_frames as usize
            {
                d.pop();
                phonemes.pop();
            }
            d[0] = d[0].min(cfg.max_frames);
            d
        }
    };
    let total: usize = durations.iter().map(|&d| d as usize).sum();

    // Accents: Gaussian bumps centred on accentable phonemes.
    let mut accents = Vec::new();
    let mut start = 0usize;
    for (&p, &d) in phonemes.iter().zip(&durations) {
        let class = &inventory.classes[p as usize];
        if class.accentable && rng.random::<f64>() < cfg.accent_probability * 2.0 {
            let centre = start as f64 + d as f64 / 2.0;
            let width = (d as f64 * 0.8).max(2.0);
            accents.push((centre, width, rng.random_range(0.6..1.0)));
        }
        start += d as usize;
    }

    let jitter_cap = (3.0 * cfg.jitter_semitones).min(0.05 * range);
    let mut jitter = 0.0f64;
    let mut f0_hz = Vec::with_capacity(total);
    let mut energy_raw = Vec::with_capacity(total);
    let mut mel10 = Vec::with_capacity(total);
    let mut vuv = Vec::with_capacity(total);
    let denom = (total.max(2) - 1) as f64;
    let mut frame = 0usize;
    for (&p, &d) in phonemes.iter().zip(&durations) {
        let class = &inventory.classes[p as usize];
        for _ in 0..d {
            let u = frame as f64 / denom;
            let decl = declination * (0.5 - u) * range * 0.9;
            let undulation = style * 0.4 * range * (2.0 * PI * cycles * u + phase).sin();
            let phrase = (decl + undulation).clamp(-0.65 * range, 0.65 * range);
            let bump: f64 = accents
                .iter()
                .map(|&(c, w, a)| {
                    accent_strength * a * (-(frame as f64 - c).powi(2) / (2.0 * w * w)).exp()
                })
                .sum::<f64>()
                .min(cfg.accent_amplitude);
            jitter = (0.7 * jitter + normal(&mut rng, cfg.jitter_semitones * 0.7))
                .clamp(-jitter_cap, jitter_cap);
            let intrinsic = class.pitch_offset.clamp(-0.3 * range, 0.3 * range);
            let semitones = phrase + bump + intrinsic + jitter;
            let f0 = if class.voiced {
                profile.base_f0_hz * (semitones / 12.0).exp2()
            } else {
                0.0
            };

            let log_e = profile.energy_gain
                + class.energy_offset
                + 0.35 * bump
                + energy_tilt * u
                + 0.04 * phrase
                + normal(&mut rng, 0.08);
            let mut mel = [0.0f32; MEL_BANDS];
            for (k, m) in mel.iter_mut().enumerate() {
                let mut v = 0.6 * log_e + profile.timbre_vec[k] + class.mel_color[k];
                if class.voiced {
                    v += 2.5 * (-((f0 - MEL_CENTERS_HZ[k]) / 40.0).powi(2)).exp();
                    v += 1.2 * (-((2.0 * f0 - MEL_CENTERS_HZ[k]) / 40.0).powi(2)).exp();
                }
                *m = (v + normal(&mut rng, 0.05)) as f32;
            }
            f0_hz.push(f0 as f32);
            energy_raw.push(log_e.exp2() as f32);
            mel10.push(mel);
            vuv.push(u8::from(class.voiced));
            frame += 1;
        }
    }
    Ok(UtteranceRecord {
        id: spec.id.clone(),
        speaker_id: profile.id.clone(),
        split: spec.split.clone(),
        f0_hz,
        energy_raw,
        mel10,
        vuv,
        phoneme_ids: phonemes,
        durations_frames: durations,
        speaker_vec: profile.speaker_vec.clone(),
        frame_hop_ms: cfg.frame_hop_ms,
    })
}

/// Utterance of exactly `frames` frames made of phonemes lasting
/// `phoneme_frames` each; the last phoneme absorbs the remainder.
pub fn fixed_length_utterance(
    cfg: &GenConfig,
    inventory: &Inventory,
    profile: &SpeakerProfile,
    frames: usize,
    phoneme_frames: u32,
    seed: u64,
) -> Result<UtteranceRecord, SynthError> {
    if frames == 0 || phoneme_frames == 0 {
        return Err(SynthError::EmptyPhonemes);
    }
    let n = frames.div_ceil(phoneme_frames as usize);
    let mut durations = vec![phoneme_frames; n];
    durations[n - 1] = (frames - (n - 1) * phoneme_frames as usize) as u32;
    let mut rng = seed::rng(seed, &[seed::tag("fixed-text")]);
    let phonemes = (0..n)
        .map(|_| rng.random_range(0..inventory.len() as u32))
        .collect();
    synth_utterance(
        cfg,
        inventory,
        &UtteranceSpec {
            id: format!("fixed-{frames}-{seed}"),
            split: "test".into(),
            text: Text::Aligned(phonemes, durations),
            profile,
            seed,
        },
    )
}

pub fn speaker_seed(cfg: &GenConfig, split: &str, index: usize) -> u64 {
    seed::derive(
        cfg.seed,
        &[seed::tag(split), seed::tag("speaker"), index as u64],
    )
}

pub fn speaker_id(split: &str, index: usize) -> String {
    format!("{split}-spk{index:03}")
}

/// Generates the utterance at position `index` of `split`, without touching disk.
pub fn generate_utterance(
    cfg: &GenConfig,
    inventory: &Inventory,
    split: &str,
    index: usize,
) -> Result<UtteranceRecord, SynthError> {
    let spk = index / cfg.utterances_per_speaker;
    let profile = sample_speaker(cfg, &speaker_id(split, spk), speaker_seed(cfg, split, spk));
    synth_utterance(
        cfg,
        inventory,
        &UtteranceSpec {
            id: format!("{split}-{index:05}"),
            split: split.into(),
            text: Text::Random,
            profile: &profile,
            seed: seed::derive(
                cfg.seed,
                &[seed::tag(split), seed::tag("utterance"), index as u64],
            ),
        },
    )
}

/// All records of one split, generated in memory.
pub fn generate_split(cfg: &GenConfig, split: &str) -> Result<Vec<UtteranceRecord>, SynthError> {
    cfg.check()?;
    let inventory = Inventory::new(cfg);
    (0..cfg.split_size(split))
        .into_par_iter()
        .map(|i| generate_utterance(cfg, &inventory, split, i))
        .collect()
}

/// Writes every split plus `manifest.toml` under `out_dir`.
pub fn build_corpus(cfg: &GenConfig, out_dir: &Path, force: bool) -> Result<Manifest, SynthError> {
    cfg.check()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        match Manifest::load(&manifest_path) {
            Ok(existing) if existing.generator.as_ref() == Some(cfg) => {}
            _ => {
                return Err(SynthError::IncompatibleManifest(
                    manifest_path.display().to_string(),
                ))
            }
        }
    }
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let inventory = Inventory::new(cfg);
    let mut splits = BTreeMap::new();
    for split in SPLITS {
        let dir = out_dir.join(split);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let files: Vec<String> = (0..cfg.split_size(split))
            .into_par_iter()
            .map(|i| {
                let record = generate_utterance(cfg, &inventory, split, i)?;
                let rel = format!("{split}/{}.pmr", record.id);
                write_record(&record, &out_dir.join(&rel))?;
                Ok(rel)
            })
            .collect::<Result<_, SynthError>>()?;
        splits.insert(split.to_string(), files);
    }
    let manifest = Manifest {
        corpus: cfg.corpus.clone(),
        format_version: MANIFEST_VERSION,
        seed: cfg.seed,
        splits,
        generator: Some(cfg.clone()),
    };
    manifest.save(&manifest_path).map_err(|e| match e {
        crate::data::ManifestError::Io { path, source } => SynthError::Io { path, source },
        other => SynthError::Config(other.to_string()),
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            phonemes_min: 6,
            phonemes_max: 12,
            train_utterances: 4,
            dev_utterances: 2,
            test_utterances: 2,
            utterances_per_speaker: 2,
            ..GenConfig::default()
        }
    }

    #[test]
    fn speaker_determinism_and_bounds() {
        let cfg = GenConfig::default();
        assert_eq!(sample_speaker(&cfg, "a", 9), sample_speaker(&cfg, "a", 9));
        assert_ne!(
            sample_speaker(&cfg, "a", 1).base_f0_hz,
            sample_speaker(&cfg, "a", 2).base_f0_hz
        );
        for s in 0..1000 {
            let p = sample_speaker(&cfg, "x", s);
            assert!((80.0..=300.0).contains(&p.base_f0_hz), "{}", p.base_f0_hz);
            assert!((2.0..=12.0).contains(&p.f0_range_semitones));
            assert_eq!(p.speaker_vec.len(), 16);
        }
    }

    #[test]
    fn unvoiced_phonemes_have_no_pitch() {
        let cfg = small();
        let inv = Inventory::new(&cfg);
        for i in 0..20 {
            let r = generate_utterance(&cfg, &inv, "train", i).unwrap();
            assert!(r.validate().is_empty());
            let lr = crate::data::length_regulate(&r.phoneme_ids, &r.durations_frames).unwrap();
            for (t, &p) in lr.iter().enumerate() {
                if !inv.classes[p as usize].voiced {
                    assert_eq!((r.vuv[t], r.f0_hz[t]), (0, 0.0));
                }
            }
        }
    }

    #[test]
    fn empty_text_is_rejected() {
        let cfg = small();
        let inv = Inventory::new(&cfg);
        let p = sample_speaker(&cfg, "s", 1);
        let spec = UtteranceSpec {
            id: "x".into(),
            split: "train".into(),
            text: Text::Phonemes(vec![]),
            profile: &p,
            seed: 0,
        };
        assert!(matches!(
            synth_utterance(&cfg, &inv, &spec),
            Err(SynthError::EmptyPhonemes)
        ));
    }

    #[test]
    fn max_frames_is_respected() {
        let cfg = GenConfig {
            max_frames: 50,
            ..small()
        };
        let inv = Inventory::new(&cfg);
        for i in 0..20 {
            assert!(generate_utterance(&cfg, &inv, "dev", i).unwrap().frames() <= 50);
        }
    }
}
