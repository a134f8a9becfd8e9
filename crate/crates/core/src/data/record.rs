use std::fmt;

use serde::{Deserialize, Serialize};

pub const MEL_BANDS: usize = 10;
pub const DEFAULT_FRAME_HOP_MS: f64 = 11.6;

/// Frame-level prosody features of one utterance plus its aligned phonemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    pub split: String,
    /// Hz; 0 at unvoiced frames.
    pub f0_hz: Vec<f32>,
    /// Linear magnitude, before log/smoothing.
    pub energy_raw: Vec<f32>,
    pub mel10: Vec<[f32; MEL_BANDS]>,
    pub vuv: Vec<u8>,
    pub phoneme_ids: Vec<u32>,
    pub durations_frames: Vec<u32>,
    pub speaker_vec: Vec<f32>,
    pub frame_hop_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    NoPhonemes,
    DurationSumMismatch {
        sum: u64,
        frames: usize,
    },
    LengthMismatch {
        field: &'static str,
        len: usize,
        frames: usize,
    },
    PhonemeCountMismatch {
        ids: usize,
        durations: usize,
    },
    ZeroDuration {
        phoneme: usize,
    },
    VuvNotBinary {
        frame: usize,
        value: u8,
    },
    VoicingMismatch {
        frame: usize,
    },
    NegativeOrNonFinite {
        field: &'static str,
        index: usize,
    },
    EmptySpeakerVector,
    BadFrameHop(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::NoPhonemes => write!(f, "no phonemes"),
            Violation::DurationSumMismatch { sum, frames } => {
                write!(f, "duration sum ≠ frame count ({sum} vs {frames})")
            }
            Violation::LengthMismatch { field, len, frames } => {
                write!(f, "{field} has {len} frames, expected {frames}")
            }
            Violation::PhonemeCountMismatch { ids, durations } => {
                write!(f, "{ids} phoneme ids but {durations} durations")
            }
            Violation::ZeroDuration { phoneme } => write!(f, "zero duration at phoneme {phoneme}"),
            Violation::VuvNotBinary { frame, value } => {
                write!(f, "vuv not binary (frame {frame} = {value})")
            }
            Violation::VoicingMismatch { frame } => {
                write!(f, "f0 > 0 must coincide with vuv = 1 (frame {frame})")
            }
            Violation::NegativeOrNonFinite { field, index } => {
                write!(f, "{field}[{index}] is negative or non-finite")
            }
            Violation::EmptySpeakerVector => write!(f, "empty speaker vector"),
            Violation::BadFrameHop(h) => write!(f, "frame hop {h} ms is not positive"),
        }
    }
}

impl UtteranceRecord {
    pub fn frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn phonemes(&self) -> usize {
        self.phoneme_ids.len()
    }

    /// Every violated invariant, in a stable order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let t = self.frames();
        if self.id.is_empty() {
            out.push(Violation::EmptyId);
        }
        if self.phoneme_ids.is_empty() {
            out.push(Violation::NoPhonemes);
        }
        if self.phoneme_ids.len() != self.durations_frames.len() {
            out.push(Violation::PhonemeCountMismatch {
                ids: self.phoneme_ids.len(),
                durations: self.durations_frames.len(),
            });
        }
        let sum: u64 = self.durations_frames.iter().map(|&d| u64::from(d)).sum();
        if sum != t as u64 {
            out.push(Violation::DurationSumMismatch { sum, frames: t });
        }
        for (phoneme, &d) in self.durations_frames.iter().enumerate() {
            if d == 0 {
                out.push(Violation::ZeroDuration { phoneme });
            }
        }
        for (field, len) in [
            ("energy_raw", self.energy_raw.len()),
            ("mel10", self.mel10.len()),
            ("vuv", self.vuv.len()),
        ] {
            if len != t {
                out.push(Violation::LengthMismatch {
                    field,
                    len,
                    frames: t,
                });
            }
        }
        for (frame, &value) in self.vuv.iter().enumerate() {
            if value > 1 {
                out.push(Violation::VuvNotBinary { frame, value });
            }
        }
        for (frame, (&f0, &v)) in self.f0_hz.iter().zip(&self.vuv).enumerate() {
            if (f0 > 0.0) != (v == 1) && v <= 1 {
                out.push(Violation::VoicingMismatch { frame });
            }
        }
        let scalar_fields: [(&'static str, &[f32]); 2] =
            [("f0_hz", &self.f0_hz), ("energy_raw", &self.energy_raw)];
        for (field, values) in scalar_fields {
            if let Some(index) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
                out.push(Violation::NegativeOrNonFinite { field, index });
            }
        }
        if let Some(index) = self.mel10.iter().flatten().position(|v| !v.is_finite()) {
            out.push(Violation::NegativeOrNonFinite {
                field: "mel10",
                index,
            });
        }
        if self.speaker_vec.is_empty() {
            out.push(Violation::EmptySpeakerVector);
        }
        if let Some(index) = self.speaker_vec.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NegativeOrNonFinite {
                field: "speaker_vec",
                index,
            });
        }
        if !(self.frame_hop_ms > 0.0 && self.frame_hop_ms.is_finite()) {
            out.push(Violation::BadFrameHop(self.frame_hop_ms));
        }
        out
    }

    /// Frame index at which each phoneme starts, plus the total frame count.
    pub fn phoneme_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.durations_frames.len() + 1);
        let mut acc = 0usize;
        starts.push(0);
        for &d in &self.durations_frames {
            acc += d as usize;
            starts.push(acc);
        }
        starts
    }
}
