//! Phoneme-aligned frame masks.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMask {
    /// `true` = masked.
    pub flags: Vec<bool>,
    pub ratio_achieved: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("empty duration list")]
    Empty,
    #[error("phoneme {0} has zero duration")]
    ZeroDuration(usize),
    #[error("target ratio {0} outside [0, 1]")]
    Ratio(f64),
}

impl FrameMask {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Builds a mask from per-phoneme flags.
    pub fn from_phonemes(durations: &[u32], masked: &[bool]) -> Self {
        let flags: Vec<bool> = durations
            .iter()
            .zip(masked)
            .flat_map(|(&d, &m)| std::iter::repeat_n(m, d as usize))
            .collect();
        let ratio_achieved = if flags.is_empty() {
            0.0
        } else {
            flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
        };
        Self {
            flags,
            ratio_achieved,
        }
    }

    /// Masks every phoneme from `first` onward.
    pub fn suffix(durations: &[u32], first: usize) -> Self {
        let masked: Vec<bool> = (0..durations.len()).map(|i| i >= first).collect();
        Self::from_phonemes(durations, &masked)
    }

    /// Whether every maximal masked run starts and ends on a phoneme boundary.
    pub fn is_phoneme_aligned(&self, durations: &[u32]) -> bool {
        let mut start = 0usize;
        for &d in durations {
            let span = &self.flags[start..start + d as usize];
            if span.iter().any(|&f| f != span[0]) {
                return false;
            }
            start += d as usize;
        }
        start == self.flags.len()
    }
}

fn check(durations: &[u32]) -> Result<usize, MaskError> {
    if durations.is_empty() {
        return Err(MaskError::Empty);
    }
    if let Some(i) = durations.iter().position(|&d| d == 0) {
        return Err(MaskError::ZeroDuration(i));
    }
    Ok(durations.iter().map(|&d| d as usize).sum())
}

/// Visits phonemes in seeded random order, adding each while the masked share
/// is below `target`. A phoneme that would overshoot is added only if the
/// overshoot is no larger than the current shortfall, and the walk stops there.
pub fn sample_mask(durations: &[u32], target: f64, seed: u64) -> Result<FrameMask, MaskError> {
    let total = check(durations)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(MaskError::Ratio(target));
    }
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.shuffle(&mut seed::rng(seed, &[seed::tag("mask")]));
    let goal = target * total as f64;
    let mut masked = vec![false; durations.len()];
    let mut count = 0usize;
    for i in order {
        if count as f64 >= goal {
            break;
        }
        let next = count + durations[i] as usize;
        if next as f64 <= goal {
            masked[i] = true;
            count = next;
            continue;
        }
        if next as f64 - goal <= goal - count as f64 {
            masked[i] = true;
        }
        break;
    }
    Ok(FrameMask::from_phonemes(durations, &masked))
}
