//! Frame-level transforms applied before modeling: energy log/smoothing,
//! length regulation and phoneme pooling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("savgol window must be odd and positive, got {0}")]
    EvenWindow(usize),
    #[error("savgol order {order} must be below window {window}")]
    OrderTooHigh { order: usize, window: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("negative raw energy {value} at frame {frame}")]
    NegativeEnergy { frame: usize, value: f64 },
    #[error("zero duration at phoneme {0}")]
    ZeroDuration(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub floor: f64,
    pub window: usize,
    pub order: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            floor: 1e-5,
            window: 9,
            order: 2,
        }
    }
}

/// Solves `a x = b` for a small dense system by Gauss-Jordan elimination.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        for j in col..n {
            a[col][j] /= p;
        }
        b[col] /= p;
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in col..n {
                        a[i][j] -= f * a[col][j];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
    }
    b
}

/// Weights `w` such that `sum_k w[k] * y[k]` is the least-squares polynomial
/// of degree `order`, fitted to samples at offsets `-half..=half`, evaluated at
/// offset `at`.
pub fn savgol_weights(half: usize, order: usize, at: f64) -> Vec<f64> {
    let window = 2 * half + 1;
    let offsets: Vec<f64> = (0..window).map(|k| k as f64 - half as f64).collect();
    let p = order + 1;
    let mut gram = vec![vec![0.0; p]; p];
    for &x in &offsets {
        for i in 0..p {
            for j in 0..p {
                gram[i][j] += x.powi((i + j) as i32);
            }
        }
    }
    // Coefficients c solving (AᵀA) c = e(at); then w = A c.
    let rhs: Vec<f64> = (0..p).map(|i| at.powi(i as i32)).collect();
    let c = solve(gram, rhs);
    offsets
        .iter()
        .map(|&x| (0..p).map(|i| c[i] * x.powi(i as i32)).sum())
        .collect()
}

/// Savitzky-Golay smoothing.
///
/// Interior frames use the centered window. The first and last `window / 2`
/// frames evaluate the polynomial fitted to the first (last) full window at
/// their own offset, so polynomials of degree ≤ `order` pass through
/// unchanged everywhere. Sequences shorter than the window are returned as is.
pub fn savgol_smooth(x: &[f64], window: usize, order: usize) -> Result<Vec<f64>, PreprocessError> {
    if window.is_multiple_of(2) {
        return Err(PreprocessError::EvenWindow(window));
    }
    if order >= window {
        return Err(PreprocessError::OrderTooHigh { order, window });
    }
    if x.len() < window {
        return Ok(x.to_vec());
    }
    let half = window / 2;
    let n = x.len();
    let apply = |w: &[f64], start: usize| -> f64 {
        w.iter()
            .zip(&x[start..start + window])
            .map(|(a, b)| a * b)
            .sum()
    };
    let center = savgol_weights(half, order, 0.0);
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = apply(&center, i - half);
    }
    for i in 0..half {
        let w = savgol_weights(half, order, i as f64 - half as f64);
        out[i] = apply(&w, 0);
        let w = savgol_weights(half, order, half as f64 - i as f64);
        out[n - 1 - i] = apply(&w, n - window);
    }
    Ok(out)
}

/// Zeroes unvoiced frames, clamps to the floor, takes log₂ and smooths.
pub fn preprocess_energy(
    energy_raw: &[f32],
    vuv: &[u8],
    cfg: &EnergyConfig,
) -> Result<Vec<f64>, PreprocessError> {
    if energy_raw.len() != vuv.len() {
        return Err(PreprocessError::LengthMismatch(format!(
            "{} energy frames vs {} vuv frames",
            energy_raw.len(),
            vuv.len()
        )));
    }
    let logs = energy_raw
        .iter()
        .zip(vuv)
        .enumerate()
        .map(|(frame, (&e, &v))| {
            let e = f64::from(e);
            if e < 0.0 {
                return Err(PreprocessError::NegativeEnergy { frame, value: e });
            }
            let gated = if v == 0 { 0.0 } else { e };
            Ok(gated.max(cfg.floor).log2())
        })
        .collect::<Result<Vec<_>, _>>()?;
    savgol_smooth(&logs, cfg.window, cfg.order)
}

/// Repeats each phoneme id for its duration in frames.
pub fn length_regulate(
    phoneme_ids: &[u32],
    durations_frames: &[u32],
) -> Result<Vec<u32>, PreprocessError> {
    if phoneme_ids.len() != durations_frames.len() {
        return Err(PreprocessError::LengthMismatch(format!(
            "{} ids vs {} durations",
            phoneme_ids.len(),
            durations_frames.len()
        )));
    }
    let mut out = Vec::with_capacity(durations_frames.iter().map(|&d| d as usize).sum());
    for (i, (&id, &d)) in phoneme_ids.iter().zip(durations_frames).enumerate() {
        if d == 0 {
            return Err(PreprocessError::ZeroDuration(i));
        }
        out.extend(std::iter::repeat_n(id, d as usize));
    }
    Ok(out)
}

/// Mean of each phoneme's frame span.
///
/// With `voiced`, only frames flagged 1 are averaged and spans without any
/// voiced frame yield `None`.
pub fn phoneme_pool(
    values: &[f64],
    durations_frames: &[u32],
    voiced: Option<&[u8]>,
) -> Result<Vec<Option<f64>>, PreprocessError> {
    let total: usize = durations_frames.iter().map(|&d| d as usize).sum();
    if total != values.len() {
        return Err(PreprocessError::LengthMismatch(format!(
            "durations sum to {total}, {} values",
            values.len()
        )));
    }
    if let Some(v) = voiced {
        if v.len() != values.len() {
            return Err(PreprocessError::LengthMismatch(format!(
                "{} voicing flags for {} values",
                v.len(),
                values.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(durations_frames.len());
    let mut start = 0;
    for &d in durations_frames {
        let end = start + d as usize;
        let (mut sum, mut n) = (0.0, 0usize);
        for i in start..end {
            if voiced.is_none_or(|v| v[i] == 1) {
                sum += values[i];
                n += 1;
            }
        }
        out.push((n > 0).then(|| sum / n as f64));
        start = end;
    }
    Ok(out)
}

/// Broadcasts per-phoneme values back over their frames.
pub fn broadcast_phonemes(values: &[f64], durations_frames: &[u32]) -> Vec<f64> {
    values
        .iter()
        .zip(durations_frames)
        .flat_map(|(&v, &d)| std::iter::repeat_n(v, d as usize))
        .collect()
}
