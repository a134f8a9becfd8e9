//! Pitch accuracy, error metrics and statistics differences on aligned or
//! frame-synchronous sequences.

use super::{MetricError, NeumaierSum};
use crate::data::phoneme_pool;

pub const DEFAULT_THRESHOLD_CENTS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitchMode {
    /// Raw pitch accuracy.
    Rpa,
    /// Raw chroma accuracy: octave errors folded into [−600, 600] cents.
    Rca,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchAccuracy {
    /// Percent of gt-voiced pairs within the threshold; `None` without any.
    pub percent: Option<f64>,
    /// Counted pairs whose prediction is not a positive frequency.
    pub nonpositive_predictions: usize,
}

pub fn cents(pred_hz: f64, gt_hz: f64) -> f64 {
    1200.0 * (pred_hz / gt_hz).log2()
}

/// Cent difference reduced modulo one octave into [−600, 600].
pub fn fold_octave(c: f64) -> f64 {
    c - 1200.0 * (c / 1200.0).round()
}

fn same_len(a: usize, b: usize, c: usize) -> Result<(), MetricError> {
    if a == b && b == c {
        Ok(())
    } else {
        Err(MetricError::LengthMismatch(format!("{a} vs {b} vs {c}")))
    }
}

pub fn pitch_accuracy(
    gt_f0: &[f64],
    pred_f0: &[f64],
    gt_vuv: &[u8],
    mode: PitchMode,
    threshold_cents: f64,
) -> Result<PitchAccuracy, MetricError> {
    same_len(gt_f0.len(), pred_f0.len(), gt_vuv.len())?;
    if threshold_cents <= 0.0 || !threshold_cents.is_finite() {
        return Err(MetricError::Threshold(threshold_cents));
    }
    let (mut total, mut correct, mut nonpositive) = (0usize, 0usize, 0usize);
    for ((&g, &p), &v) in gt_f0.iter().zip(pred_f0).zip(gt_vuv) {
        if v != 1 {
            continue;
        }
        total += 1;
        if p <= 0.0 || !p.is_finite() {
            nonpositive += 1;
            continue;
        }
        let c = cents(p, g);
        let c = match mode {
            PitchMode::Rpa => c,
            PitchMode::Rca => fold_octave(c),
        };
        if c.abs() <= threshold_cents {
            correct += 1;
        }
    }
    Ok(PitchAccuracy {
        percent: (total > 0).then(|| 100.0 * correct as f64 / total as f64),
        nonpositive_predictions: nonpositive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    /// Hz, with voiced-only MAE.
    F0,
    /// log₂ energy; MAE/RMSE on linear scale, MAE_log on log₂.
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorMetrics {
    pub rmse: Option<f64>,
    pub mae_frame: Option<f64>,
    pub mae_log: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut s = NeumaierSum::default();
    let mut n = 0usize;
    for v in values {
        s.add(v);
        n += 1;
    }
    (n > 0).then(|| s.total() / n as f64)
}

pub fn error_metrics(
    gt: &[f64],
    pred: &[f64],
    gt_vuv: &[u8],
    feature: Feature,
) -> Result<ErrorMetrics, MetricError> {
    same_len(gt.len(), pred.len(), gt_vuv.len())?;
    let pairs = || gt.iter().zip(pred);
    Ok(match feature {
        Feature::F0 => ErrorMetrics {
            rmse: mean(pairs().map(|(g, p)| (g - p).powi(2))).map(f64::sqrt),
            mae_frame: mean(
                pairs()
                    .zip(gt_vuv)
                    .filter(|(_, &v)| v == 1)
                    .map(|((g, p), _)| (g - p).abs()),
            ),
            mae_log: None,
        },
        Feature::Energy => ErrorMetrics {
            rmse: mean(pairs().map(|(g, p)| (g.exp2() - p.exp2()).powi(2))).map(f64::sqrt),
            mae_frame: mean(pairs().map(|(g, p)| (g.exp2() - p.exp2()).abs())),
            mae_log: mean(pairs().map(|(g, p)| (g - p).abs())),
        },
    })
}

/// Mean absolute difference of phoneme means; F0 passes `gt_vuv` to pool
/// voiced frames only, and spans without any are skipped.
pub fn phoneme_mae(
    gt: &[f64],
    pred: &[f64],
    durations: &[u32],
    gt_vuv: Option<&[u8]>,
) -> Result<Option<f64>, MetricError> {
    let g = phoneme_pool(gt, durations, gt_vuv)?;
    let p = phoneme_pool(pred, durations, gt_vuv)?;
    Ok(mean(g.iter().zip(&p).filter_map(|(g, p)| {
        Some((g.as_ref()? - p.as_ref()?).abs())
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Frame,
    Phoneme,
}

/// |μ_gt − μ_pred| and |σ_gt − σ_pred|; σ is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatsDiff {
    pub mu: Option<f64>,
    /// `None` when fewer than two values are available.
    pub sigma: Option<f64>,
}

/// Mean and population standard deviation, two-pass.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let Some(mu) = mean(values.iter().copied()) else {
        return (None, None);
    };
    if values.len() < 2 {
        return (Some(mu), None);
    }
    let var = mean(values.iter().map(|v| (v - mu).powi(2))).expect("non-empty");
    (Some(mu), Some(var.sqrt()))
}

pub fn stats_diff(
    gt: &[f64],
    pred: &[f64],
    durations: &[u32],
    gt_vuv: Option<&[u8]>,
    level: Level,
) -> Result<StatsDiff, MetricError> {
    if gt.len() != pred.len() {
        return Err(MetricError::LengthMismatch(format!(
            "{} vs {}",
            gt.len(),
            pred.len()
        )));
    }
    let (g, p): (Vec<f64>, Vec<f64>) = match level {
        Level::Frame => {
            if let Some(v) = gt_vuv {
                same_len(gt.len(), pred.len(), v.len())?;
            }
            gt.iter()
                .zip(pred)
                .enumerate()
                .filter(|(i, _)| gt_vuv.is_none_or(|v| v[*i] == 1))
                .map(|(_, (&g, &p))| (g, p))
                .unzip()
        }
        Level::Phoneme => {
            let g = phoneme_pool(gt, durations, gt_vuv)?;
            let p = phoneme_pool(pred, durations, gt_vuv)?;
            g.iter()
                .zip(&p)
                .filter_map(|(g, p)| Some(((*g)?, (*p)?)))
                .unzip()
        }
    };
    let (mg, sg) = mean_std(&g);
    let (mp, sp) = mean_std(&p);
    Ok(StatsDiff {
        mu: mg.zip(mp).map(|(a, b)| (a - b).abs()),
        sigma: sg.zip(sp).map(|(a, b)| (a - b).abs()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cent_threshold_example() {
        let r = pitch_accuracy(
            &[200.0, 200.0],
            &[205.0, 206.0],
            &[1, 1],
            PitchMode::Rpa,
            50.0,
        )
        .unwrap();
        assert_eq!(r.percent, Some(50.0));
    }

    #[test]
    fn octave_counts_only_for_chroma() {
        let rpa = pitch_accuracy(&[200.0], &[400.0], &[1], PitchMode::Rpa, 50.0).unwrap();
        let rca = pitch_accuracy(&[200.0], &[400.0], &[1], PitchMode::Rca, 50.0).unwrap();
        assert_eq!((rpa.percent, rca.percent), (Some(0.0), Some(100.0)));
    }

    #[test]
    fn unvoiced_and_nonpositive_frames() {
        let r = pitch_accuracy(
            &[0.0, 200.0, 200.0],
            &[0.0, 0.0, 200.0],
            &[0, 1, 1],
            PitchMode::Rpa,
            50.0,
        )
        .unwrap();
        assert_eq!(r.percent, Some(50.0));
        assert_eq!(r.nonpositive_predictions, 1);
        let none = pitch_accuracy(&[0.0], &[0.0], &[0], PitchMode::Rca, 50.0).unwrap();
        assert_eq!(none.percent, None);
        assert!(pitch_accuracy(&[1.0], &[1.0], &[1], PitchMode::Rpa, 0.0).is_err());
    }

    #[test]
    fn hand_computed_errors() {
        let f = error_metrics(&[100.0, 200.0], &[110.0, 190.0], &[1, 1], Feature::F0).unwrap();
        assert_eq!((f.mae_frame, f.rmse), (Some(10.0), Some(10.0)));
        let e = error_metrics(&[2.0, 2.0], &[2.5, 1.5], &[1, 1], Feature::Energy).unwrap();
        assert_eq!(e.mae_log, Some(0.5));
        // Linear scale: |4 − 2^2.5| and |4 − 2^1.5|.
        let lin = ((2f64.powf(2.5) - 4.0) + (4.0 - 2f64.powf(1.5))) / 2.0;
        assert!((e.mae_frame.unwrap() - lin).abs() < 1e-12);
    }

    #[test]
    fn f0_rmse_includes_unvoiced_pairs() {
        let f = error_metrics(&[0.0, 100.0], &[30.0, 100.0], &[0, 1], Feature::F0).unwrap();
        assert_eq!(f.mae_frame, Some(0.0));
        assert!((f.rmse.unwrap() - (450.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn equal_spread_phoneme_stats() {
        let d = stats_diff(
            &[1.0, 1.0, 3.0, 3.0],
            &[2.0, 2.0, 4.0, 4.0],
            &[2, 2],
            None,
            Level::Phoneme,
        )
        .unwrap();
        assert_eq!((d.mu, d.sigma), (Some(1.0), Some(0.0)));
        let single = stats_diff(&[1.0], &[2.0], &[1], None, Level::Frame).unwrap();
        assert_eq!((single.mu, single.sigma), (Some(1.0), None));
    }

    #[test]
    fn voiced_phoneme_mae_skips_silent_spans() {
        let m = phoneme_mae(
            &[10.0, 0.0, 0.0, 0.0],
            &[12.0, 5.0, 7.0, 9.0],
            &[2, 2],
            Some(&[1, 0, 0, 0]),
        )
        .unwrap();
        assert_eq!(m, Some(2.0));
    }
}
