//! Prompt/continuation evaluation over a corpus split.
//!
//! Each utterance is split at the phoneme boundary nearest its midpoint; the
//! first part is the unmasked prompt and the rest is masked and predicted.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dtw::dtw;
use super::scores::{
    error_metrics, phoneme_mae, pitch_accuracy, stats_diff, Feature, Level, PitchMode,
    DEFAULT_THRESHOLD_CENTS,
};
use super::{MetricError, NeumaierSum};
use crate::data::{EnergyConfig, UtteranceRecord, MEL_BANDS};
use crate::masking::FrameMask;
use crate::model::input::energy_targets;
use crate::model::{ModelError, Predictions, ProMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold_cents: f64,
    pub energy: EnergyConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold_cents: DEFAULT_THRESHOLD_CENTS,
            energy: EnergyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Block {
    #[serde(rename = "RPA")]
    pub rpa: f64,
    #[serde(rename = "RCA")]
    pub rca: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    #[serde(rename = "MAE_frame")]
    pub mae_frame: f64,
    #[serde(rename = "MAE_phoneme")]
    pub mae_phoneme: f64,
    pub mu_frame: f64,
    pub sigma_frame: f64,
    pub mu_phoneme: f64,
    pub sigma_phoneme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBlock {
    #[serde(rename = "MAE_log")]
    pub mae_log: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    #[serde(rename = "MAE_frame")]
    pub mae_frame: f64,
    #[serde(rename = "MAE_phoneme")]
    pub mae_phoneme: f64,
    pub mu_frame: f64,
    pub sigma_frame: f64,
    pub mu_phoneme: f64,
    pub sigma_phoneme: f64,
}

/// Corpus-level scores; each field is the mean over utterances where it is
/// defined, NaN where no utterance defines it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: usize,
    pub skipped: usize,
    #[serde(rename = "F0")]
    pub f0: F0Block,
    #[serde(rename = "energy")]
    pub energy: EnergyBlock,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, MetricError> {
        toml::from_str(s).map_err(|e| MetricError::Format(e.to_string()))
    }
}

/// Scores of one utterance's continuation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub speaker_id: String,
    /// First frame of the continuation.
    pub boundary: usize,
    pub nonpositive_predictions: usize,
    pub f0_rpa: Option<f64>,
    pub f0_rca: Option<f64>,
    pub f0_rmse: Option<f64>,
    pub f0_mae_frame: Option<f64>,
    pub f0_mae_phoneme: Option<f64>,
    pub f0_mu_frame: Option<f64>,
    pub f0_sigma_frame: Option<f64>,
    pub f0_mu_phoneme: Option<f64>,
    pub f0_sigma_phoneme: Option<f64>,
    pub energy_mae_log: Option<f64>,
    pub energy_rmse: Option<f64>,
    pub energy_mae_frame: Option<f64>,
    pub energy_mae_phoneme: Option<f64>,
    pub energy_mu_frame: Option<f64>,
    pub energy_sigma_frame: Option<f64>,
    pub energy_mu_phoneme: Option<f64>,
    pub energy_sigma_phoneme: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Sorted by id.
    pub utterances: Vec<UtteranceMetrics>,
    pub skipped_ids: Vec<String>,
}

impl Evaluation {
    /// Per-utterance diagnostics as structured text.
    pub fn diagnostics_toml(&self) -> String {
        #[derive(Serialize)]
        struct Diag<'a> {
            skipped: &'a [String],
            utterance: &'a [UtteranceMetrics],
        }
        toml::to_string(&Diag {
            skipped: &self.skipped_ids,
            utterance: &self.utterances,
        })
        .expect("diagnostics serialize")
    }
}

/// Index of the first continuation phoneme and its start frame: the interior
/// phoneme boundary nearest T/2, the earlier one on ties.
pub fn continuation_split(durations: &[u32]) -> Option<(usize, usize)> {
    if durations.len() < 2 {
        return None;
    }
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0usize;
    for (k, &d) in durations.iter().enumerate().take(durations.len() - 1) {
        start += d as usize;
        let dist = (2 * start).abs_diff(total);
        if best.is_none_or(|(_, b)| dist < (2 * b).abs_diff(total)) {
            best = Some((k + 1, start));
        }
    }
    best
}

/// Boundary phoneme index and frame of `fraction` of the utterance, snapped
/// to the nearest interior phoneme boundary.
pub fn split_at_fraction(durations: &[u32], fraction: f64) -> Option<(usize, usize)> {
    if durations.len() < 2 || !(0.0..=1.0).contains(&fraction) {
        return None;
    }
    let total: f64 = durations.iter().map(|&d| f64::from(d)).sum();
    let target = fraction * total;
    let mut start = 0usize;
    let mut best: Option<(usize, usize, f64)> = None;
    for (k, &d) in durations.iter().enumerate().take(durations.len() - 1) {
        start += d as usize;
        let dist = (start as f64 - target).abs();
        if best.is_none_or(|(_, _, b)| dist < b) {
            best = Some((k + 1, start, dist));
        }
    }
    best.map(|(k, s, _)| (k, s))
}

/// Predicted F0 with frames whose vuv logit is negative set to 0 Hz.
pub fn gated_f0(p: &Predictions) -> Vec<f64> {
    p.f0_hz
        .iter()
        .zip(&p.vuv_logit)
        .map(|(&f, &v)| if v >= 0.0 { f64::from(f) } else { 0.0 })
        .collect()
}

fn aligned(
    gt: &[f64],
    pred: &[f64],
    vuv: &[u8],
) -> Result<(Vec<f64>, Vec<f64>, Vec<u8>), MetricError> {
    let a = dtw(gt, pred)?;
    let mut g = Vec::with_capacity(a.path.len());
    let mut p = Vec::with_capacity(a.path.len());
    let mut v = Vec::with_capacity(a.path.len());
    for &(i, j) in &a.path {
        g.push(gt[i]);
        p.push(pred[j]);
        v.push(vuv[i]);
    }
    Ok((g, p, v))
}

/// Scores the continuation of `record` given full-length predictions.
pub fn score_utterance(
    record: &UtteranceRecord,
    pred: &Predictions,
    boundary: (usize, usize),
    cfg: &EvalConfig,
) -> Result<UtteranceMetrics, MetricError> {
    let t = record.frames();
    if pred.len() != t {
        return Err(MetricError::LengthMismatch(format!(
            "{} predicted frames for {t}",
            pred.len()
        )));
    }
    let (k, b) = boundary;
    let durations = &record.durations_frames[k..];
    let vuv = &record.vuv[b..];

    let gt_f0: Vec<f64> = record.f0_hz[b..].iter().map(|&v| f64::from(v)).collect();
    let pred_f0 = gated_f0(pred)[b..].to_vec();
    let (ag, ap, av) = aligned(&gt_f0, &pred_f0, vuv)?;
    let rpa = pitch_accuracy(&ag, &ap, &av, PitchMode::Rpa, cfg.threshold_cents)?;
    let rca = pitch_accuracy(&ag, &ap, &av, PitchMode::Rca, cfg.threshold_cents)?;
    let f0_err = error_metrics(&ag, &ap, &av, Feature::F0)?;
    let f0_frame = stats_diff(&gt_f0, &pred_f0, durations, Some(vuv), Level::Frame)?;
    let f0_ph = stats_diff(&gt_f0, &pred_f0, durations, Some(vuv), Level::Phoneme)?;

    // Targets are compared at the f32 precision predictions are stored in.
    let gt_e: Vec<f64> = energy_targets(record, &cfg.energy)
        .map_err(|e| MetricError::Input(e.to_string()))?[b..]
        .iter()
        .map(|&v| f64::from(v as f32))
        .collect();
    let pred_e: Vec<f64> = pred.energy_log[b..].iter().map(|&v| f64::from(v)).collect();
    let (eg, ep, ev) = aligned(&gt_e, &pred_e, vuv)?;
    let e_err = error_metrics(&eg, &ep, &ev, Feature::Energy)?;
    let lin = |v: &[f64]| v.iter().map(|x| x.exp2()).collect::<Vec<f64>>();
    let (gl, pl) = (lin(&gt_e), lin(&pred_e));
    let e_frame = stats_diff(&gl, &pl, durations, None, Level::Frame)?;
    let e_ph = stats_diff(&gl, &pl, durations, None, Level::Phoneme)?;

    Ok(UtteranceMetrics {
        id: record.id.clone(),
        speaker_id: record.speaker_id.clone(),
        boundary: b,
        nonpositive_predictions: rpa.nonpositive_predictions,
        f0_rpa: rpa.percent,
        f0_rca: rca.percent,
        f0_rmse: f0_err.rmse,
        f0_mae_frame: f0_err.mae_frame,
        f0_mae_phoneme: phoneme_mae(&gt_f0, &pred_f0, durations, Some(vuv))?,
        f0_mu_frame: f0_frame.mu,
        f0_sigma_frame: f0_frame.sigma,
        f0_mu_phoneme: f0_ph.mu,
        f0_sigma_phoneme: f0_ph.sigma,
        energy_mae_log: e_err.mae_log,
        energy_rmse: e_err.rmse,
        energy_mae_frame: e_err.mae_frame,
        energy_mae_phoneme: phoneme_mae(&gl, &pl, durations, None)?,
        energy_mu_frame: e_frame.mu,
        energy_sigma_frame: e_frame.sigma,
        energy_mu_phoneme: e_ph.mu,
        energy_sigma_phoneme: e_ph.sigma,
    })
}

fn average(items: &[UtteranceMetrics], field: impl Fn(&UtteranceMetrics) -> Option<f64>) -> f64 {
    let mut s = NeumaierSum::default();
    let mut n = 0usize;
    for v in items.iter().filter_map(field) {
        s.add(v);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s.total() / n as f64
    }
}

/// Corpus report from per-utterance scores; independent of their order.
pub fn aggregate(
    items: &[UtteranceMetrics],
    skipped: usize,
    config: BTreeMap<String, String>,
) -> MetricReport {
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let s = &sorted;
    MetricReport {
        utterances: items.len(),
        skipped,
        f0: F0Block {
            rpa: average(s, |u| u.f0_rpa),
            rca: average(s, |u| u.f0_rca),
            rmse: average(s, |u| u.f0_rmse),
            mae_frame: average(s, |u| u.f0_mae_frame),
            mae_phoneme: average(s, |u| u.f0_mae_phoneme),
            mu_frame: average(s, |u| u.f0_mu_frame),
            sigma_frame: average(s, |u| u.f0_sigma_frame),
            mu_phoneme: average(s, |u| u.f0_mu_phoneme),
            sigma_phoneme: average(s, |u| u.f0_sigma_phoneme),
        },
        energy: EnergyBlock {
            mae_log: average(s, |u| u.energy_mae_log),
            rmse: average(s, |u| u.energy_rmse),
            mae_frame: average(s, |u| u.energy_mae_frame),
            mae_phoneme: average(s, |u| u.energy_mae_phoneme),
            mu_frame: average(s, |u| u.energy_mu_frame),
            sigma_frame: average(s, |u| u.energy_sigma_frame),
            mu_phoneme: average(s, |u| u.energy_mu_phoneme),
            sigma_phoneme: average(s, |u| u.energy_sigma_phoneme),
        },
        config,
    }
}

/// Evaluates an arbitrary predictor, called once per utterance with its continuation mask.
pub fn evaluate_with<P>(
    records: &[UtteranceRecord],
    cfg: &EvalConfig,
    config_echo: BTreeMap<String, String>,
    predict: P,
) -> Result<Evaluation, MetricError>
where
    P: Fn(&UtteranceRecord, &FrameMask) -> Result<Predictions, ModelError> + Sync,
{
    if records.is_empty() {
        return Err(MetricError::EmptySplit);
    }
    let scored: Vec<Result<Option<UtteranceMetrics>, MetricError>> = records
        .par_iter()
        .map(|r| {
            let Some(boundary) = continuation_split(&r.durations_frames) else {
                return Ok(None);
            };
            let mask = FrameMask::suffix(&r.durations_frames, boundary.0);
            let pred = predict(r, &mask)?;
            score_utterance(r, &pred, boundary, cfg).map(Some)
        })
        .collect();
    let mut utterances = Vec::new();
    let mut skipped_ids = Vec::new();
    for (r, s) in records.iter().zip(scored) {
        match s? {
            Some(m) => utterances.push(m),
            None => skipped_ids.push(r.id.clone()),
        }
    }
    utterances.sort_by(|a, b| a.id.cmp(&b.id));
    skipped_ids.sort();
    let mut echo = config_echo;
    echo.insert("threshold_cents".into(), cfg.threshold_cents.to_string());
    echo.insert("energy".into(), format!("{:?}", cfg.energy));
    let report = aggregate(&utterances, skipped_ids.len(), echo);
    Ok(Evaluation {
        report,
        utterances,
        skipped_ids,
    })
}

/// Continuation evaluation of a trained model.
pub fn evaluate_continuation(
    model: &ProMode<f32>,
    records: &[UtteranceRecord],
    cfg: &EvalConfig,
    config_echo: BTreeMap<String, String>,
) -> Result<Evaluation, MetricError> {
    let cfg = EvalConfig {
        energy: model.energy,
        ..cfg.clone()
    };
    evaluate_with(records, &cfg, config_echo, |r, m| model.predict(r, m))
}

/// Per-speaker means of voiced F0 and of log energy over whole utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerMeans {
    pub f0_hz: BTreeMap<String, f64>,
    pub energy_log: BTreeMap<String, f64>,
}

impl SpeakerMeans {
    pub fn new(records: &[UtteranceRecord], energy: &EnergyConfig) -> Result<Self, MetricError> {
        let mut f0: BTreeMap<String, (NeumaierSum, usize)> = BTreeMap::new();
        let mut en: BTreeMap<String, (NeumaierSum, usize)> = BTreeMap::new();
        let mut sorted: Vec<&UtteranceRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        for r in sorted {
            let e = f0.entry(r.speaker_id.clone()).or_default();
            for (&v, &u) in r.f0_hz.iter().zip(&r.vuv) {
                if u == 1 {
                    e.0.add(f64::from(v));
                    e.1 += 1;
                }
            }
            let e = en.entry(r.speaker_id.clone()).or_default();
            for v in energy_targets(r, energy).map_err(|e| MetricError::Input(e.to_string()))? {
                e.0.add(v);
                e.1 += 1;
            }
        }
        let finish = |m: BTreeMap<String, (NeumaierSum, usize)>| {
            m.into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(k, (s, n))| (k, s.total() / n as f64))
                .collect()
        };
        Ok(Self {
            f0_hz: finish(f0),
            energy_log: finish(en),
        })
    }

    /// Constant speaker-mean contours with ground-truth voicing.
    pub fn predict(&self, record: &UtteranceRecord) -> Predictions {
        let t = record.frames();
        let f0 = self.f0_hz.get(&record.speaker_id).copied().unwrap_or(0.0) as f32;
        let e = self
            .energy_log
            .get(&record.speaker_id)
            .copied()
            .unwrap_or(0.0) as f32;
        Predictions {
            f0_hz: vec![f0; t],
            energy_log: vec![e; t],
            mel10: vec![[0.0; MEL_BANDS]; t],
            vuv_logit: record
                .vuv
                .iter()
                .map(|&v| if v == 1 { 20.0 } else { -20.0 })
                .collect(),
        }
    }
}

/// Per-speaker-mean baseline scored with the continuation protocol.
pub fn evaluate_speaker_mean_baseline(
    records: &[UtteranceRecord],
    cfg: &EvalConfig,
) -> Result<Evaluation, MetricError> {
    let means = SpeakerMeans::new(records, &cfg.energy)?;
    let echo = BTreeMap::from([("predictor".to_string(), "per-speaker mean".to_string())]);
    evaluate_with(records, cfg, echo, |r, _| Ok(means.predict(r)))
}

/// `record` with its first `boundary` frames of acoustics and its speaker
/// vector taken from `donor`, cycling donor frames when it is shorter.
pub fn swap_prompt(
    record: &UtteranceRecord,
    donor: &UtteranceRecord,
    boundary: usize,
) -> UtteranceRecord {
    let mut out = record.clone();
    let n = donor.frames();
    for i in 0..boundary {
        let s = i % n;
        out.f0_hz[i] = donor.f0_hz[s];
        out.energy_raw[i] = donor.energy_raw[s];
        out.mel10[i] = donor.mel10[s];
        out.vuv[i] = donor.vuv[s];
    }
    out.speaker_vec = donor.speaker_vec.clone();
    out
}

/// Mean absolute change (Hz) of predicted continuation F0 when each prompt
/// is replaced by one from the next utterance of a different speaker.
pub fn prompt_sensitivity(
    model: &ProMode<f32>,
    records: &[UtteranceRecord],
) -> Result<f64, MetricError> {
    let n = records.len();
    let changes: Vec<Result<Option<f64>, MetricError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = &records[i];
            let Some((k, b)) = continuation_split(&r.durations_frames) else {
                return Ok(None);
            };
            let Some(donor) = (1..n)
                .map(|o| &records[(i + o) % n])
                .find(|d| d.speaker_id != r.speaker_id)
            else {
                return Ok(None);
            };
            let mask = FrameMask::suffix(&r.durations_frames, k);
            let base = model.predict(r, &mask)?;
            let swapped = model.predict(&swap_prompt(r, donor, b), &mask)?;
            let mut s = NeumaierSum::default();
            for t in b..r.frames() {
                s.add((f64::from(base.f0_hz[t]) - f64::from(swapped.f0_hz[t])).abs());
            }
            Ok(Some(s.total() / (r.frames() - b) as f64))
        })
        .collect();
    let mut s = NeumaierSum::default();
    let mut count = 0usize;
    for c in changes {
        if let Some(v) = c? {
            s.add(v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::EmptySplit);
    }
    Ok(s.total() / count as f64)
}

/// Writes `report` as structured text.
pub fn write_report(report: &MetricReport, path: &Path) -> Result<(), MetricError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| MetricError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(report.to_toml().as_bytes())
        .map_err(|e| MetricError::Io(format!("{}: {e}", path.display())))
}
