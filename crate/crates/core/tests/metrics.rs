mod common;

use std::collections::BTreeMap;

use promode::metrics::*;
use promode::model::{ModelConfig, ProMode};
use promode::synth::{generate_utterance, GenConfig, Inventory};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum path cost by enumerating every monotone path from (0,0) to (n-1,m-1).
fn exhaustive_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|_| rng.random_range(-5.0..5.0f64).round() / 2.0)
        .collect()
}

#[test]
fn dtw_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for _ in 0..500 {
        let a = random_seq(&mut rng, 8);
        let b = random_seq(&mut rng, 8);
        let r = dtw(&a, &b).unwrap();
        assert!(
            (r.cost - exhaustive_dtw(&a, &b)).abs() < 1e-12,
            "{a:?} {b:?}"
        );
        assert_eq!(r.path[0], (0, 0));
        assert_eq!(*r.path.last().unwrap(), (a.len() - 1, b.len() - 1));
        for w in r.path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!((di, dj), (1, 0) | (0, 1) | (1, 1)));
        }
        let path_cost: f64 = r.pairs(&a, &b).map(|(x, y)| (x - y).abs()).sum();
        assert!((path_cost - r.cost).abs() < 1e-12);
    }
}

#[test]
fn dtw_cost_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let a = random_seq(&mut rng, 12);
        let b = random_seq(&mut rng, 12);
        assert_eq!(dtw(&a, &b).unwrap().cost, dtw(&b, &a).unwrap().cost);
    }
}

/// Direct cent comparison: a prediction is a chroma hit when some octave
/// multiple of it lies within the threshold.
fn oracle_accuracy(gt: &[f64], pred: &[f64], vuv: &[u8], chroma: bool) -> Option<f64> {
    let mut total = 0;
    let mut hit = 0;
    for i in 0..gt.len() {
        if vuv[i] != 1 {
            continue;
        }
        total += 1;
        if pred[i] <= 0.0 {
            continue;
        }
        let octaves: Vec<i32> = if chroma { (-8..=8).collect() } else { vec![0] };
        if octaves
            .iter()
            .any(|&k| (1200.0 * (pred[i] * 2f64.powi(k) / gt[i]).ln() / 2f64.ln()).abs() <= 50.0)
        {
            hit += 1;
        }
    }
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

proptest! {
    #[test]
    fn pitch_accuracy_matches_cent_oracle(
        frames in prop::collection::vec((60.0..500.0f64, 0.0..2000.0f64, 0u8..2), 1..40)
    ) {
        let gt: Vec<f64> = frames.iter().map(|f| f.0).collect();
        let pred: Vec<f64> = frames.iter().map(|f| f.1).collect();
        let vuv: Vec<u8> = frames.iter().map(|f| f.2).collect();
        let rpa = pitch_accuracy(&gt, &pred, &vuv, PitchMode::Rpa, 50.0).unwrap().percent;
        let rca = pitch_accuracy(&gt, &pred, &vuv, PitchMode::Rca, 50.0).unwrap().percent;
        prop_assert_eq!(rpa, oracle_accuracy(&gt, &pred, &vuv, false));
        prop_assert_eq!(rca, oracle_accuracy(&gt, &pred, &vuv, true));
        if let (Some(p), Some(c)) = (rpa, rca) {
            prop_assert!(c >= p);
        }
    }

    #[test]
    fn error_metrics_vanish_only_on_equality(
        gt in prop::collection::vec(1.0..400.0f64, 1..30),
        noise in prop::collection::vec(-3.0..3.0f64, 30),
    ) {
        let vuv = vec![1u8; gt.len()];
        let pred: Vec<f64> = gt.iter().zip(&noise).map(|(g, n)| g + n).collect();
        let differs = gt.iter().zip(&pred).any(|(g, p)| g != p);
        for feature in [Feature::F0, Feature::Energy] {
            let same = error_metrics(&gt, &gt, &vuv, feature).unwrap();
            for v in [same.rmse, same.mae_frame, same.mae_log].into_iter().flatten() {
                prop_assert_eq!(v, 0.0);
            }
            let e = error_metrics(&gt, &pred, &vuv, feature).unwrap();
            for v in [e.rmse, e.mae_frame, e.mae_log].into_iter().flatten() {
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v > 0.0, differs);
            }
        }
    }
}

fn two_pass(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    let m = s / n;
    let mut q = 0.0;
    for x in v {
        q += (x - m) * (x - m);
    }
    (m, (q / n).sqrt())
}

#[test]
fn stats_diff_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..200 {
        let gt: Vec<f64> = (0..50).map(|_| rng.random_range(50.0..300.0)).collect();
        let pred: Vec<f64> = (0..50).map(|_| rng.random_range(50.0..300.0)).collect();
        let d = stats_diff(&gt, &pred, &[50], None, Level::Frame).unwrap();
        let (mg, sg) = two_pass(&gt);
        let (mp, sp) = two_pass(&pred);
        assert!((d.mu.unwrap() - (mg - mp).abs()).abs() < 1e-9);
        assert!((d.sigma.unwrap() - (sg - sp).abs()).abs() < 1e-9);
    }
}

fn corpus(n: usize) -> Vec<promode::data::UtteranceRecord> {
    let cfg = GenConfig {
        phonemes_min: 8,
        phonemes_max: 14,
        utterances_per_speaker: 3,
        ..GenConfig::default()
    };
    let inv = Inventory::new(&cfg);
    (0..n)
        .map(|i| generate_utterance(&cfg, &inv, "test", i).unwrap())
        .collect()
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let cfg = ModelConfig {
        oracle: true,
        ..ModelConfig::tiny()
    };
    let model = ProMode::<f32>::new(&cfg, 1).unwrap();
    let ev =
        evaluate_continuation(&model, &corpus(6), &EvalConfig::default(), BTreeMap::new()).unwrap();
    let r = &ev.report;
    assert_eq!((r.utterances, r.skipped), (6, 0));
    assert_eq!((r.f0.rpa, r.f0.rca), (100.0, 100.0));
    for v in [
        r.f0.rmse,
        r.f0.mae_frame,
        r.f0.mae_phoneme,
        r.f0.mu_frame,
        r.f0.sigma_frame,
        r.f0.mu_phoneme,
        r.f0.sigma_phoneme,
    ] {
        assert_eq!(v, 0.0);
    }
    for v in [
        r.energy.mae_log,
        r.energy.rmse,
        r.energy.mae_frame,
        r.energy.mae_phoneme,
        r.energy.mu_frame,
        r.energy.sigma_frame,
        r.energy.mu_phoneme,
        r.energy.sigma_phoneme,
    ] {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn report_has_exactly_the_table_fields() {
    let data = corpus(3);
    let ev = evaluate_speaker_mean_baseline(&data, &EvalConfig::default()).unwrap();
    let table: toml::Table = toml::from_str(&ev.report.to_toml()).unwrap();
    let keys = |k: &str| {
        table[k]
            .as_table()
            .unwrap()
            .keys()
            .cloned()
            .collect::<Vec<_>>()
    };
    let mut f0 = vec![
        "RPA",
        "RCA",
        "RMSE",
        "MAE_frame",
        "MAE_phoneme",
        "mu_frame",
        "sigma_frame",
        "mu_phoneme",
        "sigma_phoneme",
    ];
    let mut energy = vec![
        "MAE_log",
        "RMSE",
        "MAE_frame",
        "MAE_phoneme",
        "mu_frame",
        "sigma_frame",
        "mu_phoneme",
        "sigma_phoneme",
    ];
    f0.sort();
    energy.sort();
    assert_eq!(keys("F0"), f0);
    assert_eq!(keys("energy"), energy);
    assert_eq!(
        MetricReport::from_toml(&ev.report.to_toml()).unwrap(),
        ev.report
    );
    assert!(ev.report.f0.sigma_frame >= 0.0 && ev.report.energy.sigma_phoneme >= 0.0);
}

#[test]
fn evaluation_ignores_utterance_order() {
    let mut data = corpus(8);
    let a = evaluate_speaker_mean_baseline(&data, &EvalConfig::default()).unwrap();
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let b = evaluate_speaker_mean_baseline(&data, &EvalConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.report.f0.mae_frame > 0.0);
}

#[test]
fn single_phoneme_utterances_are_skipped() {
    let mut data = corpus(2);
    let r = &mut data[1];
    r.phoneme_ids.truncate(1);
    r.durations_frames = vec![r.frames() as u32];
    let ev = evaluate_speaker_mean_baseline(&data, &EvalConfig::default()).unwrap();
    assert_eq!((ev.report.utterances, ev.report.skipped), (1, 1));
    assert_eq!(ev.skipped_ids, vec![data[1].id.clone()]);
    assert!(evaluate_speaker_mean_baseline(&[], &EvalConfig::default()).is_err());
}

#[test]
fn swapped_prompt_is_valid_and_keeps_the_continuation() {
    let data = corpus(4);
    let (a, b) = (&data[0], &data[3]);
    assert_ne!(a.speaker_id, b.speaker_id);
    let (_, boundary) = continuation_split(&a.durations_frames).unwrap();
    let s = swap_prompt(a, b, boundary);
    assert!(s.validate().is_empty());
    assert_eq!(s.f0_hz[boundary..], a.f0_hz[boundary..]);
    assert_eq!(s.speaker_vec, b.speaker_vec);
    let model = ProMode::<f32>::new(&ModelConfig::tiny(), 1).unwrap();
    // Zero-initialized heads ignore the prompt entirely.
    assert_eq!(prompt_sensitivity(&model, &data).unwrap(), 0.0);
}
