use nalgebra::{DMatrix, DVector};
use promode::data::preprocess::broadcast_phonemes;
use promode::data::{decode_record, encode_record, length_regulate, phoneme_pool, savgol_smooth};
use promode::synth::{
    generate_utterance, sample_speaker, speaker_id, speaker_seed, GenConfig, Inventory,
};
use proptest::prelude::*;

/// Least-squares polynomial through one window, solved independently by SVD.
fn fit_eval(ys: &[f64], order: usize, at: f64) -> f64 {
    let half = (ys.len() / 2) as f64;
    let a = DMatrix::from_fn(ys.len(), order + 1, |r, c| (r as f64 - half).powi(c as i32));
    let b = DVector::from_column_slice(ys);
    let coef = a.svd(true, true).solve(&b, 1e-14).unwrap();
    (0..=order).map(|c| coef[c] * at.powi(c as i32)).sum()
}

fn savgol_oracle(x: &[f64], window: usize, order: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - window);
            fit_eval(
                &x[start..start + window],
                order,
                i as f64 - (start + half) as f64,
            )
        })
        .collect()
}

fn window_and_order() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6).prop_flat_map(|h| (Just(2 * h + 1), 0..(2 * h + 1).min(5)))
}

proptest! {
    #[test]
    fn savgol_matches_least_squares_oracle(
        (window, order) in window_and_order(),
        x in prop::collection::vec(-10.0..10.0f64, 11..60),
    ) {
        let got = savgol_smooth(&x, window, order).unwrap();
        for (g, o) in got.iter().zip(savgol_oracle(&x, window, order)) {
            prop_assert!((g - o).abs() < 1e-9, "{g} vs {o}");
        }
    }

    #[test]
    fn savgol_preserves_low_degree_polynomials(
        (window, order) in window_and_order(),
        coef in prop::collection::vec(-1.0..1.0f64, 5),
        n in 11usize..80,
    ) {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                (0..=order).map(|k| coef[k] * t.powi(k as i32)).sum()
            })
            .collect();
        let y = savgol_smooth(&x, window, order).unwrap();
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pooling_then_broadcast_is_idempotent(
        spans in prop::collection::vec((1u32..8, -5.0..5.0f64), 1..20),
        noise in prop::collection::vec(-1.0..1.0f64, 160),
    ) {
        let durations: Vec<u32> = spans.iter().map(|s| s.0).collect();
        let values: Vec<f64> = durations
            .iter()
            .zip(&spans)
            .flat_map(|(&d, s)| std::iter::repeat_n(s.1, d as usize))
            .zip(&noise)
            .map(|(v, n)| v + n)
            .collect();
        let once: Vec<f64> = phoneme_pool(&values, &durations, None).unwrap().into_iter().map(Option::unwrap).collect();
        let back = broadcast_phonemes(&once, &durations);
        let twice: Vec<f64> = phoneme_pool(&back, &durations, None).unwrap().into_iter().map(Option::unwrap).collect();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn length_regulation_is_invertible(spans in prop::collection::vec((0u32..50, 1u32..12), 1..40)) {
        let ids: Vec<u32> = spans.iter().map(|s| s.0).collect();
        let durations: Vec<u32> = spans.iter().map(|s| s.1).collect();
        let frames = length_regulate(&ids, &durations).unwrap();
        prop_assert_eq!(frames.len(), durations.iter().sum::<u32>() as usize);
        let mut start = 0usize;
        let mut recovered = Vec::new();
        for &d in &durations {
            recovered.push(frames[start]);
            prop_assert!(frames[start..start + d as usize].iter().all(|&f| f == frames[start]));
            start += d as usize;
        }
        prop_assert_eq!(recovered, ids);
    }
}

fn configs() -> Vec<GenConfig> {
    vec![
        GenConfig::default(),
        GenConfig {
            seed: 77,
            phonemes_min: 2,
            phonemes_max: 12,
            unvoiced_fraction: 0.6,
            accent_probability: 0.9,
            utterances_per_speaker: 3,
            ..GenConfig::default()
        },
        GenConfig {
            seed: 5,
            jitter_semitones: 0.5,
            f0_range_min: 8.0,
            f0_range_max: 12.0,
            max_frames: 200,
            ..GenConfig::default()
        },
    ]
}

#[test]
fn synthetic_records_validate_and_respect_pitch_bounds() {
    let mut checked = 0;
    for cfg in configs() {
        let inv = Inventory::new(&cfg);
        for i in 0..3400 {
            let r = generate_utterance(&cfg, &inv, "train", i).unwrap();
            assert!(r.validate().is_empty(), "{}: {:?}", r.id, r.validate());
            let spk = i / cfg.utterances_per_speaker;
            let profile = sample_speaker(
                &cfg,
                &speaker_id("train", spk),
                speaker_seed(&cfg, "train", spk),
            );
            assert_eq!(r.speaker_id, speaker_id("train", spk));
            let bound = cfg.f0_bound_semitones(profile.f0_range_semitones);
            for &f in r.f0_hz.iter().filter(|&&f| f > 0.0) {
                let st = 12.0 * (f64::from(f) / profile.base_f0_hz).log2();
                assert!(
                    st.abs() <= bound + 1e-4,
                    "{}: {st} semitones exceeds {bound}",
                    r.id
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 10_000);
}

#[test]
fn record_encoding_roundtrips_bit_exactly() {
    let cfg = configs().remove(1);
    let inv = Inventory::new(&cfg);
    for i in 0..200 {
        let r = generate_utterance(&cfg, &inv, "dev", i).unwrap();
        let bytes = encode_record(&r).unwrap();
        let back = decode_record(&bytes).unwrap();
        assert_eq!(back, r);
        assert_eq!(encode_record(&back).unwrap(), bytes);
    }
}
