use promode::masking::{sample_mask, FrameMask};
use proptest::prelude::*;

proptest! {
    #[test]
    fn masks_are_phoneme_aligned_and_near_target(
        durations in prop::collection::vec(1u32..20, 1..60),
        target in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let m = sample_mask(&durations, target, seed).unwrap();
        let total: u32 = durations.iter().sum();
        prop_assert_eq!(m.len(), total as usize);
        prop_assert!(m.is_phoneme_aligned(&durations));
        let max = *durations.iter().max().unwrap() as f64;
        prop_assert!((m.ratio_achieved - target).abs() <= max / total as f64 + 1e-12);
        prop_assert_eq!(m.masked_count() as f64 / total as f64, m.ratio_achieved);
        prop_assert_eq!(&m, &sample_mask(&durations, target, seed).unwrap());
    }

    #[test]
    fn suffix_masks_everything_after_the_split(durations in prop::collection::vec(1u32..10, 2..20), cut in 0usize..20) {
        let first = cut.min(durations.len());
        let m = FrameMask::suffix(&durations, first);
        let prefix: u32 = durations[..first].iter().sum();
        for (i, &f) in m.flags.iter().enumerate() {
            prop_assert_eq!(f, i >= prefix as usize);
        }
    }
}

#[test]
fn mean_ratio_at_default_target() {
    let durations: Vec<u32> = (0..50).map(|i| 3 + (i * 7 % 9)).collect();
    let n = 2000;
    let mean: f64 = (0..n)
        .map(|s| sample_mask(&durations, 0.6, s).unwrap().ratio_achieved)
        .sum::<f64>()
        / n as f64;
    assert!((0.57..=0.63).contains(&mean), "{mean}");
}
