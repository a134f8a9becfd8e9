use promode_tensor::{Tape, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..7).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-50.0f64..50.0, r * c),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, c, data) in matrix()) {
        let mut t = Tape::<f64>::new();
        let x = t.input(Tensor::new(vec![r, c], data).unwrap());
        let y = t.softmax(x);
        for row in t.value(y).chunks(c) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant((r, c, data) in matrix(), shift in -100.0f64..100.0) {
        let mut t = Tape::<f64>::new();
        let x = t.input(Tensor::new(vec![r, c], data.clone()).unwrap());
        let xs = t.input(Tensor::new(vec![r, c], data.iter().map(|v| v + shift).collect()).unwrap());
        let (a, b) = (t.softmax(x), t.softmax(xs));
        for (p, q) in t.value(a).iter().zip(t.value(b)) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_rows_are_centred((r, c, data) in matrix()) {
        let mut t = Tape::<f64>::new();
        let x = t.input(Tensor::new(vec![r, c], data).unwrap());
        let y = t.layer_norm(x);
        for row in t.value(y).chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn matmul_matches_naive_product(
        (m, k, a) in matrix(),
        n in 1usize..5,
        seed in any::<u64>(),
    ) {
        let b: Vec<f64> = (0..k * n).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64) - 8.0).collect();
        let mut t = Tape::<f64>::new();
        let x = t.input(Tensor::new(vec![m, k], a.clone()).unwrap());
        let w = t.input(Tensor::new(vec![k, n], b.clone()).unwrap());
        let y = t.matmul(x, w).unwrap();
        for i in 0..m {
            for j in 0..n {
                let naive: f64 = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
                prop_assert!((t.value(y)[i * n + j] - naive).abs() < 1e-9 * (1.0 + naive.abs()));
            }
        }
    }
}
