use promode_tensor::{
    grad_check, GradCheckOptions, ParamStore, Result, Tape, Tensor, TensorError, Var, MASKED_LOGIT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Contracts an op output with fixed random weights so every output entry
/// contributes to the checked scalar.
fn contract(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..t.value(y).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    t.weighted_sum(y, &w)
}

fn check(name: &str, shape: &[usize], seed: u64, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random(&mut rng, shape);
    let r = grad_check(&p, GradCheckOptions::default(), |t, x| {
        let y = f(t, x)?;
        contract(t, y, seed ^ 0x5eed)
    })
    .unwrap_or_else(|e| panic!("{name} {shape:?}: {e}"));
    assert!(r.max_rel_error < TOL, "{name} {shape:?}: {r:?}");
}

const SHAPES: [[usize; 2]; 3] = [[3, 4], [5, 2], [2, 6]];

fn aux(t: &mut Tape<f64>, seed: u64, shape: &[usize]) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = random(&mut rng, shape);
    t.constant(v)
}

#[test]
fn elementwise_ops_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 10 + i as u64;
        check("add", s, seed, |t, x| {
            let c = aux(t, 1, s);
            t.add(x, c)
        });
        check("add_row", s, seed, |t, x| {
            let c = aux(t, 1, &[s[0], s[1]]);
            let r = t.mean_rows(x);
            t.add(c, r)
        });
        check("sub", s, seed, |t, x| {
            let c = aux(t, 2, s);
            t.sub(c, x)
        });
        check("mul", s, seed, |t, x| {
            let c = aux(t, 3, s);
            let y = t.mul(x, c)?;
            t.mul(y, x)
        });
        check("mul_row", s, seed, |t, x| {
            let c = aux(t, 3, &[1, s[1]]);
            let y = t.mul(x, c)?;
            let r = t.mean_rows(x);
            t.mul(y, r)
        });
        check("scale_add_const", s, seed, |t, x| {
            let y = t.scale(x, -1.7);
            Ok(t.add_const(y, 0.3))
        });
        check("gelu", s, seed, |t, x| Ok(t.gelu(x)));
        check("sigmoid", s, seed, |t, x| Ok(t.sigmoid(x)));
        check("relu", s, seed, |t, x| Ok(t.relu(x)));
        check("abs", s, seed, |t, x| Ok(t.abs(x)));
        check("square", s, seed, |t, x| Ok(t.square(x)));
        check("bce", s, seed, |t, x| {
            let y = t.scale(x, 3.0);
            let targets: Vec<f64> = (0..s[0] * s[1]).map(|i| (i % 2) as f64).collect();
            t.bce_with_logits(y, &targets)
        });
        check("sum_mean", s, seed, |t, x| {
            let a = t.sum(x);
            let b = t.mean(x);
            let sq = t.square(a);
            t.add(sq, b)
        });
    }
}

#[test]
fn matrix_ops_gradients() {
    for (i, s) in SHAPES.iter().enumerate() {
        let seed = 20 + i as u64;
        check("matmul_left", s, seed, |t, x| {
            let w = aux(t, 4, &[s[1], 3]);
            t.matmul(x, w)
        });
        check("matmul_right", s, seed, |t, x| {
            let a = aux(t, 5, &[2, s[0]]);
            t.matmul(a, x)
        });
        check("linear", s, seed, |t, x| {
            let w = aux(t, 6, &[s[1], 3]);
            let b = aux(t, 7, &[3]);
            let xw = t.linear(x, w, Some(b))?;
            // weight path
            let inp = aux(t, 8, &[2, s[0]]);
            let y = t.linear(inp, x, None)?;
            let a = t.sum(xw);
            let c = t.sum(y);
            let sa = t.square(a);
            t.add(sa, c)
        });
        check("linear_bias", &[s[1]], seed, |t, b| {
            let x = aux(t, 9, s);
            let w = aux(t, 6, &[s[1], s[1]]);
            t.linear(x, w, Some(b))
        });
        check("concat_slice", s, seed, |t, x| {
            let c = aux(t, 10, &[s[0], 2]);
            let y = t.concat_cols(&[c, x, x])?;
            let z = t.slice_cols(y, 1, s[1] + 1)?;
            Ok(t.square(z))
        });
        check("softmax", s, seed, |t, x| Ok(t.softmax(x)));
        check("layer_norm", s, seed, |t, x| Ok(t.layer_norm(x)));
        check("mean_broadcast", s, seed, |t, x| {
            let m = t.mean_rows(x);
            let b = t.broadcast_rows(m, 4)?;
            Ok(t.square(b))
        });
    }
}

#[test]
fn sequence_ops_gradients() {
    for (i, s) in [[6usize, 4], [9, 2], [4, 6]].iter().enumerate() {
        let seed = 30 + i as u64;
        let (rows, cols) = (s[0], s[1]);
        check("dwconv_x", s, seed, |t, x| {
            let w = aux(t, 11, &[3, cols]);
            let b = aux(t, 12, &[cols]);
            t.depthwise_conv1d(x, w, b)
        });
        check("dwconv_w", &[5, cols], seed, |t, w| {
            let x = aux(t, 13, s);
            let b = aux(t, 12, &[cols]);
            let y = t.depthwise_conv1d(x, w, b)?;
            Ok(t.square(y))
        });
        check("grn_x", s, seed, |t, x| {
            let g = aux(t, 14, &[cols]);
            let b = aux(t, 15, &[cols]);
            t.grn(x, g, b)
        });
        check("grn_affine", &[2, cols], seed, |t, gb| {
            let x = aux(t, 16, s);
            let g = t.slice_cols(gb, 0, cols)?;
            let g = t.mean_rows(g);
            let both = t.broadcast_rows(gb, 1);
            let _ = both;
            let b = t.gather_rows(gb, &[1])?;
            t.grn(x, g, b)
        });
        check("rotary", s, seed, |t, x| t.rotary(x, 2, 3));
        check("gather", s, seed, |t, x| {
            t.gather_rows(x, &[0, rows - 1, 0, 1])
        });
        check("scatter", s, seed, |t, x| {
            t.scatter_rows(
                x,
                &(0..rows).rev().map(|r| r + 1).collect::<Vec<_>>(),
                rows + 2,
            )
        });
        check("select", s, seed, |t, x| {
            let mask: Vec<bool> = (0..rows).map(|r| r % 2 == 0).collect();
            t.select_rows(x, &mask)
        });
        check("mask_rows", s, seed, |t, x| {
            let mask: Vec<bool> = (0..rows).map(|r| r % 3 == 1).collect();
            let fill = t.mean_rows(x);
            let c = aux(t, 17, s);
            t.mask_rows(c, fill, &mask).and_then(|y| {
                let z = t.mask_rows(x, fill, &mask)?;
                t.add(y, z)
            })
        });
    }
}

#[test]
fn attention_gradients() {
    // q, k, v packed into one input so one check covers all three paths.
    for (i, &(tq, tk, heads, dk)) in [(3usize, 3usize, 2usize, 2usize), (2, 4, 1, 3), (4, 2, 2, 1)]
        .iter()
        .enumerate()
    {
        let width = heads * dk;
        let rows = tq + 2 * tk;
        check("attention", &[rows, width], 40 + i as u64, |t, x| {
            let q = t.gather_rows(x, &(0..tq).collect::<Vec<_>>())?;
            let k = t.gather_rows(x, &(tq..tq + tk).collect::<Vec<_>>())?;
            let v = t.gather_rows(x, &(tq + tk..rows).collect::<Vec<_>>())?;
            let q = t.scale(q, 2.0);
            t.attention(q, k, v, heads, None)
        });
    }
}

#[test]
fn attention_bias_excludes_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut t = Tape::<f64>::new();
    let q = t.constant(random(&mut rng, &[2, 4]));
    let k = t.constant(random(&mut rng, &[3, 4]));
    let v = t.constant(random(&mut rng, &[3, 4]));
    let bias = vec![0.0, MASKED_LOGIT, MASKED_LOGIT, 0.0, 0.0, MASKED_LOGIT];
    let y = t.attention(q, k, v, 2, Some(&bias)).unwrap();
    // Row 0 sees only key 0, so it copies value row 0.
    let out = t.value(y)[..4].to_vec();
    let v0 = t.value(v)[..4].to_vec();
    for (a, b) in out.iter().zip(&v0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::<f64>::new();
    let eye = t.constant(
        Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap(),
    );
    let x = random(&mut rng, &[3, 5]);
    let xv = t.constant(x.clone());
    let y = t.matmul(eye, xv).unwrap();
    assert_eq!(t.value(y), x.data());
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap());
    let y = t.softmax(x);
    assert_eq!(t.value(y), &[0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn softmax_rows_sum_to_one_and_layer_norm_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = Tape::<f32>::new();
    let data: Vec<f32> = (0..64).map(|_| rng.random_range(-20.0..20.0)).collect();
    let x = t.constant(Tensor::new(vec![8, 8], data).unwrap());
    let s = t.softmax(x);
    for row in t.value(s).chunks(8) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
    let mut t = Tape::<f64>::new();
    let data: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
    let x = t.constant(Tensor::new(vec![8, 8], data).unwrap());
    let n = t.layer_norm(x);
    for row in t.value(n).chunks(8) {
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }
}

/// ConvNeXt-V2 GRN written as plain loops over a `[batch][time][channel]` array.
fn grn_oracle(x: &[Vec<Vec<f64>>], gamma: &[f64], beta: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let c = gamma.len();
    x.iter()
        .map(|sample| {
            let mut gx = vec![0.0; c];
            for j in 0..c {
                let mut s = 0.0;
                for frame in sample {
                    s += frame[j] * frame[j];
                }
                gx[j] = s.sqrt();
            }
            let mean: f64 = gx.iter().sum::<f64>() / c as f64;
            let nx: Vec<f64> = gx.iter().map(|g| g / (mean + 1e-6)).collect();
            sample
                .iter()
                .map(|frame| {
                    (0..c)
                        .map(|j| gamma[j] * (frame[j] * nx[j]) + beta[j] + frame[j])
                        .collect()
                })
                .collect()
        })
        .collect()
}

#[test]
fn grn_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| {
            (0..4)
                .map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    let gamma: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let beta: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let want = grn_oracle(&x, &gamma, &beta);
    for (b, sample) in x.iter().enumerate() {
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::from_rows(sample).unwrap());
        let g = t.constant(Tensor::new(vec![8], gamma.clone()).unwrap());
        let be = t.constant(Tensor::new(vec![8], beta.clone()).unwrap());
        let y = t.grn(xv, g, be).unwrap();
        for (got, w) in t.value(y).iter().zip(want[b].iter().flatten()) {
            assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        }
    }
}

#[test]
fn linear_sum_gradient_is_constant() {
    let mut t = Tape::<f64>::new();
    let x = t.input(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap());
    let y = t.scale(x, 2.0);
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0; 6]);
}

#[test]
fn backward_rules() {
    let mut t = Tape::<f64>::new();
    let x = t.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let y = t.square(x);
    assert!(matches!(
        t.backward(y),
        Err(TensorError::NonScalarBackward(_))
    ));
    let mut t = Tape::<f64>::new();
    let x = t.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.backward(s), Err(TensorError::BackwardTwice));
    assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(vec![2, 3]));
    let b = t.constant(Tensor::zeros(vec![2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    assert!(
        err.to_string().contains("matmul") && err.to_string().contains("[2, 3]"),
        "{err}"
    );
    let c = t.constant(Tensor::zeros(vec![4]));
    assert!(t.add(a, c).unwrap_err().to_string().contains("add"));
    assert!(t
        .attention(a, b, b, 2, None)
        .unwrap_err()
        .to_string()
        .contains("attention"));
}

#[test]
fn forward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", random(&mut rng, &[6, 6]).cast()).unwrap();
        let x: Tensor<f32> = random(&mut rng, &[5, 6]).cast();
        let mut t = Tape::with_params(&store);
        let xv = t.constant(x);
        let wv = t.param(w);
        let h = t.linear(xv, wv, None).unwrap();
        let h = t.gelu(h);
        let a = t.attention(h, h, h, 3, None).unwrap();
        let n = t.layer_norm(a);
        t.value(n).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn parameter_gradients_reach_the_store() {
    let mut store = ParamStore::<f64>::new();
    let w = store
        .add("w", Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap())
        .unwrap();
    let unused = store.add("unused", Tensor::zeros(vec![3])).unwrap();
    let mut t = Tape::with_params(&store);
    let x = t.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
    let wv = t.param(w);
    let y = t.matmul(x, wv).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    let g = t.param_gradients();
    assert_eq!(g.get(w), &[3.0, 4.0]);
    assert_eq!(g.get(unused), &[0.0; 3]);
}
