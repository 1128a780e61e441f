use autodiff::{
    grad_check, CrossAttention, DecoderStack, Graph, LayerNorm, Linear, NetError, ParamStore, Perceptron, Scalar,
    Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-1.0..1.0)))
}

/// Scalar read-out `sum(y * c)` with fixed random weights `c`.
fn readout<T: Scalar>(g: &mut Graph<T>, y: autodiff::Var, seed: u64) -> autodiff::Result<autodiff::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor::<T>(&mut rng, g.shape(y));
    g.dot_const(y, w)
}

#[test]
fn quadratic_gradient_is_exact_at_f64() {
    let mut store = ParamStore::<f64>::new();
    store
        .insert("w", Tensor::new(&[2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap(), true)
        .unwrap();
    let report = grad_check(&mut store, 1e-5, |g, s| {
        let w = g.param(s, s.id("w")?)?;
        let sq = g.mul(w, w)?;
        g.sum_all(sq)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-7, "{report:?}");
}

#[test]
fn linear_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 4, 2, true, &mut rng).unwrap();
    let x = rand_tensor::<f64>(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let y = lin.forward(&mut g, &store, xv).unwrap();

    let w = store.value(lin.weight).data();
    let b = store.value(lin.bias.unwrap()).data();
    for i in 0..3 {
        for j in 0..2 {
            let mut want = b[j];
            for p in 0..4 {
                want += x.data()[i * 4 + p] * w[p * 2 + j];
            }
            assert!((g.value(y).data()[i * 2 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_identity_and_zero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 3, 3, true, &mut rng).unwrap();
    store
        .set(
            "lin.weight",
            Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }),
        )
        .unwrap();
    store.set("lin.bias", Tensor::zeros(&[3])).unwrap();
    let x = rand_tensor::<f64>(&mut rng, &[2, 3]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let y = lin.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y), &x);

    store.set("lin.weight", Tensor::zeros(&[3, 3])).unwrap();
    store
        .set("lin.bias", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let y = lin.forward(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[3, 4])).unwrap();
    let b = g.constant(Tensor::zeros(&[5, 2])).unwrap();
    match g.matmul(a, b) {
        Err(NetError::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![3, 4]);
            assert_eq!(rhs, vec![5, 2]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn linear_gradient_at_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::new(&mut store, "lin", 6, 4, true, &mut rng).unwrap();
    let x = rand_tensor::<f32>(&mut rng, &[5, 6]);
    let report = grad_check(&mut store, 1e-2, |g, s| {
        let xv = g.constant(x.clone())?;
        let y = lin.forward(g, s, xv)?;
        let sq = g.mul(y, y)?;
        g.sum_all(sq)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-3, "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new(&[1, 4], vec![0.0; 4]).unwrap()).unwrap();
    let p = g.softmax_rows(z).unwrap();
    assert_eq!(g.value(p).data(), &[0.25; 4]);

    let z = g.constant(Tensor::new(&[1, 2], vec![2f64.ln(), 0.0]).unwrap()).unwrap();
    let p = g.softmax_rows(z).unwrap();
    assert!((g.value(p).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((g.value(p).data()[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_rows_sum_to_one_at_f32_for_long_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &len in &[1usize, 2, 17, 1024, 4096, 4097] {
        let z = Tensor::<f32>::from_fn(&[3, len], |_| rng.gen_range(-8.0..8.0));
        let mut g = Graph::new();
        let zv = g.constant(z).unwrap();
        let p = g.softmax_rows(zv).unwrap();
        for r in 0..3 {
            let s: f64 = g.value(p).row(r).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6, "len {len}: {s}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 1..40), c in -50.0f64..50.0) {
        let n = z.len();
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(&[1, n], z.clone()).unwrap()).unwrap();
        let b = g.constant(Tensor::new(&[1, n], z.iter().map(|v| v + c).collect()).unwrap()).unwrap();
        let pa = g.softmax_rows(a).unwrap();
        let pb = g.softmax_rows(b).unwrap();
        for (x, y) in g.value(pa).data().iter().zip(g.value(pb).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn primitive_ops_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    store.insert("a", rand_tensor(&mut rng, &[4, 6]), true).unwrap();
    store.insert("b", rand_tensor(&mut rng, &[5, 6]), true).unwrap();
    store.insert("r", rand_tensor(&mut rng, &[6]), true).unwrap();
    let report = grad_check(&mut store, 1e-5, |g, s| {
        let a = g.param(s, s.id("a")?)?;
        let b = g.param(s, s.id("b")?)?;
        let r = g.param(s, s.id("r")?)?;
        let ab = g.matmul_nt(a, b)?; // [4,5]
        let sm = g.softmax_rows(ab)?;
        let ls = g.log_softmax_rows(ab)?;
        let mix = g.mul(sm, ls)?;
        let ar = g.add_row(a, r)?;
        let ge = g.gelu(ar)?;
        let sl = g.slice_cols(ge, 1, 3)?;
        let sl2 = g.slice_cols(ge, 0, 3)?;
        let cc = g.concat_cols(&[sl, sl2])?; // [4,6]
        let cr = g.concat_rows(&[cc, b])?; // [9,6]
        let rs = g.reshape(cr, &[54])?;
        let rs = g.scale(rs, 0.7)?;
        let rs = g.add_const(rs, 0.1)?;
        let sq = g.mul(rs, rs)?;
        let t1 = g.sum_all(sq)?;
        let t2 = readout(g, mix, 11)?;
        g.add(t1, t2)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-5, "{:?}", report.worst());
}

#[test]
fn layer_types_pass_gradient_check_at_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor::<f64>(&mut rng, &[5, 8]);
    let kv = rand_tensor::<f64>(&mut rng, &[3, 8]);

    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, "lin", 8, 8, true, &mut rng).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 8).unwrap();
    let mlp = Perceptron::new(&mut store, "mlp", (8, 12, 8), true, &mut rng).unwrap();
    let attn = CrossAttention::new(&mut store, "attn", 8, 2, &mut rng).unwrap();
    let dec = DecoderStack::new(&mut store, "dec", 2, 8, 2, 16, &mut rng).unwrap();
    // Non-trivial LayerNorm affine parameters.
    store.set("ln.gain", rand_tensor(&mut rng, &[8])).unwrap();
    store.set("ln.bias", rand_tensor(&mut rng, &[8])).unwrap();

    let report = grad_check(&mut store, 1e-5, |g, s| {
        let xv = g.constant(x.clone())?;
        let kvv = g.constant(kv.clone())?;
        let a = lin.forward(g, s, xv)?;
        let a = ln.forward(g, s, a)?;
        let a = mlp.forward(g, s, a)?;
        let a = attn.forward(g, s, a, kvv)?;
        let a = dec.forward(g, s, a, kvv)?;
        readout(g, a, 12)
    })
    .unwrap();
    for e in &report.entries {
        assert!(e.rel_error < 1e-5, "{e:?}");
        assert!(e.ad_norm > 1e-6, "vanishing gradient for {}", e.name);
    }
}

/// Explicit per-head computation with plain loops.
fn attention_oracle(
    store: &ParamStore<f64>,
    attn: &CrossAttention,
    q_in: &Tensor<f64>,
    kv_in: &Tensor<f64>,
) -> Vec<f64> {
    let d = attn.dim;
    let proj = |x: &Tensor<f64>, lin: &Linear| -> Vec<Vec<f64>> {
        let w = store.value(lin.weight).data();
        (0..x.rows())
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let mut s = lin.bias.map_or(0.0, |b| store.value(b).data()[j]);
                        for p in 0..d {
                            s += x.data()[i * d + p] * w[p * d + j];
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    };
    let q = proj(q_in, &attn.q);
    let k = proj(kv_in, &attn.k);
    let v = proj(kv_in, &attn.v);
    let dh = d / attn.heads;
    let mut cat = vec![vec![0.0; d]; q.len()];
    for h in 0..attn.heads {
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| (0..dh).map(|c| qi[h * dh + c] * kj[h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                cat[i][h * dh + c] = e.iter().zip(&v).map(|(w, vj)| w / z * vj[h * dh + c]).sum();
            }
        }
    }
    let cat = Tensor::new(&[q.len(), d], cat.concat()).unwrap();
    proj(&cat, &attn.o).concat()
}

#[test]
fn two_head_attention_matches_per_head_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let attn = CrossAttention::new(&mut store, "attn", 6, 2, &mut rng).unwrap();
    let q = rand_tensor::<f64>(&mut rng, &[4, 6]);
    let kv = rand_tensor::<f64>(&mut rng, &[3, 6]);
    let mut g = Graph::new();
    let qv = g.constant(q.clone()).unwrap();
    let kvv = g.constant(kv.clone()).unwrap();
    let y = attn.forward(&mut g, &store, qv, kvv).unwrap();
    let want = attention_oracle(&store, &attn, &q, &kv);
    for (a, b) in g.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_and_duplicated_kv_token_give_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let attn = CrossAttention::new(&mut store, "attn", 4, 2, &mut rng).unwrap();
    let kv1 = rand_tensor::<f64>(&mut rng, &[1, 4]);
    let kv2 = Tensor::new(&[2, 4], [kv1.data(), kv1.data()].concat()).unwrap();
    let q = rand_tensor::<f64>(&mut rng, &[3, 4]);

    let run = |kv: &Tensor<f64>| {
        let mut g = Graph::new();
        let qv = g.constant(q.clone()).unwrap();
        let kvv = g.constant(kv.clone()).unwrap();
        let y = attn.forward(&mut g, &store, qv, kvv).unwrap();
        g.value(y).clone()
    };
    let y1 = run(&kv1);
    let y2 = run(&kv2);
    // Every query row receives o(v(kv)).
    for r in 1..3 {
        for c in 0..4 {
            assert!((y1.row(r)[c] - y1.row(0)[c]).abs() < 1e-12);
        }
    }
    for (a, b) in y1.data().iter().zip(y2.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_rejects_width_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let attn = CrossAttention::new(&mut store, "attn", 4, 2, &mut rng).unwrap();
    let mut g = Graph::new();
    let q = g.constant(Tensor::zeros(&[2, 4])).unwrap();
    let kv = g.constant(Tensor::zeros(&[2, 5])).unwrap();
    assert!(matches!(
        attn.forward(&mut g, &store, q, kv),
        Err(NetError::Shape { .. })
    ));
    assert!(CrossAttention::new(&mut store, "bad", 6, 4, &mut rng).is_err());
}

#[test]
fn decoder_depth_zero_is_identity_and_depth_one_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = rand_tensor::<f64>(&mut rng, &[5, 8]);
    let kv = rand_tensor::<f64>(&mut rng, &[2, 8]);

    let mut store = ParamStore::<f64>::new();
    let empty = DecoderStack::new(&mut store, "none", 0, 8, 2, 16, &mut rng).unwrap();
    let one = DecoderStack::new(&mut store, "one", 1, 8, 2, 16, &mut rng).unwrap();
    let deep = DecoderStack::new(&mut store, "deep", 3, 8, 2, 16, &mut rng).unwrap();

    let mut g = Graph::new();
    let qv = g.constant(q.clone()).unwrap();
    let kvv = g.constant(kv).unwrap();
    let y0 = empty.forward(&mut g, &store, qv, kvv).unwrap();
    assert_eq!(g.value(y0), &q);

    let y1 = one.forward(&mut g, &store, qv, kvv).unwrap();
    let l = &one.layers[0];
    let a = l.attn.forward(&mut g, &store, qv, kvv).unwrap();
    let x = g.add(qv, a).unwrap();
    let x = l.norm1.forward(&mut g, &store, x).unwrap();
    let f = l.ff.forward(&mut g, &store, x).unwrap();
    let x = g.add(x, f).unwrap();
    let manual = l.norm2.forward(&mut g, &store, x).unwrap();
    assert_eq!(g.value(y1), g.value(manual));

    let y3 = deep.forward(&mut g, &store, qv, kvv).unwrap();
    assert_eq!(g.shape(y3), &[5, 8]);
}

#[test]
fn forward_and_training_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::<f32>::new();
        let dec = DecoderStack::new(&mut store, "dec", 2, 8, 2, 16, &mut rng).unwrap();
        let q = rand_tensor::<f32>(&mut rng, &[7, 8]);
        let kv = rand_tensor::<f32>(&mut rng, &[3, 8]);
        let opt = autodiff::Adam {
            lr: 1e-2,
            ..Default::default()
        };
        let mut losses = Vec::new();
        for _ in 0..5 {
            let mut g = Graph::new();
            let qv = g.constant(q.clone()).unwrap();
            let kvv = g.constant(kv.clone()).unwrap();
            let y = dec.forward(&mut g, &store, qv, kvv).unwrap();
            let l = readout(&mut g, y, 1).unwrap();
            losses.push(g.value(l).item().to_bits());
            let grads = g.backward(l).unwrap();
            opt.step(&mut store, &grads.into_vec()).unwrap();
        }
        let params: Vec<u32> = store
            .entries()
            .iter()
            .flat_map(|e| e.value.data().iter().map(|v| v.to_bits()))
            .collect();
        (losses, params)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_values_are_reported() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::scalar(f32::MAX)).unwrap();
    let err = g.scale(a, 10.0).unwrap_err();
    assert_eq!(err, NetError::NonFinite { op: "scale" });
}

#[test]
fn gradients_accumulate_over_shared_nodes() {
    // y = sum((x W) + (x W)) => dW = 2 x^T 1
    let mut store = ParamStore::<f64>::new();
    let w = store
        .insert("w", Tensor::new(&[2, 1], vec![0.5, -0.5]).unwrap(), true)
        .unwrap();
    let mut g = Graph::new();
    let x = g
        .constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
        .unwrap();
    let wv = g.param(&store, w).unwrap();
    let h = g.matmul(x, wv).unwrap();
    let h2 = g.add(h, h).unwrap();
    let s = g.sum_all(h2).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[18.0, 24.0]);
}
