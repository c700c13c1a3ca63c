use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtsdoa_autograd::{Conv1d, Conv2d, ConvT2d, Error, Graph, ParamStore, Tensor};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn identity_and_tanh_of_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.identity(x);
    assert_eq!(g.value(y), g.value(x));
    let z = g.input(Tensor::zeros([3, 4]));
    let t = g.tanh(z);
    assert!(g.value(t).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_of_ones_sums_kernel_window() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::ones([1, 1, 4, 4]));
    let w = g.input(Tensor::ones([1, 1, 3, 3]));
    let spec = Conv2d { stride: (1, 1), pad_t: (1, 1), pad_f: (1, 1) };
    let y = g.conv2d(x, w, None, spec).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 1, 4, 4]);
    assert_eq!(out.at(&[0, 0, 1, 1]), 9.0);
    assert_eq!(out.at(&[0, 0, 2, 2]), 9.0);
    assert_eq!(out.at(&[0, 0, 0, 0]), 4.0);
    assert_eq!(out.at(&[0, 0, 0, 1]), 6.0);
}

fn conv2d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, spec: Conv2d) -> Tensor<f64> {
    let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + spec.pad_t.0 + spec.pad_t.1 - kh) / spec.stride.0 + 1;
    let ow = (wd + spec.pad_f.0 + spec.pad_f.1 - kw) / spec.stride.1 + 1;
    let mut out = Tensor::zeros([bn, co, oh, ow]);
    for n in 0..bn {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[o];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * spec.stride.0 + i) as isize - spec.pad_t.0 as isize;
                                let ix = (xo * spec.stride.1 + j) as isize - spec.pad_f.0 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at(&[o, ci, i, j]) * x.at(&[n, ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    let idx = out.offset(&[n, o, y, xo]);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let specs = [
        Conv2d { stride: (1, 2), pad_t: (1, 0), pad_f: (1, 1) },
        Conv2d { stride: (1, 2), pad_t: (1, 0), pad_f: (0, 0) },
        Conv2d { stride: (2, 3), pad_t: (0, 2), pad_f: (2, 0) },
    ];
    for spec in specs {
        let x = rand_t(&mut rng, &[2, 3, 7, 11]);
        let w = rand_t(&mut rng, &[4, 3, 2, 3]);
        let b = rand_t(&mut rng, &[4]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), spec).unwrap();
        let want = conv2d_oracle(&x, &w, &b, spec);
        assert_eq!(g.value(y).shape(), want.shape());
        for (a, e) in g.value(y).data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_transpose_matches_scatter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_t(&mut rng, &[1, 3, 4, 5]);
    let w = rand_t(&mut rng, &[3, 2, 2, 3]);
    let spec = ConvT2d { stride: (1, 2), out_pad: (0, 1) };
    let mut g = Graph::new();
    let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
    let y = g.conv_transpose2d(xv, wv, None, spec).unwrap();
    let (oh, ow) = (4 + 1, (5 - 1) * 2 + 3 + 1);
    assert_eq!(g.value(y).shape(), &[1, 2, oh, ow]);
    let mut want = Tensor::<f64>::zeros([1, 2, oh, ow]);
    for ci in 0..3 {
        for t in 0..4 {
            for f in 0..5 {
                for co in 0..2 {
                    for i in 0..2 {
                        for j in 0..3 {
                            let idx = want.offset(&[0, co, t + i, f * 2 + j]);
                            want.data_mut()[idx] += x.at(&[0, ci, t, f]) * w.at(&[ci, co, i, j]);
                        }
                    }
                }
            }
        }
    }
    for (a, e) in g.value(y).data().iter().zip(want.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn depthwise_conv1d_equals_per_channel_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, c, l, k) = (3, 4, 10, 5);
    let x = rand_t(&mut rng, &[n, c, l]);
    let w = rand_t(&mut rng, &[c, 1, k]);
    let b = rand_t(&mut rng, &[c]);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
    let y = g.conv1d(xv, wv, Some(bv), Conv1d { pad: (2, 2), groups: c }).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[n, c, l]);
    for ni in 0..n {
        for ch in 0..c {
            // independent single-channel convolution
            let mut sub = Graph::new();
            let xs = sub.input(Tensor::from_fn([1, 1, l], |i| x.at(&[ni, ch, i])));
            let ws = sub.input(Tensor::from_fn([1, 1, k], |j| w.at(&[ch, 0, j])));
            let bs = sub.input(Tensor::new([1], vec![b.data()[ch]]).unwrap());
            let ys = sub.conv1d(xs, ws, Some(bs), Conv1d { pad: (2, 2), groups: 1 }).unwrap();
            for t in 0..l {
                let mut acc = b.data()[ch];
                for j in 0..k {
                    let src = t as isize + j as isize - 2;
                    if (0..l as isize).contains(&src) {
                        acc += w.at(&[ch, 0, j]) * x.at(&[ni, ch, src as usize]);
                    }
                }
                assert!((out.at(&[ni, ch, t]) - acc).abs() < 1e-12);
                assert_eq!(out.at(&[ni, ch, t]), sub.value(ys).data()[t]);
            }
        }
    }
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros([2, 3]));
    let b = g.input(Tensor::zeros([3, 2]));
    let err = g.add(a, b).unwrap_err();
    assert_eq!(
        err,
        Error::ShapeMismatch { op: "add", lhs: vec![2, 3], rhs: vec![3, 2] }
    );
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"));

    let x = g.input(Tensor::zeros([1, 3, 4, 4]));
    let w = g.input(Tensor::zeros([2, 5, 2, 3]));
    let err = g.conv2d(x, w, None, Conv2d { stride: (1, 1), pad_t: (0, 0), pad_f: (0, 0) }).unwrap_err();
    assert!(err.to_string().starts_with("conv2d"));
}

#[test]
fn backward_of_sum_and_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xt = rand_t(&mut rng, &[3, 5]);
    let mut g = Graph::new();
    let x = g.param("x", xt.clone());
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.param("x", xt.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    for (gv, xv) in grads.get(x).unwrap().data().iter().zip(xt.data()) {
        assert_eq!(*gv, 2.0 * xv);
    }
}

#[test]
fn fan_out_gradients_accumulate() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", Tensor::new([2], vec![1.5, -0.5]).unwrap());
    let a = g.scale(x, 2.0);
    let b = g.scale(x, 3.0);
    let c = g.add(a, b).unwrap();
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[5.0, 5.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x", Tensor::zeros([2, 2]));
    let y = g.tanh(x);
    assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn forward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.input(rand_t(&mut rng, &[1, 2, 6, 9]));
        let w = g.input(rand_t(&mut rng, &[3, 2, 2, 3]));
        let y = g.conv2d(x, w, None, Conv2d { stride: (1, 2), pad_t: (1, 0), pad_f: (1, 1) }).unwrap();
        let q = g.reshape(y, &[1, 6, 15]).unwrap();
        let a = g.attention(q, q, q, 3, false).unwrap();
        g.value(a).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn softmax_rows_are_normalized_and_attention_over_one_frame_is_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let x = g.input(rand_t(&mut rng, &[5, 37]).map(|v| v * 10.0));
    let p = g.softmax(x).unwrap();
    for row in g.value(p).data().chunks(37) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let q = g.input(rand_t(&mut rng, &[4, 1, 8]));
    let k = g.input(rand_t(&mut rng, &[4, 1, 8]));
    let v = g.input(rand_t(&mut rng, &[4, 1, 8]));
    let o = g.attention(q, k, v, 2, false).unwrap();
    assert_eq!(g.value(o), g.value(v));
}

#[test]
fn causal_attention_ignores_future_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = rand_t(&mut rng, &[1, 6, 4]);
    let k = rand_t(&mut rng, &[1, 6, 4]);
    let v = rand_t(&mut rng, &[1, 6, 4]);
    let run = |k: Tensor<f64>, v: Tensor<f64>| {
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.input(q.clone()), g.input(k), g.input(v));
        let o = g.attention(qv, kv, vv, 2, true).unwrap();
        g.value(o).clone()
    };
    let base = run(k.clone(), v.clone());
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    for j in 0..4 {
        let idx = k2.offset(&[0, 5, j]);
        k2.data_mut()[idx] += 3.0;
        v2.data_mut()[idx] -= 2.0;
    }
    let pert = run(k2, v2);
    for t in 0..5 {
        for j in 0..4 {
            assert_eq!(base.at(&[0, t, j]), pert.at(&[0, t, j]));
        }
    }
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_classes() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([4, 37]));
    let l = g.cross_entropy(x, &[0, 5, 36, 12]).unwrap();
    assert!((g.value(l).item() - 37f64.ln()).abs() < 1e-12);
    assert!(g.cross_entropy(x, &[0, 5, 37, 1]).is_err());
}

#[test]
fn checkpoint_rejects_corruption() {
    let mut store = ParamStore::<f32>::new();
    store.insert("a", Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let mut bytes = Vec::new();
    store.write_to(&mut bytes).unwrap();
    assert!(ParamStore::<f32>::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ParamStore::<f32>::read_from(&mut &bad[..]).is_err());
    // f32 checkpoints load into f64 stores
    let wide = ParamStore::<f64>::read_from(&mut &bytes[..]).unwrap();
    assert_eq!(wide.get("a").unwrap().data(), &[1.0, 2.0]);
}
