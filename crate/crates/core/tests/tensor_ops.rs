use denoise_kd::tensor::conv::{conv_out_extent, conv_transpose_out_extent, ConvGeometry};
use denoise_kd::tensor::gradcheck::{check_gradients, GradCheckOptions};
use denoise_kd::tensor::{Tape, Tensor};
use denoise_kd::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Textbook nested-loop cross-correlation with explicit zero padding.
fn conv2d_oracle(
    x: &Tensor,
    k: &Tensor,
    b: &[f64],
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor {
    let (ci, h, w) = x.dims3().unwrap();
    let s = k.shape();
    let (co, kh, kw) = (s[0], s[2], s[3]);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let at = |c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
            0.0
        } else {
            x.data()[(c * h + y as usize) * w + xx as usize]
        }
    };
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b[o];
                for c in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * stride.0 + dy) as isize - pad.0 as isize;
                            let ix = (xx * stride.1 + dx) as isize - pad.1 as isize;
                            acc += k.data()[((o * ci + c) * kh + dy) * kw + dx] * at(c, iy, ix);
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Tensor::new(&[co, oh, ow], out).unwrap()
}

fn run_conv(x: &Tensor, k: &Tensor, b: &Tensor, geo: ConvGeometry) -> Tensor {
    let mut tape = Tape::new();
    let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(xv, kv, Some(bv), geo).unwrap();
    tape.value(y).clone()
}

fn run_conv_t(y: &Tensor, k: &Tensor, geo: ConvGeometry, out_pad: (usize, usize)) -> Tensor {
    let mut tape = Tape::new();
    let (yv, kv) = (tape.constant(y.clone()), tape.constant(k.clone()));
    let x = tape.conv2d_transpose(yv, kv, None, geo, out_pad).unwrap();
    tape.value(x).clone()
}

#[test]
fn elementwise_mul_and_add_identity() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let b = tape.constant(Tensor::from_vec(vec![4.0, 5.0, 6.0]));
    let p = tape.mul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[4.0, 10.0, 18.0]);
    let q = tape.add_scalar(a, 0.0);
    assert_eq!(tape.value(q), tape.value(a));
}

#[test]
fn elementwise_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    match tape.add(a, b) {
        Err(Error::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![3, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn division_by_zero_follows_ieee() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(vec![1.0, -1.0]));
    let b = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let q = tape.div(a, b).unwrap();
    assert_eq!(tape.value(q).data(), &[f64::INFINITY, f64::NEG_INFINITY]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[3, 4], &mut rng);
    // Strictly nonzero denominators.
    let b = random(&[3, 4], &mut rng).map(|v| if v >= 0.0 { v + 0.5 } else { v - 0.5 });
    let r = random(&[3, 4], &mut rng);
    let report = check_gradients("elementwise", &[a, b], GradCheckOptions::default(), |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let q = t.div(m, v[1])?;
        let q = t.div(q, v[1])?;
        let q = t.mul_scalar(q, 1.5);
        let q = t.add_scalar(q, 0.25);
        let rv = t.constant(r.clone());
        t.dot(q, rv)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn conv2d_local_sums() {
    let x = Tensor::new(&[1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    let b = Tensor::zeros(&[1]);
    let y = run_conv(&x, &k, &b, ConvGeometry::new((1, 1), (0, 0)));
    assert_eq!(y.shape(), &[1, 2, 2]);
    // 3x3 windows of 1..16 laid out row-major.
    assert_eq!(y.data(), &[54.0, 63.0, 90.0, 99.0]);
    assert_eq!(&y, &conv2d_oracle(&x, &k, &[0.0], (1, 1), (0, 0)));
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[1, 5, 7], &mut rng);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let y = run_conv(&x, &k, &Tensor::zeros(&[1]), ConvGeometry::new((1, 1), (1, 1)));
    assert_eq!(y, x);
}

#[test]
fn conv2d_full_scale_shape() {
    assert_eq!(conv_out_extent(126, 5, 1, 2).unwrap(), 126);
    assert_eq!(conv_out_extent(256, 5, 2, 2).unwrap(), 128);
    let x = Tensor::zeros(&[1, 126, 256]);
    let k = Tensor::zeros(&[1, 1, 5, 5]);
    let y = run_conv(&x, &k, &Tensor::zeros(&[1]), ConvGeometry::new((1, 2), (2, 2)));
    assert_eq!(y.shape(), &[1, 126, 128]);
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let k = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(matches!(
        tape.conv2d(x, k, None, ConvGeometry::new((1, 1), (1, 1))),
        Err(Error::KernelTooLarge { .. })
    ));
}

#[test]
fn conv2d_transpose_shape_and_negative_extent() {
    let y = run_conv_t(&Tensor::full(&[1, 2, 2], 1.0), &Tensor::full(&[1, 1, 2, 2], 1.0), ConvGeometry::new((2, 2), (0, 0)), (0, 0));
    assert_eq!(y.shape(), &[1, 4, 4]);
    assert!(y.data().iter().all(|&v| v == 1.0));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 1]));
    let k = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
    assert!(matches!(
        tape.conv2d_transpose(x, k, None, ConvGeometry::new((1, 1), (1, 1)), (0, 0)),
        Err(Error::NonPositiveExtent { .. })
    ));
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (stride, pad) in [((1, 1), (1, 1)), ((1, 2), (1, 1)), ((2, 2), (0, 1))] {
        let geo = ConvGeometry::new(stride, pad);
        let x = random(&[2, 6, 7], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let oh = conv_out_extent(6, 3, stride.0, pad.0).unwrap();
        let ow = conv_out_extent(7, 3, stride.1, pad.1).unwrap();
        let r = random(&[3, oh, ow], &mut rng);
        let report = check_gradients("conv2d", &[x, k, b], GradCheckOptions::default(), |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), geo)?;
            let rv = t.constant(r.clone());
            t.dot(y, rv)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");

        let y_in = random(&[3, oh, ow], &mut rng);
        let kt = random(&[3, 2, 3, 3], &mut rng);
        let bt = random(&[2], &mut rng);
        let out_pad = (
            6 - conv_transpose_out_extent(oh, 3, stride.0, pad.0, 0).unwrap(),
            7 - conv_transpose_out_extent(ow, 3, stride.1, pad.1, 0).unwrap(),
        );
        let r2 = random(&[2, 6, 7], &mut rng);
        let report = check_gradients("conv2d_transpose", &[y_in, kt, bt], GradCheckOptions::default(), |t, v| {
            let y = t.conv2d_transpose(v[0], v[1], Some(v[2]), geo, out_pad)?;
            let rv = t.constant(r2.clone());
            t.dot(y, rv)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn instance_norm_hand_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let g = tape.constant(Tensor::full(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.instance_norm(x, g, b, 1e-5).unwrap();
    // mean 2.5, population variance 1.25
    let s = (1.25f64 + 1e-5).sqrt();
    let want = [-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s];
    for (got, want) in tape.value(y).data().iter().zip(want) {
        assert!((got - want).abs() < 1e-12);
    }
    let c = tape.constant(Tensor::full(&[1, 3, 3], 7.0));
    let z = tape.instance_norm(c, g, b, 1e-5).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    let one = tape.constant(Tensor::zeros(&[1, 1, 1]));
    assert!(matches!(
        tape.instance_norm(one, g, b, 1e-5),
        Err(Error::DegenerateVariance { per_channel: 1 })
    ));
}

#[test]
fn instance_norm_and_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 3, 3], &mut rng);
    let g = random(&[2], &mut rng);
    let b = random(&[2], &mut rng);
    let r = random(&[2, 3, 3], &mut rng);
    let report = check_gradients("instance_norm", &[x.clone(), g, b], GradCheckOptions::default(), |t, v| {
        let y = t.instance_norm(v[0], v[1], v[2], 1e-5)?;
        let rv = t.constant(r.clone());
        t.dot(y, rv)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");

    let report = check_gradients("activations", &[x], GradCheckOptions::default(), |t, v| {
        let a = t.leaky_relu(v[0], 0.01);
        let s = t.sigmoid(a);
        let rv = t.constant(r.clone());
        t.dot(s, rv)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn activation_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let l = tape.leaky_relu(x, 0.01);
    assert_eq!(tape.value(l).data(), &[-0.01, 0.0, 2.0]);
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[1], 0.5);
    assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn reductions() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(vec![1.0, 0.0]));
    let b = tape.constant(Tensor::from_vec(vec![0.0, 1.0]));
    let d = tape.dot(a, b).unwrap();
    assert_eq!(tape.value(d).item(), 0.0);
    let v = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
    let n = tape.l2_norm(v);
    assert_eq!(tape.value(n).item(), 5.0);
    let z = tape.constant(Tensor::scalar(0.0));
    assert!(matches!(tape.log10(z), Err(Error::LogOfNonPositive(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = random(&[4, 5, 6], &mut rng);
    let oracle = {
        let mut s = 0.0;
        for v in r.data() {
            s += v;
        }
        s / 120.0
    };
    let rv = tape.constant(r);
    let m = tape.mean(rv);
    assert!((tape.value(m).item() - oracle).abs() <= 1e-12);
}

#[test]
fn reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random(&[6], &mut rng);
    let b = random(&[6], &mut rng);
    let report = check_gradients("reductions", &[a, b], GradCheckOptions::default(), |t, v| {
        let d = t.dot(v[0], v[1])?;
        let n = t.l2_norm(v[0]);
        let m = t.mean(v[1]);
        let s = t.sum(v[0]);
        let x = t.mul(d, n)?;
        let x = t.add(x, m)?;
        let x = t.add(x, s)?;
        let sq = t.mul(x, x)?;
        let pos = t.add_scalar(sq, 1.0);
        t.log10(pos)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn backward_basics_and_consumed_tape() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
    let d = tape.dot(x, x).unwrap();
    let g = tape.backward(d).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let unused = tape.leaf(Tensor::from_vec(vec![5.0]), true);
    let frozen = tape.constant(Tensor::from_vec(vec![1.0, 1.0]));
    let y = tape.mul(x, frozen).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap().data(), &[0.0]);
    assert!(g.get(frozen).is_none());
}

#[test]
fn permute_concat_scale_clamp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[1, 3, 4], &mut rng);
    let s = Tensor::scalar(0.7);
    let r = random(&[4, 3, 3], &mut rng);
    let report = check_gradients("layout", &[a, b, s], GradCheckOptions::default(), |t, v| {
        let c = t.concat(&[v[0], v[1]])?;
        let p = t.permute3(c, [2, 1, 0])?;
        let q = t.scale(p, v[2])?;
        let q = t.clamp_max(q, 10.0);
        let rv = t.constant(r.clone());
        t.dot(q, rv)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random(&[2, 8, 8], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, true);
        let kv = tape.leaf(k, true);
        let y = tape.conv2d(xv, kv, None, ConvGeometry::new((1, 2), (1, 1))).unwrap();
        let y = tape.leaky_relu(y, 0.01);
        let l = tape.dot(y, y).unwrap();
        let val = tape.value(l).item();
        let g = tape.backward(l).unwrap();
        (val.to_bits(), g.get(kv).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// <conv2d(x, k), y> == <x, conv2d_transpose(y, k)>
    #[test]
    fn conv_adjoint_pairing(
        ci in 1usize..4, co in 1usize..4,
        h in 3usize..10, w in 3usize..10,
        kh in 1usize..4, kw in 1usize..4,
        sh in 1usize..3, sw in 1usize..3,
        ph in 0usize..2, pw in 0usize..2,
        seed in any::<u64>(),
    ) {
        prop_assume!(kh <= h + 2 * ph && kw <= w + 2 * pw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geo = ConvGeometry::new((sh, sw), (ph, pw));
        let x = random(&[ci, h, w], &mut rng);
        let k = random(&[co, ci, kh, kw], &mut rng);
        let y_fwd = run_conv(&x, &k, &Tensor::zeros(&[co]), geo);
        // Shape algebra.
        prop_assert_eq!(y_fwd.shape()[1], (h + 2 * ph - kh) / sh + 1);
        prop_assert_eq!(&y_fwd, &conv2d_oracle(&x, &k, &vec![0.0; co], (sh, sw), (ph, pw)));
        let (oh, ow) = (y_fwd.shape()[1], y_fwd.shape()[2]);
        let back_h = conv_transpose_out_extent(oh, kh, sh, ph, 0).unwrap();
        let back_w = conv_transpose_out_extent(ow, kw, sw, pw, 0).unwrap();
        let out_pad = (h - back_h, w - back_w);
        prop_assume!(out_pad.0 < sh && out_pad.1 < sw);
        let y = random(&[co, oh, ow], &mut rng);
        let xt = run_conv_t(&y, &k, geo, out_pad);
        prop_assert_eq!(xt.shape(), x.shape());
        let lhs = y_fwd.dot(&y).unwrap();
        let rhs = x.dot(&xt).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1e-12));
    }
}
