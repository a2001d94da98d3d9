use denoise_kd::losses::{cosine_distance, cosine_distance_value, joint_loss, si_snr, si_snr_loss, LossWeights, DB_CAP};
use denoise_kd::tensor::{Tape, Tensor};
use denoise_kd::Error;
use proptest::prelude::*;

fn tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec())
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n).prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

#[test]
fn cosine_fixed_points() {
    let a = tensor(&[0.3, -1.2, 2.5, 0.01, -0.7]);
    let neg = tensor(&a.data().iter().map(|v| -v).collect::<Vec<_>>());
    assert!(cosine_distance_value(&a, &a).unwrap().abs() <= 1e-12);
    assert!((cosine_distance_value(&a, &neg).unwrap() - 2.0).abs() <= 1e-12);
    let orth = (tensor(&[1.0, 0.0]), tensor(&[0.0, 3.0]));
    assert!((cosine_distance_value(&orth.0, &orth.1).unwrap() - 1.0).abs() <= 1e-15);
}

#[test]
fn zero_norm_is_an_error() {
    let a = tensor(&[0.0, 0.0, 0.0]);
    let b = tensor(&[1.0, 2.0, 3.0]);
    assert!(matches!(cosine_distance_value(&a, &b), Err(Error::ZeroNorm { .. })));
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a), tape.constant(b));
    assert!(matches!(cosine_distance(&mut tape, av, bv), Err(Error::ZeroNorm { .. })));
    assert!(matches!(si_snr(&[0.0; 4], &[1.0; 4]), Err(Error::ZeroPower { .. })));
}

#[test]
fn tape_losses_match_value_functions() {
    let x = [0.4, -0.2, 0.9, 0.1, -0.5, 0.3];
    let y = [0.35, -0.1, 0.7, 0.2, -0.6, 0.25];
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(tensor(&x)), tape.constant(tensor(&y)));
    let l = si_snr_loss(&mut tape, xv, yv).unwrap();
    assert!((tape.value(l).item() + si_snr(&x, &y).unwrap()).abs() < 1e-12);
    let kd = cosine_distance(&mut tape, xv, yv).unwrap();
    assert!((tape.value(kd).item() - cosine_distance_value(&tensor(&x), &tensor(&y)).unwrap()).abs() < 1e-15);

    let w = LossWeights { lambda_kd: 0.25, lambda_out: 2.0 };
    let tot = joint_loss(&mut tape, kd, l, w).unwrap();
    let (kd_v, l_v) = (tape.value(kd).item(), tape.value(l).item());
    assert_eq!(tape.value(tot).item(), w.total(kd_v, l_v));
}

#[test]
fn perfect_estimate_saturates_at_the_cap() {
    let x = [0.5, -1.0, 0.25];
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(tensor(&x)), tape.constant(tensor(&[1.0, -2.0, 0.5])));
    let l = si_snr_loss(&mut tape, xv, yv).unwrap();
    assert_eq!(tape.value(l).item(), -DB_CAP);
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(a in vec_strategy(24), b in vec_strategy(24), k in 1e-3f64..1e3, m in 1e-3f64..1e3) {
        let base = cosine_distance_value(&tensor(&a), &tensor(&b)).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v * k).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * m).collect();
        let scaled = cosine_distance_value(&tensor(&sa), &tensor(&sb)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12);
        prop_assert!((0.0..=2.0).contains(&base));
    }

    #[test]
    fn si_snr_ignores_estimate_scale(x in vec_strategy(64), noise in vec_strategy(64), g in 0.05f64..1.0, k in 1e-3f64..1e3) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a + g * e).collect();
        let base = si_snr(&x, &y).unwrap();
        let ky: Vec<f64> = y.iter().map(|v| v * k).collect();
        prop_assert!((si_snr(&x, &ky).unwrap() - base).abs() <= 1e-9);
    }

    #[test]
    fn si_snr_is_bounded(x in vec_strategy(16), y in vec_strategy(16)) {
        let v = si_snr(&x, &y).unwrap();
        prop_assert!((-DB_CAP..=DB_CAP).contains(&v));
    }
}
