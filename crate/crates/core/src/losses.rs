//! Training losses and the energy-ratio metrics they are built from.
//!
//! Ratios in dB are computed as `10 log10((num + EPS) / (den + EPS))` and
//! clamped to `[-DB_CAP, DB_CAP]`, so identical signals give `+DB_CAP`
//! instead of infinity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DB_CAP: f64 = 120.0;
pub const EPS: f64 = 1e-12;
/// Norms below this make the cosine distance undefined.
pub const NORM_GUARD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub lambda_kd: f64,
    #[serde(default = "one")]
    pub lambda_out: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_kd: 1.0,
            lambda_out: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda_kd", self.lambda_kd), ("lambda_out", self.lambda_out)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config {
                    field: field.into(),
                    reason: format!("must be a finite nonnegative number, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// `lambda_kd * kd + lambda_out * out`
    pub fn total(&self, kd: f64, out: f64) -> f64 {
        self.lambda_kd * kd + self.lambda_out * out
    }
}

fn clamp_db(db: f64) -> f64 {
    db.clamp(-DB_CAP, DB_CAP)
}

fn check_pair(op: &'static str, target: &[f64], estimate: &[f64]) -> Result<f64> {
    if target.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![target.len()],
            right: vec![estimate.len()],
        });
    }
    let energy: f64 = target.iter().map(|v| v * v).sum();
    if energy <= EPS {
        return Err(Error::ZeroPower { what: "target" });
    }
    Ok(energy)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - <a, b> / (|a| |b|)` over the flattened tensors.
pub fn cosine_distance_value(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine distance",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    guard_norms(na, nb)?;
    Ok(1.0 - a.dot(b)? / (na * nb))
}

fn guard_norms(na: f64, nb: f64) -> Result<()> {
    for norm in [na, nb] {
        if norm < NORM_GUARD {
            return Err(Error::ZeroNorm {
                op: "cosine distance",
                norm,
            });
        }
    }
    Ok(())
}

/// Differentiable cosine distance between two tensors of equal size.
pub fn cosine_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (na_v, nb_v) = (tape.value(a).l2_norm(), tape.value(b).l2_norm());
    if tape.value(a).len() != tape.value(b).len() {
        return Err(Error::ShapeMismatch {
            op: "cosine distance",
            left: tape.value(a).shape().to_vec(),
            right: tape.value(b).shape().to_vec(),
        });
    }
    guard_norms(na_v, nb_v)?;
    let ab = tape.dot(a, b)?;
    let na = tape.l2_norm(a);
    let nb = tape.l2_norm(b);
    let denom = tape.mul(na, nb)?;
    let cos = tape.div(ab, denom)?;
    let neg = tape.mul_scalar(cos, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Ratio stabilizer proportional to the estimate energy, so rescaling the
/// estimate leaves the ratio unchanged.
fn stabilizer(estimate_energy: f64) -> f64 {
    EPS * estimate_energy + f64::MIN_POSITIVE
}

/// Scale-invariant SNR in dB: the estimate is projected onto the target and
/// the projection energy is compared with the residual energy.
pub fn si_snr(target: &[f64], estimate: &[f64]) -> Result<f64> {
    let energy = check_pair("si-snr", target, estimate)?;
    let alpha = dot(estimate, target) / energy;
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in target.iter().zip(estimate) {
        let s = alpha * x;
        num += s * s;
        den += (s - y) * (s - y);
    }
    let eps = stabilizer(dot(estimate, estimate));
    Ok(clamp_db(10.0 * ((num + eps) / (den + eps)).log10()))
}

/// Identical to [`si_snr`]; the two names are used interchangeably.
pub fn si_sdr(target: &[f64], estimate: &[f64]) -> Result<f64> {
    si_snr(target, estimate)
}

/// Plain energy-ratio SDR, `10 log10(|x|^2 / |x - y|^2)`. Not scale invariant.
pub fn sdr(target: &[f64], estimate: &[f64]) -> Result<f64> {
    let energy = check_pair("sdr", target, estimate)?;
    let residual: f64 = target.iter().zip(estimate).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(clamp_db(10.0 * ((energy + EPS) / (residual + EPS)).log10()))
}

/// Negated SI-SNR on the tape. `target` is treated as data (its gradient is
/// not needed); gradients flow into `estimate`.
pub fn si_snr_loss(tape: &mut Tape, target: Var, estimate: Var) -> Result<Var> {
    let energy = check_pair("si-snr loss", tape.value(target).data(), tape.value(estimate).data())?;
    let proj = tape.dot(estimate, target)?;
    let alpha = tape.mul_scalar(proj, 1.0 / energy);
    let s = tape.scale(target, alpha)?;
    let e = tape.sub(s, estimate)?;
    let ee = tape.dot(estimate, estimate)?;
    let eps = tape.mul_scalar(ee, EPS);
    let eps = tape.add_scalar(eps, f64::MIN_POSITIVE);
    let num = tape.dot(s, s)?;
    let num = tape.add(num, eps)?;
    let den = tape.dot(e, e)?;
    let den = tape.add(den, eps)?;
    let ratio = tape.div(num, den)?;
    let lg = tape.log10(ratio)?;
    // loss = -clamp(10 log10 ratio) = clamp(-10 log10 ratio, -CAP, CAP)
    let neg_db = tape.mul_scalar(lg, -10.0);
    let upper = tape.clamp_max(neg_db, DB_CAP);
    let flipped = tape.mul_scalar(upper, -1.0);
    let lower = tape.clamp_max(flipped, DB_CAP);
    Ok(tape.mul_scalar(lower, -1.0))
}

/// `lambda_kd * kd + lambda_out * out` on the tape.
pub fn joint_loss(tape: &mut Tape, kd: Var, out: Var, weights: LossWeights) -> Result<Var> {
    let a = tape.mul_scalar(kd, weights.lambda_kd);
    let b = tape.mul_scalar(out, weights.lambda_out);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(si_snr(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(si_snr(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), DB_CAP);
        assert!(matches!(si_snr(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroPower { .. })));
        let s = sdr(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!(s.abs() < 1e-9);
    }

    #[test]
    fn loss_is_negated_metric() {
        let x = vec![0.3, -0.1, 0.8, 0.05];
        let y = vec![0.2, 0.1, 0.7, -0.1];
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::from_vec(x.clone()));
        let yv = tape.leaf(Tensor::from_vec(y.clone()), true);
        let l = si_snr_loss(&mut tape, xv, yv).unwrap();
        assert!((tape.value(l).item() + si_snr(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn weights_default_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_kd, w.lambda_out), (1.0, 1.0));
        assert_eq!(w.total(0.4, 1.2), 0.4 + 1.2);
        assert!(LossWeights { lambda_kd: -1.0, lambda_out: 1.0 }.validate().is_err());
    }
}
