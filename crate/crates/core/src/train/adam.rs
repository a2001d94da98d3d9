use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::Config { field: field.into(), reason });
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("adam.lr", format!("must be finite and nonnegative, got {}", self.lr));
        }
        for (f, b) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(f, format!("must lie in [0, 1), got {b}"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("adam.eps", format!("must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor, in the
/// order of the parameter groups passed at construction.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, groups: &[&ParamSet]) -> Self {
        let sizes: Vec<usize> = groups.iter().flat_map(|g| g.entries().iter().map(|e| e.tensor.len())).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads` lists one tensor per parameter tensor across all
    /// groups, in order. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, groups: &mut [&mut ParamSet], grads: &[Tensor]) -> Result<()> {
        let mut k = 0;
        for g in groups.iter() {
            for e in g.entries() {
                let grad = grads.get(k).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing gradient for parameter `{}`", e.name))
                })?;
                if grad.shape() != e.tensor.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adam",
                        left: e.tensor.shape().to_vec(),
                        right: grad.shape().to_vec(),
                    });
                }
                if !grad.all_finite() {
                    return Err(Error::NanGradient(e.name.clone()));
                }
                k += 1;
            }
        }
        if k != grads.len() || k != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                k,
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0;
        for g in groups.iter_mut() {
            for e in g.entries_mut() {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                for (((p, &gr), mi), vi) in e.tensor.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gr;
                    *vi = beta2 * *vi + (1.0 - beta2) * gr * gr;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                k += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![value]));
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.5);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Tensor::from_vec(vec![1.0])]).unwrap();
        let moved = 0.5 - p.entries()[0].tensor.data()[0];
        // m_hat / (sqrt(v_hat) + eps) = 1 / (1 + 1e-8)
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn nan_gradient_aborts_without_change() {
        let mut p = single(0.5);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let err = adam.step(&mut [&mut p], &[Tensor::from_vec(vec![f64::NAN])]).unwrap_err();
        assert!(matches!(err, Error::NanGradient(ref n) if n == "w"));
        assert_eq!(p.entries()[0].tensor.data()[0], 0.5);
        assert_eq!(adam.steps(), 0);
    }
}
