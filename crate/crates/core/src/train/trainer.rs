//! Supervised pretraining and teacher-to-student distillation.
//!
//! Both share one loop: per epoch, freshly mixed training examples are
//! processed in batches (per-example gradients summed in index order, then
//! averaged), followed by a validation pass. Early stopping watches the
//! validation loss and the parameters of the best epoch are returned.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::features::Prepared;
use crate::data::{Corpus, SnrRange, Split};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::losses::{cosine_distance, joint_loss, si_snr_loss, LossWeights};
use crate::nn::{BottleneckAdapter, ParamSet, UNetModel};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub snr: SnrRange,
}

fn default_batch() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_min_delta() -> f64 {
    1e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            snr: SnrRange::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::Config { field: field.into(), reason });
        if self.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs", "must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("train.patience", "must be at least 1".into());
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return bad("train.min_delta", format!("must be finite and nonnegative, got {}", self.min_delta));
        }
        if self.snr.min > self.snr.max {
            return bad("train.snr", format!("min {} exceeds max {}", self.snr.min, self.snr.max));
        }
        self.weights.validate()?;
        self.adam.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One line of the training log. Losses are epoch means over examples;
/// `l_tot` is `lambda_kd * l_kd + lambda_out * l_out` of those means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub l_kd: f64,
    pub l_out: f64,
    pub l_tot: f64,
    pub val_loss: f64,
    pub best_val: f64,
}

/// CSV columns: `epoch,l_kd,l_out,l_tot,val_loss,best_val`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

const HISTORY_HEADER: &str = "epoch,l_kd,l_out,l_tot,val_loss,best_val";

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.l_kd, r.l_out, r.l_tot, r.val_loss, r.best_val);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::InvalidArgument("history header not recognised".into()));
        }
        let rows = lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || Error::InvalidArgument(format!("history line `{line}`"));
                if f.len() != 6 {
                    return Err(bad());
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                Ok(HistoryRow {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    l_kd: num(1)?,
                    l_out: num(2)?,
                    l_tot: num(3)?,
                    val_loss: num(4)?,
                    best_val: num(5)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct LossParts {
    kd: f64,
    out: f64,
}

/// A trainable objective: parameter groups plus a per-example loss.
trait Objective {
    fn groups(&self) -> Vec<&ParamSet>;
    fn groups_mut(&mut self) -> Vec<&mut ParamSet>;
    fn weights(&self) -> LossWeights;
    /// Loss parts and, when `grads` is set, one gradient per parameter
    /// tensor across all groups.
    fn example(&self, ex: &Prepared, grads: bool) -> Result<(LossParts, f64, Vec<Tensor>)>;
}

fn collect_grads(tape: &mut Tape, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>> {
    let mut g = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| g.take(v).expect("trainable leaf has a gradient")).collect())
}

struct Supervised<'a> {
    model: &'a mut UNetModel,
}

impl Objective for Supervised<'_> {
    fn groups(&self) -> Vec<&ParamSet> {
        vec![self.model.params()]
    }

    fn groups_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![self.model.params_mut()]
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_kd: 0.0,
            lambda_out: 1.0,
        }
    }

    fn example(&self, ex: &Prepared, grads: bool) -> Result<(LossParts, f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.model.params().bind(&mut tape, grads);
        let x = tape.constant(ex.input.clone());
        let out = self.model.forward(&mut tape, &vars, x)?;
        let wave = ex.enhance(&mut tape, x, out.mask)?;
        let clean = tape.constant(ex.clean.clone());
        let loss = si_snr_loss(&mut tape, clean, wave)?;
        let v = tape.value(loss).item();
        let g = if grads { collect_grads(&mut tape, loss, &vars)? } else { Vec::new() };
        Ok((LossParts { kd: 0.0, out: v }, v, g))
    }
}

struct Distill<'a> {
    teacher: &'a UNetModel,
    student: &'a mut UNetModel,
    adapter: &'a mut BottleneckAdapter,
    weights: LossWeights,
}

impl Objective for Distill<'_> {
    fn groups(&self) -> Vec<&ParamSet> {
        vec![self.student.params(), self.adapter.params()]
    }

    fn groups_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![self.student.params_mut(), self.adapter.params_mut()]
    }

    fn weights(&self) -> LossWeights {
        self.weights
    }

    fn example(&self, ex: &Prepared, grads: bool) -> Result<(LossParts, f64, Vec<Tensor>)> {
        // The teacher runs on its own tape; only its latent values enter here.
        let teacher_latent = self.teacher.infer_latent(&ex.input)?;
        let mut tape = Tape::new();
        let mut vars = self.student.params().bind(&mut tape, grads);
        let adapter_vars = self.adapter.params().bind(&mut tape, grads);
        let x = tape.constant(ex.input.clone());
        let t = tape.constant(teacher_latent);
        let h_b = self.adapter.forward(&mut tape, &adapter_vars, t)?;
        let out = self.student.forward(&mut tape, &vars, x)?;
        let l_kd = cosine_distance(&mut tape, h_b, out.latent)?;
        let wave = ex.enhance(&mut tape, x, out.mask)?;
        let clean = tape.constant(ex.clean.clone());
        let l_out = si_snr_loss(&mut tape, clean, wave)?;
        let total = joint_loss(&mut tape, l_kd, l_out, self.weights)?;
        let parts = LossParts {
            kd: tape.value(l_kd).item(),
            out: tape.value(l_out).item(),
        };
        let tot = tape.value(total).item();
        vars.extend(adapter_vars);
        let g = if grads { collect_grads(&mut tape, total, &vars)? } else { Vec::new() };
        Ok((parts, tot, g))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn prepared(corpus: &Corpus, split: Split, cfg: &TrainConfig, epoch: usize, stft: StftConfig) -> Result<Vec<Prepared>> {
    corpus
        .epoch(split, cfg.seed, epoch as u64, cfg.snr)?
        .map(|ex| Prepared::new(&ex?, stft))
        .collect()
}

/// Mean loss parts over a split without gradients.
fn evaluate_split<O: Objective>(obj: &O, examples: &[Prepared]) -> Result<LossParts> {
    let mut kd = Vec::with_capacity(examples.len());
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let (p, _, _) = obj.example(ex, false)?;
        kd.push(p.kd);
        out.push(p.out);
    }
    Ok(LossParts {
        kd: mean(&kd),
        out: mean(&out),
    })
}

fn run<O: Objective>(
    obj: &mut O,
    corpus: &Corpus,
    stft: StftConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = obj.weights();
    let mut adam = Adam::new(cfg.adam, &obj.groups());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut history = History::default();
    let mut best: Vec<ParamSet> = obj.groups().into_iter().cloned().collect();
    for epoch in 1..=cfg.max_epochs {
        let train = prepared(corpus, Split::Train, cfg, epoch, stft)?;
        let (mut kd, mut out) = (Vec::with_capacity(train.len()), Vec::with_capacity(train.len()));
        for batch in train.chunks(cfg.batch_size) {
            let mut sum: Option<Vec<Tensor>> = None;
            for ex in batch {
                let (parts, tot, grads) = obj.example(ex, true)?;
                if !tot.is_finite() {
                    return Err(Error::Divergence { epoch, loss: tot });
                }
                kd.push(parts.kd);
                out.push(parts.out);
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            let mut grads = sum.expect("non-empty batch");
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v /= n));
            adam.step(&mut obj.groups_mut(), &grads)?;
        }
        let val = evaluate_split(obj, &prepared(corpus, Split::Val, cfg, epoch, stft)?)?;
        let val_loss = weights.total(val.kd, val.out);
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        let (l_kd, l_out) = (mean(&kd), mean(&out));
        let decision = stopper.observe(epoch, val_loss);
        let row = HistoryRow {
            epoch,
            l_kd,
            l_out,
            l_tot: weights.total(l_kd, l_out),
            val_loss,
            best_val: stopper.best(),
        };
        history.rows.push(row);
        on_epoch(&row);
        if decision == StopDecision::Improved {
            best = obj.groups().into_iter().cloned().collect();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    for (dst, src) in obj.groups_mut().into_iter().zip(best) {
        *dst = src;
    }
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch(),
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Trains `model` to minimize the negated SI-SNR of its masked, noisy-phase
/// reconstruction. On return `model` holds the best-validation parameters.
pub fn pretrain(
    model: &mut UNetModel,
    corpus: &Corpus,
    stft: StftConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    run(&mut Supervised { model }, corpus, stft, cfg, on_epoch)
}

/// Trains `student` and `adapter` jointly against a frozen `teacher`:
/// `lambda_kd * cos_dist(adapter(teacher latent), student latent)
/// + lambda_out * (-SI-SNR)`. Validation monitors the same total.
pub fn distill(
    teacher: &UNetModel,
    student: &mut UNetModel,
    adapter: &mut BottleneckAdapter,
    corpus: &Corpus,
    stft: StftConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    if adapter.spec().teacher != teacher.latent_shape() || adapter.spec().student != student.latent_shape() {
        return Err(Error::ScenarioMismatch {
            scenario: "adapter".into(),
            teacher: teacher.latent_shape().as_array(),
            student: student.latent_shape().as_array(),
            reason: format!(
                "adapter maps {} -> {}",
                adapter.spec().teacher,
                adapter.spec().student
            ),
        });
    }
    if teacher.input_shape() != student.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "distill inputs",
            left: teacher.input_shape().to_vec(),
            right: student.input_shape().to_vec(),
        });
    }
    let weights = cfg.weights;
    run(
        &mut Distill {
            teacher,
            student,
            adapter,
            weights,
        },
        corpus,
        stft,
        cfg,
        on_epoch,
    )
}

/// Mean KD loss of `student` against `teacher` through `adapter` over the
/// frozen test split (no training).
pub fn kd_loss(
    teacher: &UNetModel,
    student: &UNetModel,
    adapter: &BottleneckAdapter,
    examples: &[Prepared],
) -> Result<f64> {
    let mut values = Vec::with_capacity(examples.len());
    for ex in examples {
        let t = adapter.infer(&teacher.infer_latent(&ex.input)?)?;
        let s = student.infer_latent(&ex.input)?;
        values.push(crate::losses::cosine_distance_value(&t, &s)?);
    }
    Ok(mean(&values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_two_constant_epochs() {
        let mut s = EarlyStopping::new(1, 1e-4);
        assert_eq!(s.observe(1, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(2, 0.5), StopDecision::Stop);
    }

    #[test]
    fn min_delta_counts_as_no_improvement() {
        let mut s = EarlyStopping::new(3, 1e-3);
        s.observe(1, 1.0);
        assert_eq!(s.observe(2, 0.9995), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.5), StopDecision::Improved);
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn history_round_trip() {
        let h = History {
            rows: vec![HistoryRow {
                epoch: 1,
                l_kd: 0.25,
                l_out: -3.1,
                l_tot: 0.25 - 3.1,
                val_loss: -2.0 / 3.0,
                best_val: -2.0 / 3.0,
            }],
        };
        assert_eq!(History::from_csv(&h.to_csv()).unwrap(), h);
    }
}
