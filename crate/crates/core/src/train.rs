//! Training: decoupled-weight-decay Adam, a cosine learning-rate
//! schedule, and a fit loop whose per-sample gradients may build on
//! concurrent tapes.
//!
//! Parallelism never changes results: each sample's gradient comes off
//! its own tape running the same code as the sequential path, and the
//! batch reduction always sums in ascending sample order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::data::{epoch_batches, Sample};
use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be nonzero"));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::invalid(format!(
                "learning rates need 0 <= lr_min <= lr_max with lr_max > 0, \
                 got lr_min {} lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "eps must be positive and weight_decay non-negative",
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!(
                    "grad_clip must be a positive finite threshold, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Half-cosine decay from `lr_max` at step 0 to `lr_min` at `last_step`.
/// Written as a convex combination so both endpoints are exact in floating
/// point, not merely close.
pub fn cosine_lr(step: usize, last_step: usize, lr_max: f64, lr_min: f64) -> f64 {
    if last_step == 0 {
        return lr_max;
    }
    let t = step.min(last_step) as f64 / last_step as f64;
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    w * lr_max + (1.0 - w) * lr_min
}

/// Adam with decoupled weight decay. Decay applies to the pre-update
/// parameter value and skips tensors flagged exempt (layer norms,
/// embedding tables).
#[derive(Debug)]
pub struct AdamW<T: Element> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Element> AdamW<T> {
    pub fn new(param_shapes: &[Vec<usize>], config: &TrainConfig) -> AdamW<T> {
        AdamW {
            m: param_shapes
                .iter()
                .map(|s| Tensor::zeros(s.clone()))
                .collect(),
            v: param_shapes
                .iter()
                .map(|s| Tensor::zeros(s.clone()))
                .collect(),
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update over every parameter. A non-finite gradient aborts,
    /// naming the parameter and coordinate.
    pub fn step(&mut self, model: &mut Model<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(self.eps);
        let decay_rate = T::from_f64(lr * self.weight_decay);

        let mut index = 0;
        let mut status = Ok(());
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |name, decays, theta| {
            if status.is_err() {
                return;
            }
            let grad = &grads[index];
            for (coord, g) in grad.data().iter().enumerate() {
                if !g.is_finite() {
                    status = Err(Error::NonFinite {
                        what: format!("gradient of {name}"),
                        coord,
                    });
                    return;
                }
            }
            let m = ms[index].data_mut();
            let v = vs[index].data_mut();
            for (i, theta_i) in theta.data_mut().iter_mut().enumerate() {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let mut update = lr_t * m_hat / (v_hat.sqrt() + eps);
                if decays {
                    update += decay_rate * *theta_i;
                }
                *theta_i = *theta_i - update;
            }
            index += 1;
        });
        status
    }
}

/// Mean gradients, loss, and prediction tallies over one batch.
pub struct BatchStats<T: Element> {
    pub grads: Vec<Tensor<T>>,
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// Loss and accuracy over a sample set.
#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

fn sample_gradients<T: Element>(
    model: &Model<T>,
    sample: &Sample<T>,
) -> Result<(Vec<Tensor<T>>, f64, usize, usize)> {
    let mut tape = Tape::new();
    let (bound, eval) = model.loss_on_tape(&mut tape, sample)?;
    let loss = tape.value(eval.loss).data()[0].to_f64();
    let grads = tape.backward(eval.loss)?;
    let shapes = model.param_shapes();
    let per_param = bound
        .vars
        .iter()
        .zip(&shapes)
        .map(|(v, s)| grads.get_or_zeros(*v, s))
        .collect();
    Ok((per_param, loss, eval.correct, eval.total))
}

fn sample_eval<T: Element>(model: &Model<T>, sample: &Sample<T>) -> Result<(f64, usize, usize)> {
    let mut tape = Tape::new();
    let (_, eval) = model.loss_on_tape(&mut tape, sample)?;
    Ok((
        tape.value(eval.loss).data()[0].to_f64(),
        eval.correct,
        eval.total,
    ))
}

/// Gradient of the batch-mean loss. Samples run on independent tapes,
/// concurrently under the `parallel` feature; the reduction then sums in
/// ascending sample order regardless, so results match bit for bit.
pub fn batch_gradients<T: Element>(
    model: &Model<T>,
    samples: &[&Sample<T>],
) -> Result<BatchStats<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    #[cfg(feature = "parallel")]
    let per: Vec<(Vec<Tensor<T>>, f64, usize, usize)> = samples
        .par_iter()
        .map(|s| sample_gradients(model, s))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per: Vec<(Vec<Tensor<T>>, f64, usize, usize)> = samples
        .iter()
        .map(|s| sample_gradients(model, s))
        .collect::<Result<_>>()?;

    let inv = T::from_f64(1.0 / samples.len() as f64);
    let mut iter = per.into_iter();
    let (mut grads, mut loss, mut correct, mut total) = iter.next().unwrap();
    for (g, l, c, t) in iter {
        for (acc, add) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.data_mut().iter_mut().zip(add.data()) {
                *a += *b;
            }
        }
        loss += l;
        correct += c;
        total += t;
    }
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = *v * inv;
        }
    }
    Ok(BatchStats {
        grads,
        loss: loss / samples.len() as f64,
        correct,
        total,
    })
}

/// Scales `grads` in place so their global L2 norm does not exceed
/// `max_norm`; returns the pre-clip norm. The norm accumulates in f64
/// across tensors in parameter order, so the result is deterministic
/// for both element types.
pub fn clip_gradients<T: Element>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in g.data() {
            let x = v.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// Forward-only pass over a sample set; mean of per-sample losses.
pub fn evaluate<T: Element>(model: &Model<T>, samples: &[Sample<T>]) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    #[cfg(feature = "parallel")]
    let per: Vec<(f64, usize, usize)> = samples
        .par_iter()
        .map(|s| sample_eval(model, s))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per: Vec<(f64, usize, usize)> = samples
        .iter()
        .map(|s| sample_eval(model, s))
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let (mut correct, mut total) = (0, 0);
    for (l, c, t) in per {
        loss += l;
        correct += c;
        total += t;
    }
    Ok(EvalStats {
        loss: loss / samples.len() as f64,
        accuracy: correct as f64 / total.max(1) as f64,
        correct,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
    Summary,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Summary => "summary",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One history row: a training step, an end-of-epoch validation pass, or
/// the final summary.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<StepRecord>,
    pub steps: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub final_val_accuracy: f64,
}

/// Trains in place. The schedule spans all steps of all epochs; batches
/// reshuffle per epoch from the training seed. A non-finite batch loss
/// aborts with the step that produced it. Zero epochs is a no-op: the
/// report comes back empty and the weights stay untouched.
pub fn fit<T: Element>(
    model: &mut Model<T>,
    train_data: &[Sample<T>],
    val_data: &[Sample<T>],
    config: &TrainConfig,
) -> Result<FitReport> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let n = train_data.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    if total_steps == 0 {
        return Ok(FitReport {
            history: Vec::new(),
            steps: 0,
            final_train_loss: f64::NAN,
            final_val_loss: f64::NAN,
            final_val_accuracy: f64::NAN,
        });
    }
    let last_step = total_steps - 1;

    let mut optimizer = AdamW::new(&model.param_shapes(), config);
    let mut history = Vec::new();
    let mut step = 0;
    let mut final_train_loss = f64::NAN;
    let mut last_val: Option<EvalStats> = None;

    for epoch in 0..config.epochs {
        for batch_indices in epoch_batches(n, config.batch_size, config.seed, epoch) {
            let batch: Vec<&Sample<T>> = batch_indices.iter().map(|&i| &train_data[i]).collect();
            let mut stats = batch_gradients(model, &batch)?;
            if !stats.loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            if let Some(max_norm) = config.grad_clip {
                clip_gradients(&mut stats.grads, max_norm);
            }
            let lr = cosine_lr(step, last_step, config.lr_max, config.lr_min);
            optimizer.step(model, &stats.grads, lr)?;
            history.push(StepRecord {
                epoch,
                step,
                phase: Phase::Train,
                loss: stats.loss,
                accuracy: stats.correct as f64 / stats.total.max(1) as f64,
                lr,
            });
            final_train_loss = stats.loss;
            step += 1;
        }
        if !val_data.is_empty() {
            let eval = evaluate(model, val_data)?;
            history.push(StepRecord {
                epoch,
                step: step - 1,
                phase: Phase::Val,
                loss: eval.loss,
                accuracy: eval.accuracy,
                lr: cosine_lr(step - 1, last_step, config.lr_max, config.lr_min),
            });
            last_val = Some(eval);
        }
    }

    let (final_val_loss, final_val_accuracy) = match last_val {
        Some(e) => (e.loss, e.accuracy),
        None => (final_train_loss, f64::NAN),
    };
    history.push(StepRecord {
        epoch: config.epochs - 1,
        step: step - 1,
        phase: Phase::Summary,
        loss: final_val_loss,
        accuracy: final_val_accuracy,
        lr: cosine_lr(step - 1, last_step, config.lr_max, config.lr_min),
    });
    Ok(FitReport {
        history,
        steps: step,
        final_train_loss,
        final_val_loss,
        final_val_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionVariant;
    use crate::model::{ModelConfig, TaskKind};

    #[test]
    fn cosine_endpoints_are_exact() {
        let (hi, lo) = (3e-4, 7e-6);
        assert_eq!(cosine_lr(0, 100, hi, lo), hi);
        assert_eq!(cosine_lr(100, 100, hi, lo), lo);
        assert_eq!(cosine_lr(150, 100, hi, lo), lo);
        // midpoint: exactly the average
        let mid = cosine_lr(50, 100, hi, lo);
        assert!((mid - (hi + lo) / 2.0).abs() < 1e-18);
        // monotone decreasing on the way down
        for s in 1..=100 {
            assert!(cosine_lr(s, 100, hi, lo) <= cosine_lr(s - 1, 100, hi, lo));
        }
    }

    #[test]
    fn single_step_schedule_is_lr_max() {
        assert_eq!(cosine_lr(0, 0, 1e-3, 1e-5), 1e-3);
    }

    fn scalar_model() -> (Model<f64>, Vec<Sample<f64>>) {
        let config = ModelConfig {
            task: TaskKind::Lm { vocab: 4 },
            d_model: 6,
            n_heads: 1,
            n_layers: 1,
            ffn_hidden: 4,
            variant: AttentionVariant::Glu,
            final_layer_norm: false,
            max_seq_len: 4,
        };
        let model = Model::init(&config, 7).unwrap();
        let data = vec![
            Sample::Text {
                tokens: vec![0, 1, 2, 3],
            },
            Sample::Text {
                tokens: vec![1, 2, 3, 0],
            },
            Sample::Text {
                tokens: vec![2, 3, 0, 1],
            },
        ];
        (model, data)
    }

    #[test]
    fn adamw_hand_step_oracle() {
        // One parameter, one step, worked by hand from the update rule:
        //   m1 = 0.1 g, v1 = 0.001 g^2, m^ = g, v^ = g^2
        //   theta1 = theta0 - lr * g / (|g| + eps) - lr * wd * theta0
        // With theta0 = 0.5, g = 2, lr = 0.1, wd = 0.01:
        //   theta1 = 0.5 - 0.1 * (2 / (2 + 1e-8)) - 0.001 * 0.5
        let config = TrainConfig {
            lr_max: 0.1,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let model_config = ModelConfig {
            task: TaskKind::Lm { vocab: 4 },
            d_model: 6,
            n_heads: 1,
            n_layers: 1,
            ffn_hidden: 4,
            variant: AttentionVariant::Baseline,
            final_layer_norm: false,
            max_seq_len: 4,
        };
        let mut model = Model::<f64>::init(&model_config, 1).unwrap();
        let metas = model.param_meta();
        let before = model.param_tensors();
        let grads: Vec<Tensor<f64>> = model
            .param_shapes()
            .iter()
            .map(|s| Tensor::full(s.clone(), 2.0))
            .collect();
        let mut opt = AdamW::new(&model.param_shapes(), &config);
        opt.step(&mut model, &grads, 0.1).unwrap();

        let expected_step = 0.1 * (2.0 / (2.0 + 1e-8));
        let after = model.param_tensors();
        for ((meta, b), a) in metas.iter().zip(&before).zip(&after) {
            for (x0, x1) in b.data().iter().zip(a.data()) {
                let decay = if meta.decay { 0.1 * 0.01 * x0 } else { 0.0 };
                let expected = x0 - expected_step - decay;
                assert!(
                    (x1 - expected).abs() < 1e-12,
                    "{}: {x1} vs {expected}",
                    meta.name
                );
            }
        }
    }

    #[test]
    fn adamw_zero_grad_no_decay_is_identity_from_rest() {
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (mut model, _) = scalar_model();
        let before = model.param_tensors();
        let grads: Vec<Tensor<f64>> = model
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s.clone()))
            .collect();
        let mut opt = AdamW::new(&model.param_shapes(), &config);
        for _ in 0..3 {
            opt.step(&mut model, &grads, 1e-3).unwrap();
        }
        for (b, a) in before.iter().zip(model.param_tensors().iter()) {
            assert!(b.bitwise_eq(a));
        }
    }

    #[test]
    fn adamw_rejects_non_finite_gradient_by_name() {
        let (mut model, _) = scalar_model();
        let mut grads: Vec<Tensor<f64>> = model
            .param_shapes()
            .iter()
            .map(|s| Tensor::zeros(s.clone()))
            .collect();
        grads[2].data_mut()[1] = f64::NAN;
        let name = model.param_meta()[2].name.clone();
        let mut opt = AdamW::new(&model.param_shapes(), &TrainConfig::default());
        let err = opt.step(&mut model, &grads, 1e-3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&name), "{msg}");
        assert!(msg.contains("coordinate 1"), "{msg}");
    }

    #[test]
    fn batch_gradients_match_sequential_reduction() {
        let (model, data) = scalar_model();
        let refs: Vec<&Sample<f64>> = data.iter().collect();
        let stats = batch_gradients(&model, &refs).unwrap();

        // manual: mean of single-sample gradients in ascending order
        let mut singles = Vec::new();
        for s in &data {
            let one = batch_gradients(&model, &[s]).unwrap();
            singles.push(one.grads);
        }
        for p in 0..stats.grads.len() {
            for i in 0..stats.grads[p].numel() {
                let mut acc = 0.0;
                for s in &singles {
                    acc += s[p].data()[i];
                }
                acc *= 1.0 / 3.0;
                let got = stats.grads[p].data()[i];
                assert!((got - acc).abs() < 1e-15, "param {p} coord {i}");
            }
        }
    }

    #[test]
    fn fit_reduces_loss_and_is_reproducible() {
        let run = || {
            let (mut model, data) = scalar_model();
            let config = TrainConfig {
                epochs: 150,
                batch_size: 3,
                lr_max: 3e-3,
                lr_min: 1e-5,
                seed: 5,
                ..TrainConfig::default()
            };
            let report = fit(&mut model, &data, &data, &config).unwrap();
            (report, model.param_tensors())
        };
        let (r1, p1) = run();
        let (r2, p2) = run();
        assert!(r1.history[0].loss > r1.final_train_loss * 1.5);
        for (a, b) in p1.iter().zip(&p2) {
            assert!(a.bitwise_eq(b));
        }
        assert_eq!(r1.history.len(), r2.history.len());
        for (a, b) in r1.history.iter().zip(&r2.history) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        // phases present
        assert!(r1.history.iter().any(|r| r.phase == Phase::Val));
        assert_eq!(r1.history.last().unwrap().phase, Phase::Summary);
        // schedule endpoints hit
        assert_eq!(r1.history[0].lr, 3e-3);
        let last_train = r1
            .history
            .iter()
            .rfind(|r| r.phase == Phase::Train)
            .unwrap();
        assert_eq!(last_train.lr, 1e-5);
    }

    #[test]
    fn zero_epoch_fit_is_a_bitwise_no_op() {
        let (mut model, data) = scalar_model();
        let before = model.param_tensors();
        let config = TrainConfig {
            epochs: 0,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &data, &data, &config).unwrap();
        assert!(report.history.is_empty());
        assert_eq!(report.steps, 0);
        assert!(report.final_train_loss.is_nan());
        assert!(report.final_val_loss.is_nan());
        assert!(report.final_val_accuracy.is_nan());
        for (b, a) in before.iter().zip(model.param_tensors().iter()) {
            assert!(b.bitwise_eq(a));
        }
    }

    #[test]
    fn clip_scales_global_norm_to_threshold() {
        // two tensors with joint norm sqrt(9 + 16) = 5
        let mut grads = vec![
            Tensor::<f64>::full(vec![3], 3.0 / 3f64.sqrt()),
            Tensor::<f64>::full(vec![4], 4.0 / 2.0),
        ];
        let pre = clip_gradients(&mut grads, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let mut sq = 0.0;
        for g in &grads {
            for v in g.data() {
                sq += v * v;
            }
        }
        assert!((sq.sqrt() - 1.0).abs() < 1e-12);
        // direction preserved: each coordinate scaled by the same factor
        assert!((grads[0].data()[0] / grads[1].data()[0] - 3f64.sqrt() / 2.0).abs() < 1e-12);

        // threshold rejected when non-positive or non-finite
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let config = TrainConfig {
                grad_clip: Some(bad),
                ..TrainConfig::default()
            };
            assert!(config.validate().is_err(), "grad_clip {bad} accepted");
        }
    }

    #[test]
    fn clip_below_threshold_is_bitwise_identity() {
        let mut grads = vec![Tensor::<f32>::full(vec![2, 2], 0.3)];
        let before = grads[0].clone();
        let pre = clip_gradients(&mut grads, 10.0);
        assert!((pre - 0.6) < 1e-6);
        assert!(grads[0].bitwise_eq(&before));
    }

    #[test]
    fn adamw_textbook_first_step_value() {
        // theta = 1, g = 0.5, lr = 0.1, decay 0.01:
        //   theta' = 1 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * 0.01 * 1
        //          = 0.899000002 on decayed tensors (0.900000002 without decay)
        let config = TrainConfig {
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let (mut model, _) = scalar_model();
        model.visit_params_mut(&mut |_, _, t| {
            for v in t.data_mut() {
                *v = 1.0;
            }
        });
        let grads: Vec<Tensor<f64>> = model
            .param_shapes()
            .iter()
            .map(|s| Tensor::full(s.clone(), 0.5))
            .collect();
        let mut opt = AdamW::new(&model.param_shapes(), &config);
        opt.step(&mut model, &grads, 0.1).unwrap();
        model.visit_params(&mut |name, decay, t| {
            let expected = if decay { 0.899000002 } else { 0.900000002 };
            for v in t.data() {
                assert!((v - expected).abs() < 1e-9, "{name}: {v} vs {expected}");
            }
        });
    }
}
