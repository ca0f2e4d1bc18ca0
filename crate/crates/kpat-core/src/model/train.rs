//! Training loop: Adam with the inverse-square-root warmup schedule, clean
//! input swap, and source token dropout.

use rand::Rng;

use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::tokenizer::UNK_ID;

use super::{argmax_lowest, DropCtx, ModelError, PatModel, PreparedItem};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr_factor: f64,
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            lr_factor: 1.0,
            warmup_steps: 400,
            seed: 0,
        }
    }
}

/// One utterance, tokenized: noisy source, clean reference source, phoneme
/// ids, and target ids.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub asr: Vec<u32>,
    pub clean: Vec<u32>,
    pub phones: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub tokens: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub token_accuracy: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-9;

pub struct Trainer {
    model: PatModel<f32>,
    adam_m: Vec<Tensor<f32>>,
    adam_v: Vec<Tensor<f32>>,
    step: usize,
    opts: TrainOptions,
}

impl Trainer {
    pub fn new(model: PatModel<f32>, opts: TrainOptions) -> Self {
        let adam_m = model
            .params()
            .cloned_values()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let adam_v = model
            .params()
            .cloned_values()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Trainer {
            model,
            adam_m,
            adam_v,
            step: 0,
            opts,
        }
    }

    pub fn model(&self) -> &PatModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> PatModel<f32> {
        self.model
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Inverse-square-root schedule with linear warmup, scaled by
    /// `lr_factor * d_k^-0.5`.
    pub fn learning_rate(&self) -> f64 {
        let step = (self.step + 1) as f64;
        let warmup = self.opts.warmup_steps.max(1) as f64;
        self.opts.lr_factor
            * (self.model.config().d_k as f64).powf(-0.5)
            * step.powf(-0.5).min(step * warmup.powf(-1.5))
    }

    /// One optimizer step over a batch. Per item, the text-encoder input is
    /// the clean reference with probability `clean_swap_prob`, and source
    /// tokens are independently replaced by UNK at `input_dropout_rate`.
    pub fn train_step(&mut self, batch: &[TrainItem]) -> Result<StepStats, ModelError> {
        let cfg = self.model.config().clone();
        let prepared: Vec<PreparedItem> = batch
            .iter()
            .enumerate()
            .map(|(bi, item)| {
                let mut rng = crate::rng::stream_rng(self.opts.seed, self.step as u64, bi as u64);
                let source = if rng.gen_bool(cfg.clean_swap_prob) {
                    &item.clean
                } else {
                    &item.asr
                };
                let text = source
                    .iter()
                    .map(|&t| {
                        if cfg.input_dropout_rate > 0.0 && rng.gen_bool(cfg.input_dropout_rate) {
                            UNK_ID
                        } else {
                            t
                        }
                    })
                    .collect();
                PreparedItem {
                    text,
                    phones: item.phones.clone(),
                    target: item.target.clone(),
                }
            })
            .collect();

        let mut dropout_rng = crate::rng::stream_rng(self.opts.seed, self.step as u64, u64::MAX);
        let lr = self.learning_rate();
        let (loss, grads, stats) = {
            let mut g = Graph::new();
            let bound = self.model.bind(&mut g, true);
            let fwd = self
                .model
                .batch_loss(
                    &mut g,
                    &bound,
                    &prepared,
                    Some(DropCtx {
                        rng: &mut dropout_rng,
                        rate: cfg.dropout_rate,
                    }),
                )
                .map_err(|e| self.diagnose(e, lr))?;
            g.backward(fwd.loss).map_err(|e| self.diagnose(e.into(), lr))?;
            let loss = g.value(fwd.loss).item() as f64;
            let mut tokens = 0usize;
            let mut correct = 0usize;
            for (logits, targets) in &fwd.per_item {
                let lv = g.value(*logits);
                for (row, &t) in (0..lv.rows()).zip(targets.iter()) {
                    tokens += 1;
                    if argmax_lowest(lv.row(row)) == t {
                        correct += 1;
                    }
                }
            }
            let grads: Vec<Option<Tensor<f32>>> =
                bound.iter().map(|&b| g.grad(b).cloned()).collect();
            (loss, grads, (tokens, correct))
        };

        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let m = &mut self.adam_m[i];
            let v = &mut self.adam_v[i];
            for ((mv, vv), &gv) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(grad.data())
            {
                *mv = (ADAM_BETA1 as f32) * *mv + (1.0 - ADAM_BETA1 as f32) * gv;
                *vv = (ADAM_BETA2 as f32) * *vv + (1.0 - ADAM_BETA2 as f32) * gv * gv;
            }
            let p = self.model.params_mut().value_mut(i);
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mv as f64 / bc1;
                let v_hat = vv as f64 / bc2;
                *pv -= (lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
            }
        }

        Ok(StepStats {
            loss,
            tokens: stats.0,
            correct: stats.1,
        })
    }

    fn diagnose(&self, e: ModelError, lr: f64) -> ModelError {
        match e {
            ModelError::Tensor(crate::tensor::TensorError::NonFinite { .. }) => {
                ModelError::NonFiniteLoss { step: self.step, lr }
            }
            other => other,
        }
    }

    /// One pass over the corpus in a seeded shuffle.
    pub fn train_epoch(&mut self, items: &[TrainItem], epoch: usize) -> Result<EpochStats, ModelError> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = crate::rng::stream_rng(self.opts.seed, 0xE0C0, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        let mut correct = 0usize;
        let mut n_batches = 0usize;
        for chunk in order.chunks(self.opts.batch_size.max(1)) {
            let batch: Vec<TrainItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            let stats = self.train_step(&batch)?;
            loss_sum += stats.loss;
            tokens += stats.tokens;
            correct += stats.correct;
            n_batches += 1;
        }
        Ok(EpochStats {
            mean_loss: loss_sum / n_batches.max(1) as f64,
            token_accuracy: correct as f64 / tokens.max(1) as f64,
        })
    }

    /// Teacher-forced evaluation without dropout or input augmentation.
    pub fn evaluate(&self, items: &[TrainItem]) -> Result<EpochStats, ModelError> {
        evaluate_model(&self.model, items)
    }
}

/// Teacher-forced loss and token accuracy of a model on a set of items,
/// inference mode (no dropout, no clean swap).
pub fn evaluate_model(model: &PatModel<f32>, items: &[TrainItem]) -> Result<EpochStats, ModelError> {
    let mut loss_sum = 0.0;
    let mut tokens = 0usize;
    let mut correct = 0usize;
    let mut n = 0usize;
    for item in items {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let prepared = [PreparedItem {
            text: item.asr.clone(),
            phones: item.phones.clone(),
            target: item.target.clone(),
        }];
        let fwd = model.batch_loss(&mut g, &bound, &prepared, None)?;
        loss_sum += g.value(fwd.loss).item() as f64;
        for (logits, targets) in &fwd.per_item {
            let lv = g.value(*logits);
            for (row, &t) in (0..lv.rows()).zip(targets.iter()) {
                tokens += 1;
                if argmax_lowest(lv.row(row)) == t {
                    correct += 1;
                }
            }
        }
        n += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / n.max(1) as f64,
        token_accuracy: correct as f64 / tokens.max(1) as f64,
    })
}

