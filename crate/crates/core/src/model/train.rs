//! Sequence training: every window of `n` consecutive fragments is encoded
//! and the decoder is asked to reproduce the window's last fragment.

use pcapae_nn::{
    LossKind, LrSchedule, LrScheduler, OptimizerKind, OptimizerState, Tape, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fragment_tensor, AutoEncoder, Phase};
use crate::fragment::{windows, FragmentStore, SequenceWindow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Triangular cycle up to ten times the base rate, one cycle per epoch.
    Cycle,
    /// Multiply by `gamma` every `step_size` epochs.
    Step { gamma: f64, step_size: u64 },
    /// Multiply by `factor` once the epoch loss stalls for `patience` epochs.
    Plateau { factor: f64, patience: u32 },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Cycle => "cycle",
            ScheduleKind::Step { .. } => "step",
            ScheduleKind::Plateau { .. } => "plateau",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleKind,
    pub base_lr: f64,
    pub seed: u64,
    /// Visit windows in a fresh random order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 1,
            batch_size: 2,
            epochs: 6,
            loss: LossKind::Mse,
            optimizer: OptimizerKind::adamw(),
            schedule: ScheduleKind::Cycle,
            base_lr: 2e-5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidParameter(
                "sequence length n must be at least 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be positive",
                self.base_lr
            )));
        }
        Ok(())
    }

    fn lr_schedule(&self, steps_per_epoch: u64) -> LrSchedule {
        match self.schedule {
            ScheduleKind::Cycle => LrSchedule::Cycle {
                base_lr: self.base_lr,
                max_lr: 10.0 * self.base_lr,
                cycle_len: steps_per_epoch.max(1),
            },
            ScheduleKind::Step { gamma, step_size } => LrSchedule::Step {
                base_lr: self.base_lr,
                gamma,
                step_size,
            },
            ScheduleKind::Plateau { factor, patience } => LrSchedule::Plateau {
                base_lr: self.base_lr,
                factor,
                patience,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

pub(crate) fn store_tensors(store: &FragmentStore) -> Vec<Tensor<f32>> {
    store.fragments.iter().map(fragment_tensor::<f32>).collect()
}

fn batch_inputs(
    tensors: &[Tensor<f32>],
    batch: &[SequenceWindow],
    tape: &mut Tape<f32>,
) -> Result<Vec<Var>> {
    let n = batch[0].n;
    (0..n)
        .map(|t| {
            let items: Vec<&Tensor<f32>> = batch.iter().map(|w| &tensors[w.start + t]).collect();
            Ok(tape.leaf(Tensor::stack_batch(&items)?))
        })
        .collect()
}

/// Trains a freshly initialized model (seeded from `config.seed`).
pub fn train(
    config: &TrainConfig,
    store: &FragmentStore,
) -> Result<(AutoEncoder<f32>, TrainReport)> {
    let mut model = AutoEncoder::<f32>::new(config.seed);
    let report = train_model(&mut model, config, store)?;
    Ok((model, report))
}

pub fn train_model(
    model: &mut AutoEncoder<f32>,
    config: &TrainConfig,
    store: &FragmentStore,
) -> Result<TrainReport> {
    config.validate()?;
    let mut wins = windows(store.len(), config.n)?;
    if wins.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} fragments cannot form a window of {}",
            store.len(),
            config.n
        )));
    }
    let tensors = store_tensors(store);
    let steps_per_epoch = wins.len().div_ceil(config.batch_size) as u64;
    let schedule = config.lr_schedule(steps_per_epoch);
    schedule.validate().map_err(Error::InvalidParameter)?;
    let mut scheduler = LrScheduler::new(schedule);
    let mut optimizer = OptimizerState::new(config.optimizer, &model.params);

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut report = TrainReport::default();
    let mut last_epoch_loss = None;
    for epoch in 0..config.epochs {
        if config.shuffle {
            wins.shuffle(&mut order_rng);
        }
        let epoch_lr = match config.schedule {
            ScheduleKind::Cycle => None,
            ScheduleKind::Step { .. } => Some(scheduler.value(epoch as u64, None)),
            ScheduleKind::Plateau { .. } => Some(scheduler.value(epoch as u64, last_epoch_loss)),
        };
        let mut total = 0.0;
        for batch in wins.chunks(config.batch_size) {
            let lr = epoch_lr.unwrap_or_else(|| scheduler.value(report.steps, None));
            let mut tape = Tape::new();
            let inputs = batch_inputs(&tensors, batch, &mut tape)?;
            let fwd = model.forward(&mut tape, &inputs, &mut Phase::Train(&mut dropout_rng))?;
            let loss = tape.loss(fwd.output, *inputs.last().unwrap(), config.loss)?;
            let value = tape.value(loss).data()[0] as f64;
            let grads = tape.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate(&tape, &grads)?;
            optimizer.step(&mut model.params, lr)?;
            report.steps += 1;
            total += value * batch.len() as f64;
        }
        let mean = total / wins.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NumericFault(format!(
                "epoch {} loss is {mean}",
                epoch + 1
            )));
        }
        report.epoch_losses.push(mean);
        last_epoch_loss = Some(mean);
    }
    Ok(report)
}

/// Loss of one window given as normalized `[1, 1, 32, 32]` tensors.
pub fn reconstruction_loss(
    model: &AutoEncoder<f32>,
    window: &[Tensor<f32>],
    kind: LossKind,
) -> Result<f64> {
    model.sequence_loss(window, kind)
}

/// Loss of every stride-1 window of `store`, in window order.
pub fn reconstruction_losses(
    model: &AutoEncoder<f32>,
    store: &FragmentStore,
    n: usize,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let wins = windows(store.len(), n)?;
    let tensors = store_tensors(store);
    wins.par_iter()
        .map(|w| model.sequence_loss(&tensors[w.range()], kind))
        .collect()
}

/// Loss of every window after permuting its fragments with a random
/// non-identity order (for `n >= 2`). The target is the last fragment of
/// the permuted sequence.
pub fn shuffled_reconstruction_losses(
    model: &AutoEncoder<f32>,
    store: &FragmentStore,
    n: usize,
    kind: LossKind,
    seed: u64,
) -> Result<Vec<f64>> {
    let wins = windows(store.len(), n)?;
    let tensors = store_tensors(store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders: Vec<Vec<usize>> = wins
        .iter()
        .map(|w| {
            let mut idx: Vec<usize> = w.range().collect();
            if n >= 2 {
                while idx.iter().enumerate().all(|(i, &v)| v == w.start + i) {
                    idx.shuffle(&mut rng);
                }
            }
            let _ = rng.gen::<u32>();
            idx
        })
        .collect();
    orders
        .par_iter()
        .map(|idx| {
            let seq: Vec<Tensor<f32>> = idx.iter().map(|&i| tensors[i].clone()).collect();
            model.sequence_loss(&seq, kind)
        })
        .collect()
}
