//! Plain SGD with optional L2 penalty over deterministically cycled mini-batches.

use crate::rng::{derive_seed, SplitMix64};
use crate::tracking::decorators::{
    BatchInput, BatchOutput, Decorator, DecoratorChain, PipelineStage,
};

use super::data::DatasetSplit;
use super::model::{loss_and_grad, Params};
use super::BackendError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Step size; zero is allowed and leaves the parameters untouched.
    pub lr: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            max_iters: 500,
            batch_size: 16,
            l2: 0.0,
            seed: 0,
            hidden_width: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(BackendError::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(BackendError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(BackendError::InvalidConfig(format!("l2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    /// Objective on the batch used at each iteration, before that iteration's update.
    pub history: Vec<f64>,
}

/// Row order for every epoch: one seeded shuffle per epoch, consumed in fixed-size chunks.
#[derive(Debug)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            batch_size: batch_size.min(n).max(1),
            seed,
            epoch: 0,
            order: Vec::new(),
        };
        s.shuffle_for(0);
        s
    }

    fn shuffle_for(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.order = (0..self.n).collect();
        SplitMix64::new(derive_seed(self.seed, epoch as u64)).shuffle(&mut self.order);
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// `(epoch, row indices)` used at `iteration`.
    pub fn batch(&mut self, iteration: usize) -> (usize, &[usize]) {
        let per_epoch = self.batches_per_epoch();
        let epoch = iteration / per_epoch;
        if epoch != self.epoch {
            self.shuffle_for(epoch);
        }
        let start = (iteration % per_epoch) * self.batch_size;
        let end = (start + self.batch_size).min(self.n);
        (epoch, &self.order[start..end])
    }
}

/// The first batch drawn under `seed`: what overfit-one-batch trains on.
pub fn first_batch(data: &DatasetSplit, batch_size: usize, seed: u64) -> DatasetSplit {
    let mut schedule = BatchSchedule::new(data.n_samples(), batch_size, seed);
    let (_, rows) = schedule.batch(0);
    data.select(rows)
}

/// Runs `config.max_iters` SGD steps starting from `params`, with `decorators`
/// wrapped around every batch step (first decorator outermost).
pub fn train(
    params: Params,
    data: &DatasetSplit,
    config: &TrainConfig,
    decorators: &mut [Box<dyn Decorator>],
) -> Result<TrainOutcome, BackendError> {
    config.validate()?;
    if data.is_empty() {
        return Err(BackendError::EmptyDataset);
    }
    let mut params = params;
    let mut history = Vec::with_capacity(config.max_iters);
    let mut schedule = BatchSchedule::new(data.n_samples(), config.batch_size, config.seed);

    for iteration in 0..config.max_iters {
        let (epoch, rows) = schedule.batch(iteration);
        let batch = data.select(rows);
        let input = BatchInput {
            iteration,
            epoch,
            batch: &batch,
        };
        let mut step = |input: &BatchInput<'_>| -> anyhow::Result<BatchOutput> {
            let (loss, grad) = loss_and_grad(&params, input.batch, config.l2)?;
            if !loss.is_finite() {
                return Err(BackendError::NonFiniteLoss {
                    iteration: input.iteration,
                    value: loss,
                }
                .into());
            }
            params.scaled_add(-config.lr, &grad);
            Ok(BatchOutput { loss })
        };
        let output = DecoratorChain::new(&mut step, decorators)
            .call(&input)
            .map_err(BackendError::from_stage)?;
        history.push(output.loss);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::data::make_blobs;
    use crate::backend::model::InitScheme;

    fn fixture() -> (DatasetSplit, Params) {
        let (train, _) = make_blobs(10, 3, 2, 1.0, 2.0, 1).unwrap();
        (train, Params::init(3, 4, 2, InitScheme::Uniform(0.5), 2))
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (data, p) = fixture();
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let out = train(p.clone(), &data, &cfg, &mut []).unwrap();
        assert_eq!(out.params, p);
        assert!(out.history.is_empty());
    }

    #[test]
    fn deterministic_for_same_seed() {
        let (data, p) = fixture();
        let cfg = TrainConfig {
            max_iters: 50,
            batch_size: 7,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(p.clone(), &data, &cfg, &mut []).unwrap();
        let b = train(p.clone(), &data, &cfg, &mut []).unwrap();
        assert_eq!(a, b);
        let c = train(p, &data, &TrainConfig { seed: 10, ..cfg }, &mut []).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (data, p) = fixture();
        let cfg = TrainConfig {
            lr: 0.0,
            max_iters: 5,
            ..TrainConfig::default()
        };
        let out = train(p.clone(), &data, &cfg, &mut []).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn schedule_covers_each_row_once_per_epoch() {
        let mut s = BatchSchedule::new(10, 4, 3);
        assert_eq!(s.batches_per_epoch(), 3);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = (0..3)
                .flat_map(|b| s.batch(epoch * 3 + b).1.to_vec())
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
        let e0: Vec<usize> = s.batch(0).1.to_vec();
        let e1: Vec<usize> = s.batch(3).1.to_vec();
        assert_ne!(e0, e1);
    }

    #[test]
    fn diverging_run_reports_non_finite_loss() {
        let (data, p) = fixture();
        let cfg = TrainConfig {
            lr: 1e200,
            max_iters: 20,
            ..TrainConfig::default()
        };
        let err = train(p, &data, &cfg, &mut []).unwrap_err();
        assert!(matches!(err, BackendError::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn rejects_invalid_config() {
        let (data, p) = fixture();
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: -1.0, ..TrainConfig::default() },
            TrainConfig { l2: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(matches!(
                train(p.clone(), &data, &cfg, &mut []),
                Err(BackendError::InvalidConfig(_))
            ));
        }
    }
}
