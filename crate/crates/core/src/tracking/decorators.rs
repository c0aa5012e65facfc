//! Before/after hooks wrapped around a pipeline stage.
//!
//! Decorators see batch inputs and outputs read-only. At the end of a run they
//! may append metrics through a [`MetricSink`]; they cannot touch model state.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;

use crate::backend::DatasetSplit;
use crate::metrics::{MetricSink, MetricStage, MetricValue, WALL_TIME_SECONDS};

#[derive(Debug, Clone, Copy)]
pub struct BatchInput<'a> {
    pub iteration: usize,
    pub epoch: usize,
    pub batch: &'a DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutput {
    pub loss: f64,
}

/// One step of the pipeline, e.g. a single optimizer update on a batch.
pub trait PipelineStage {
    fn call(&mut self, input: &BatchInput<'_>) -> anyhow::Result<BatchOutput>;
}

impl<F> PipelineStage for F
where
    F: FnMut(&BatchInput<'_>) -> anyhow::Result<BatchOutput>,
{
    fn call(&mut self, input: &BatchInput<'_>) -> anyhow::Result<BatchOutput> {
        self(input)
    }
}

pub trait Decorator {
    fn name(&self) -> &str;

    fn before(&mut self, _input: &BatchInput<'_>) -> anyhow::Result<()> {
        Ok(())
    }

    fn after(&mut self, _input: &BatchInput<'_>, _output: &BatchOutput) -> anyhow::Result<()> {
        Ok(())
    }

    /// Called once when the owning run finishes.
    fn finish(&mut self, _metrics: &mut MetricSink<'_>) -> anyhow::Result<()> {
        Ok(())
    }
}

impl<D: Decorator + ?Sized> Decorator for Box<D> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn before(&mut self, input: &BatchInput<'_>) -> anyhow::Result<()> {
        (**self).before(input)
    }

    fn after(&mut self, input: &BatchInput<'_>, output: &BatchOutput) -> anyhow::Result<()> {
        (**self).after(input, output)
    }

    fn finish(&mut self, metrics: &mut MetricSink<'_>) -> anyhow::Result<()> {
        (**self).finish(metrics)
    }
}

/// A stage with one decorator around it.
pub struct Decorated<S, D> {
    stage: S,
    decorator: D,
}

impl<S, D> Decorated<S, D> {
    pub fn into_parts(self) -> (S, D) {
        (self.stage, self.decorator)
    }
}

impl<S: PipelineStage, D: Decorator> PipelineStage for Decorated<S, D> {
    fn call(&mut self, input: &BatchInput<'_>) -> anyhow::Result<BatchOutput> {
        let name = self.decorator.name().to_string();
        self.decorator
            .before(input)
            .with_context(|| format!("{name} before-hook"))?;
        let output = self.stage.call(input)?;
        self.decorator
            .after(input, &output)
            .with_context(|| format!("{name} after-hook"))?;
        Ok(output)
    }
}

/// Wraps `stage` so `decorator.before` runs first and `decorator.after` last.
pub fn wrap_stage<S: PipelineStage, D: Decorator>(stage: S, decorator: D) -> Decorated<S, D> {
    Decorated { stage, decorator }
}

/// A stage with a list of decorators; `decorators[0]` is the outermost layer.
pub struct DecoratorChain<'a, S> {
    stage: S,
    decorators: &'a mut [Box<dyn Decorator>],
}

impl<'a, S: PipelineStage> DecoratorChain<'a, S> {
    pub fn new(stage: S, decorators: &'a mut [Box<dyn Decorator>]) -> Self {
        Self { stage, decorators }
    }
}

impl<S: PipelineStage> PipelineStage for DecoratorChain<'_, S> {
    fn call(&mut self, input: &BatchInput<'_>) -> anyhow::Result<BatchOutput> {
        for d in self.decorators.iter_mut() {
            let name = d.name().to_string();
            d.before(input).with_context(|| format!("{name} before-hook"))?;
        }
        let output = self.stage.call(input)?;
        for d in self.decorators.iter_mut().rev() {
            let name = d.name().to_string();
            d.after(input, &output)
                .with_context(|| format!("{name} after-hook"))?;
        }
        Ok(output)
    }
}

/// Does nothing.
#[derive(Debug, Default)]
pub struct Identity;

impl Decorator for Identity {
    fn name(&self) -> &str {
        "identity"
    }
}

/// Writes every batch it sees as `batch_<iteration>.csv` under `dir`.
#[derive(Debug)]
pub struct BatchSaver {
    dir: PathBuf,
    saved: usize,
}

impl BatchSaver {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            saved: 0,
        }
    }

    pub fn saved(&self) -> usize {
        self.saved
    }
}

impl Decorator for BatchSaver {
    fn name(&self) -> &str {
        "batch_saver"
    }

    fn before(&mut self, input: &BatchInput<'_>) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(format!("batch_{:06}.csv", input.iteration));
        input
            .batch
            .write_csv(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        self.saved += 1;
        Ok(())
    }
}

/// Accumulates time spent inside the wrapped stage; reports `train/wall_time_seconds`.
#[derive(Debug, Default)]
pub struct Timer {
    started: Option<Instant>,
    total: Duration,
}

impl Timer {
    pub fn elapsed(&self) -> Duration {
        self.total
    }
}

impl Decorator for Timer {
    fn name(&self) -> &str {
        "timer"
    }

    fn before(&mut self, _input: &BatchInput<'_>) -> anyhow::Result<()> {
        self.started = Some(Instant::now());
        Ok(())
    }

    fn after(&mut self, _input: &BatchInput<'_>, _output: &BatchOutput) -> anyhow::Result<()> {
        if let Some(start) = self.started.take() {
            self.total += start.elapsed();
        }
        Ok(())
    }

    fn finish(&mut self, metrics: &mut MetricSink<'_>) -> anyhow::Result<()> {
        metrics.record(MetricValue::new(
            MetricStage::Train,
            WALL_TIME_SECONDS,
            self.total.as_secs_f64(),
        ))?;
        Ok(())
    }
}
