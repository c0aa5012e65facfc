//! Subcommands. Exit codes: 0 success, 1 a check failed (or a step is stale
//! for `verify`), 2 usage or store error.

use std::io::Write;
use std::path::PathBuf;
use std::rc::Rc;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use stagecheck_core::backend::{BlobsSpec, DataModule};
use stagecheck_core::metrics::builtin_registry;
use stagecheck_core::recipe::{self, TransferSource};
use stagecheck_core::{Project, RunOptions, RunRecord, StepState, WatchedSource};

use crate::views::{render_table, step_views};

pub const DEFAULT_STORE: &str = ".stagecheck";
pub const DEFAULT_PORT: u16 = 7777;

#[derive(Debug, Parser)]
#[command(name = "stagecheck", version, about = "Run staged model checks and inspect their results")]
pub struct Cli {
    /// Project store directory.
    #[arg(long, global = true, default_value = DEFAULT_STORE)]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a store with the five built-in steps over a synthetic blobs task.
    Init {
        name: String,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        features: usize,
        #[arg(long, default_value_t = 40)]
        n_per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 3.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        /// Watch a file for a step, as STEP=PATH (relative to the store's parent). Repeatable.
        #[arg(long = "watch", value_name = "STEP=PATH")]
        watch: Vec<String>,
    },
    /// Run one step, or every step up to a step (default: all).
    Run {
        #[arg(long, conflicts_with = "to")]
        step: Option<String>,
        #[arg(long)]
        to: Option<String>,
        /// Run --step even if an earlier step has not passed.
        #[arg(long, requires = "step")]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print every step's state.
    Status,
    /// Recompute fingerprints and report stale steps.
    Verify,
    /// Serve the read-only dashboard API.
    Dashboard {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory with the built frontend (index.html and assets/).
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success = 0,
    Failed = 1,
}

/// Runs `cli`, writing reports to `out`. Errors map to exit code 2.
pub fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Init {
            name,
            classes,
            features,
            n_per_class,
            spread,
            center_scale,
            data_seed,
            watch,
        } => {
            let data = BlobsSpec {
                n_per_class,
                features,
                classes,
                spread,
                center_scale,
                seed: data_seed,
            };
            init(&cli.store, &name, data, &watch, out)
        }
        Command::Run {
            step,
            to,
            force,
            seed,
        } => run(&cli.store, step, to, force, seed, out),
        Command::Status => {
            let project = Project::load(&cli.store)?;
            out.write_all(render_table(&step_views(&project)).as_bytes())?;
            Ok(Outcome::Success)
        }
        Command::Verify => verify(&cli.store, out),
        Command::Dashboard { port, host, assets } => {
            Project::load(&cli.store)?;
            let addr = format!("{host}:{port}");
            writeln!(out, "serving {} on http://{addr}", cli.store.display())?;
            out.flush()?;
            tokio::runtime::Runtime::new()?
                .block_on(crate::server::serve(cli.store, addr, assets))?;
            Ok(Outcome::Success)
        }
    }
}

fn parse_watch(spec: &str) -> anyhow::Result<(String, String)> {
    let (step, path) = spec
        .split_once('=')
        .filter(|(s, p)| !s.is_empty() && !p.is_empty())
        .ok_or_else(|| anyhow!("--watch expects STEP=PATH, got `{spec}`"))?;
    Ok((step.to_string(), path.to_string()))
}

fn init(
    store: &std::path::Path,
    name: &str,
    data: BlobsSpec,
    watch: &[String],
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    data.generate().context("invalid data options")?;
    let watch: Vec<(String, String)> = watch.iter().map(|w| parse_watch(w)).collect::<Result<_, _>>()?;
    let steps = recipe::default_steps(data.classes);
    for (step, _) in &watch {
        if !steps.iter().any(|s| &s.name == step) {
            bail!("--watch names unknown step `{step}`");
        }
    }
    let mut project = Project::init(store, name, builtin_registry())?;
    project.set_data(data)?;
    for mut step in steps {
        for (target, path) in &watch {
            if *target == step.name {
                step = step.watch(WatchedSource::path(path.as_str(), path.as_str()));
            }
        }
        project.add_step(step)?;
    }
    writeln!(
        out,
        "initialized `{name}` at {} with {} steps",
        store.display(),
        project.manifest().steps.len()
    )?;
    Ok(Outcome::Success)
}

fn report(record: &RunRecord, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<20} {:<8} {}/{} checks  {}",
        record.step_name,
        record.final_state,
        record.checks_passed(),
        record.check_outcomes.len(),
        record.run_id
    )?;
    for c in record.check_outcomes.iter().filter(|c| !c.passed) {
        writeln!(out, "  FAILED {}: {}", c.check, c.message)?;
    }
    Ok(())
}

fn run(
    store: &std::path::Path,
    step: Option<String>,
    to: Option<String>,
    force: bool,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> anyhow::Result<Outcome> {
    let mut project = Project::load(store)?;
    let Some(last) = project.manifest().steps.last().map(|s| s.name.clone()) else {
        writeln!(out, "no steps to run")?;
        return Ok(Outcome::Success);
    };
    let spec = project
        .manifest()
        .data
        .clone()
        .ok_or_else(|| anyhow!("project has no data task to run the built-in steps on"))?;
    let data: Rc<dyn DataModule> = Rc::new(spec.generate()?);
    let source = TransferSource::Task(Rc::new(recipe::source_task(&spec)?));
    let mut executors = recipe::executors(project.manifest(), data, Some(source));

    let records = match step {
        Some(name) => {
            let descriptor = project
                .manifest()
                .step(&name)
                .ok_or_else(|| anyhow!("unknown step `{name}`"))?
                .clone();
            let executor = stagecheck_core::ExecutorSource::executor_for(&mut executors, &descriptor)
                .ok_or_else(|| anyhow!("no executor for step `{name}`"))?;
            vec![project.run_step(&name, executor, RunOptions { force, seed })?]
        }
        None => project.run_until(to.as_deref().unwrap_or(&last), &mut executors, seed)?,
    };
    for r in &records {
        report(r, out)?;
    }
    Ok(if records.iter().all(RunRecord::passed) {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}

fn verify(store: &std::path::Path, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let project = Project::load(store)?;
    let states = project.step_states();
    let mut stale = 0;
    for step in &project.manifest().steps {
        let state = states[&step.name];
        let note = match project.current_fingerprint(&step.name) {
            Err(e) => format!("sources unreadable: {e}"),
            Ok(_) if state == StepState::Stale => "sources changed since last run, re-run needed".into(),
            Ok(fp) => format!("{} {}", fp.algorithm, &fp.digest[..12]),
        };
        if state == StepState::Stale {
            stale += 1;
        }
        writeln!(out, "{:<20} {:<10} {note}", step.name, state)?;
    }
    writeln!(out, "{stale} stale step(s)")?;
    Ok(if stale == 0 {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}
