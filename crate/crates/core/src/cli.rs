//! Command-line entry point: `trajverb <stage> --config <file>`.
//!
//! Exit codes: 0 on success, 1 for an invalid config or invocation,
//! 2 when an upstream stage has not been run (or a report lacks seeds),
//! 3 for any other failure.

use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{Condition, Pipeline, PipelineError, StageLog};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "trajverb", version, about = "Simulate, label, featurize, train and report the 2D vs 3D verb experiment")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML). Keys can be overridden with
    /// TRAJVERB__SECTION__KEY environment variables.
    #[arg(long, global = true, default_value = "trajverb.toml")]
    pub config: PathBuf,
    /// Recompute stages whose stamps are current.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override experiment.seed_root.
    #[arg(long, global = true)]
    pub seed_root: Option<u64>,
    /// Override experiment.out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct RunFilter {
    /// Restrict to these conditions (modality names or `random`).
    #[arg(long = "condition", value_name = "NAME")]
    pub conditions: Vec<String>,
    /// Restrict to these model seeds.
    #[arg(long = "seed", value_name = "SEED")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the episodes.
    Gen {
        /// Override experiment.episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Label clips with the verb oracles and assign splits.
    Label,
    /// Build normalized feature caches.
    Featurize,
    /// Self-supervised pretraining.
    Pretrain(RunFilter),
    /// Grid search over pretraining hyperparameters.
    Gridsearch,
    /// Verb fine-tuning.
    Finetune(RunFilter),
    /// 3D position probe.
    Probe(RunFilter),
    /// Tables and figures from stored runs.
    Report,
    /// Every stage in order.
    All,
}

fn load_config(g: &GlobalArgs, episodes: Option<usize>) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::load(&g.config)?;
    if let Some(s) = g.seed_root {
        cfg.experiment.seed_root = s;
    }
    if let Some(o) = &g.out {
        cfg.experiment.out = o.clone();
    }
    if let Some(n) = episodes {
        cfg.experiment.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn filter(p: &Pipeline, f: &RunFilter, trained_only: bool) -> Result<(Vec<Condition>, Vec<u64>), PipelineError> {
    let mut conds = Condition::all(&p.cfg);
    if trained_only {
        conds.retain(|c| *c != Condition::Random);
    }
    if !f.conditions.is_empty() {
        let wanted = f
            .conditions
            .iter()
            .map(|s| s.parse::<Condition>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::Invalid { path: "--condition".into(), message: e.to_string() })?;
        conds.retain(|c| wanted.contains(c));
    }
    let seeds = if f.seeds.is_empty() { p.cfg.experiment.seeds.clone() } else { f.seeds.clone() };
    Ok((conds, seeds))
}

fn execute(cli: &Cli) -> Result<StageLog, PipelineError> {
    let episodes = match cli.command {
        Command::Gen { episodes } => episodes,
        _ => None,
    };
    let cfg = load_config(&cli.global, episodes)?;
    let p = Pipeline::new(cfg, cli.global.force);
    let mut log = StageLog::default();
    let mut add = |l: StageLog| {
        log.ran.extend(l.ran);
        log.skipped.extend(l.skipped);
    };
    match &cli.command {
        Command::Gen { .. } => add(p.generate()?),
        Command::Label => add(p.label()?),
        Command::Featurize => add(p.featurize(&p.feature_modalities())?),
        Command::Gridsearch => add(p.grid_search(&p.cfg.experiment.modalities)?),
        Command::Pretrain(f) => {
            let (conds, seeds) = filter(&p, f, true)?;
            for c in conds {
                if let Condition::Trained(m) = c {
                    add(p.pretrain(m, &seeds)?);
                }
            }
        }
        Command::Finetune(f) => {
            let (conds, seeds) = filter(&p, f, false)?;
            for c in conds {
                add(p.finetune(c, &seeds)?);
            }
        }
        Command::Probe(f) => {
            let (conds, seeds) = filter(&p, f, false)?;
            for c in conds {
                add(p.probe(c, &seeds)?);
            }
        }
        Command::Report => add(p.report()?),
        Command::All => add(p.run_all()?),
    }
    Ok(log)
}

/// Parse `argv`, run the requested stage(s) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let jobs = cli.global.jobs.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 3;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(log) => {
            eprintln!("{} stage(s) ran, {} up to date", log.ran.len(), log.skipped.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
