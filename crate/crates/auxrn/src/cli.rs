//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use auxrn_core::auxiliary::{AuxWeights, ProgressLoss};
use auxrn_core::config::{parse_aux_weights, TrainConfig};
use auxrn_core::encoders::VisionQuery;
use auxrn_core::graphworld::{Dataset, Split};
use auxrn_core::training::{
    augment_for, dataset_for, diagnose, evaluate_split, finetune_augmented, pre_explore, pretrain,
    run_ablation, StageReport, Trainer,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::formats::{episodes_to_jsonl, read_text, write_dataset, write_text};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "auxrn", version, about = "Auxiliary-reasoning navigation agent on synthetic graph worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProgressArg {
    Bce,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum QueryArg {
    CrossModal,
    VisionHistory,
}

fn aux_weights_arg(s: &str) -> std::result::Result<AuxWeights, String> {
    parse_aux_weights(s).map_err(|e| e.to_string())
}

fn split_arg(s: &str) -> std::result::Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file applied over the defaults (or over the checkpoint's config)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run seed; derives worlds, episodes, initialization and every rng stream
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training iterations for this stage
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Auxiliary loss weights as speaker,progress,matching,angle
    #[arg(long, value_name = "W,W,W,W", value_parser = aux_weights_arg)]
    pub aux_weights: Option<AuxWeights>,
    /// Progress-estimation loss
    #[arg(long, value_enum)]
    pub progress_loss: Option<ProgressArg>,
    /// Query used by the panoramic view attention
    #[arg(long, value_enum)]
    pub vision_query: Option<QueryArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate worlds and episodes and write them as JSON
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Stage 1: train on labeled training-world episodes, keep the best val-unseen SPL checkpoint
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Output directory for checkpoints and logs
        #[arg(long, default_value = "runs/pretrain")]
        out_dir: PathBuf,
    },
    /// Stage 2: back-translate training-world paths with the speaker and finetune on labeled plus augmented data
    Augment {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to start from
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for augmented episodes, checkpoints and logs
        #[arg(long, default_value = "runs/augment")]
        out_dir: PathBuf,
    },
    /// Stage 3: back-translate unseen-world paths and finetune on them, keep the last checkpoint
    PreExplore {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to start from
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for augmented episodes, checkpoints and logs
        #[arg(long, default_value = "runs/pre-explore")]
        out_dir: PathBuf,
    },
    /// Greedy evaluation of a checkpoint on one split
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split: train-seen, val-seen, val-unseen or test-unseen
        #[arg(long, default_value = "val-unseen", value_parser = split_arg)]
        split: Split,
        /// Also write per-episode metrics and rollout logs here
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train the baseline, each single auxiliary loss and all four, plus the progress-loss pair
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Output directory for the ablation table
        #[arg(long, default_value = "runs/ablate")]
        out_dir: PathBuf,
    },
    /// Write attention heatmaps, progress/matching curves and the training curve as CSV
    EmitPlots {
        #[command(flatten)]
        common: Common,
        /// Run directory holding checkpoint.json and optionally train_log.jsonl
        #[arg(long)]
        run_dir: PathBuf,
        /// Checkpoint to use instead of the run directory's checkpoint.json
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split whose episodes are plotted
        #[arg(long, default_value = "val-unseen", value_parser = split_arg)]
        split: Split,
    },
}

/// Number of episodes `emit-plots` renders.
const PLOT_EPISODES: usize = 5;

fn resolve_config(common: &Common, base: Option<TrainConfig>) -> Result<TrainConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = &common.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.aux_weights {
        cfg.aux = w;
    }
    if let Some(p) = common.progress_loss {
        cfg.progress_loss = match p {
            ProgressArg::Bce => ProgressLoss::Bce,
            ProgressArg::Mse => ProgressLoss::Mse,
        };
    }
    if let Some(q) = common.vision_query {
        cfg.vision_query = match q {
            QueryArg::CrossModal => VisionQuery::CrossModal,
            QueryArg::VisionHistory => VisionQuery::VisionHistory,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a checkpoint and a trainer holding it. Flags and `--config` apply
/// on top of the checkpoint's own config.
fn load_trainer(common: &Common, path: &Path) -> Result<(Trainer, Dataset)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = resolve_config(common, Some(ckpt.config()?))?;
    let dataset = dataset_for(&cfg)?;
    let trainer = Trainer::from_snapshot(cfg, &ckpt.snapshot())?;
    Ok((trainer, dataset))
}

/// Writes the stage's logs and checkpoints. `checkpoint.json` is the one the
/// stage keeps: the best for pretrain and augment, the last for pre-explore.
fn write_stage(dir: &Path, cfg: &TrainConfig, report: &StageReport, keep_last: bool) -> Result<()> {
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let best = Checkpoint::new(cfg, &report.best);
    let last = Checkpoint::new(cfg, &report.last);
    best.save(&dir.join("checkpoint-best.json"))?;
    last.save(&dir.join("checkpoint-last.json"))?;
    let kept = if keep_last { &last } else { &best };
    kept.save(&dir.join("checkpoint.json"))?;
    write_text(&dir.join("train_log.jsonl"), &report::train_log(&report.steps)?)?;
    write_text(&dir.join("eval_log.jsonl"), &report::eval_log(&report.evals)?)?;
    Ok(())
}

fn stage_line(name: &str, report: &StageReport, kept: &str) -> String {
    let snap = if kept == "best" { &report.best } else { &report.last };
    format!(
        "{name}: {} iterations, kept {kept} checkpoint at iteration {} (val-unseen SPL {:.4})\n",
        report.steps.len(),
        snap.iteration,
        snap.val_unseen_spl.unwrap_or(f64::NAN)
    )
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let mut say = |s: String| out.write_all(s.as_bytes()).map_err(|e| Error::Invalid(e.to_string()));
    match cmd {
        Command::GenData { common, out_dir } => {
            let cfg = resolve_config(&common, None)?;
            let ds = dataset_for(&cfg)?;
            write_dataset(&out_dir, &ds)?;
            write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
            say(format!(
                "wrote {} episodes over {} worlds to {}\n",
                ds.episodes.len(),
                ds.graphs.len(),
                out_dir.display()
            ))?;
        }
        Command::Pretrain { common, out_dir } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(n) = common.iterations {
                cfg.iterations = n;
            }
            let ds = dataset_for(&cfg)?;
            let mut trainer = Trainer::new(cfg.clone())?;
            let r = pretrain(&mut trainer, &ds)?;
            write_stage(&out_dir, &cfg, &r, false)?;
            say(stage_line("pretrain", &r, "best"))?;
        }
        Command::Augment {
            common,
            checkpoint,
            out_dir,
        } => {
            let (mut trainer, ds) = load_trainer(&common, &checkpoint)?;
            if let Some(n) = common.iterations {
                trainer.config.finetune_iterations = n;
            }
            let aug = augment_for(&trainer, &ds, false)?;
            write_text(&out_dir.join("augmented.jsonl"), &episodes_to_jsonl(&aug)?)?;
            let r = finetune_augmented(&mut trainer, &ds, &aug)?;
            write_stage(&out_dir, &trainer.config, &r, false)?;
            say(stage_line("augment", &r, "best"))?;
        }
        Command::PreExplore {
            common,
            checkpoint,
            out_dir,
        } => {
            let (mut trainer, ds) = load_trainer(&common, &checkpoint)?;
            if let Some(n) = common.iterations {
                trainer.config.pre_explore_iterations = n;
            }
            let aug = augment_for(&trainer, &ds, true)?;
            write_text(&out_dir.join("augmented.jsonl"), &episodes_to_jsonl(&aug)?)?;
            let r = pre_explore(&mut trainer, &ds, &aug)?;
            write_stage(&out_dir, &trainer.config, &r, true)?;
            say(stage_line("pre-explore", &r, "last"))?;
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            out_dir,
        } => {
            let (trainer, ds) = load_trainer(&common, &checkpoint)?;
            let (summary, results) =
                evaluate_split(&trainer.model, &trainer.store, &trainer.config, &ds, split)?;
            let table = report::summary_table("split", &[(split.to_string(), summary)]);
            if let Some(dir) = out_dir {
                let mut diags = Vec::new();
                for r in &results {
                    let ep = ds
                        .episodes
                        .iter()
                        .find(|e| e.id == r.episode_id)
                        .expect("evaluated episode exists");
                    diags.push(diagnose(&trainer.model, &trainer.store, ds.graph(ep.world_seed)?, ep)?);
                }
                write_text(&dir.join(format!("episodes_{split}.jsonl")), &report::episode_metrics_log(&results)?)?;
                write_text(&dir.join(format!("rollouts_{split}.jsonl")), &report::rollout_log(&diags, "argmax")?)?;
                write_text(&dir.join(format!("summary_{split}.txt")), &table)?;
            }
            say(table)?;
        }
        Command::Ablate { common, out_dir } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(n) = common.iterations {
                cfg.iterations = n;
            }
            let ds = dataset_for(&cfg)?;
            let table = run_ablation(&cfg, &ds)?;
            let text = report::ablation_text(&table);
            write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
            write_text(&out_dir.join("ablation.txt"), &text)?;
            write_text(&out_dir.join("ablation.csv"), &report::ablation_csv(&table))?;
            say(text)?;
        }
        Command::EmitPlots {
            common,
            run_dir,
            checkpoint,
            split,
        } => {
            let path = checkpoint.unwrap_or_else(|| run_dir.join("checkpoint.json"));
            let (trainer, ds) = load_trainer(&common, &path)?;
            let plots = run_dir.join("plots");
            let mut diags = Vec::new();
            for ep in ds.split(split).into_iter().take(PLOT_EPISODES) {
                let d = diagnose(&trainer.model, &trainer.store, ds.graph(ep.world_seed)?, ep)?;
                write_text(&plots.join(format!("attention_{}.csv", ep.id)), &report::attention_csv(&d))?;
                write_text(
                    &plots.join(format!("progress_matching_{}.csv", ep.id)),
                    &report::diagnostics_csv(&d),
                )?;
                diags.push(d);
            }
            write_text(&plots.join("rollouts.jsonl"), &report::rollout_log(&diags, "argmax")?)?;
            let log = run_dir.join("train_log.jsonl");
            if log.exists() {
                let records = report::parse_train_log(&read_text(&log)?)?;
                write_text(&plots.join("training_curve.csv"), &report::training_curve_csv(&records))?;
            }
            say(format!("wrote plots for {} episodes to {}\n", diags.len(), plots.display()))?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
