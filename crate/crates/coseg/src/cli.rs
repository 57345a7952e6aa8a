//! Command-line interface.
//!
//! Exit codes: 0 success, 1 validation or contract failure (including bad
//! flags), 2 I/O or parse failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use coseg_core::episodes::Scheme;
use coseg_core::gradcheck::{full_model_check, GradCheckDims, REL_TOL};
use coseg_core::synth::{generate_synthetic_dataset, SynthConfig};
use coseg_core::CoreError;

use crate::checkpoint::{load_checkpoint, ConfigFile};
use crate::dataset::{write_synth_dataset, LoadedDataset};
use crate::error::{Error, Result};
use crate::manifest::{load_class_list, write_folds};
use crate::render::{episode_for_line, render_episode};
use crate::runner::{eval_runs_with, train_run, write_report};

#[derive(Debug, Parser)]
#[command(
    name = "coseg",
    about = "Few-shot segmentation with word-embedding-guided co-attention",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a class list into benchmark folds and write folds.json.
    SplitFolds(SplitFoldsArgs),
    /// Generate a synthetic episodic dataset.
    GenSynth(GenSynthArgs),
    /// Verify model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train on a fold's train split for a fixed number of iterations.
    Train(TrainArgs),
    /// Evaluate a checkpoint over seeded runs on a fold's test split.
    Eval(EvalArgs),
    /// Render support / ground truth / prediction panels for one episode.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct SplitFoldsArgs {
    /// Fold scheme: pascal, vos or synth.
    #[arg(long)]
    scheme: String,
    /// Class list file, one label per line.
    #[arg(long)]
    classes: PathBuf,
    /// Output folds.json path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Number of classes.
    #[arg(long)]
    classes: usize,
    /// Items per class.
    #[arg(long)]
    per_class: usize,
    /// Add a distractor blob of the partner class to every item.
    #[arg(long)]
    two_object: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory (must not exist).
    #[arg(long)]
    out: PathBuf,
    /// Nominal image (mask) side; features are generated at size/4.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Feature channels.
    #[arg(long, default_value_t = 12)]
    channels: usize,
    /// Word-embedding dimension of the generated table.
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dimensions as C,WH,d (feature channels, locations, semantic dim).
    #[arg(long)]
    dims: Option<String>,
    /// Number of consecutive seeds to check, starting at --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory (from gen-synth or hand-built).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    fold: usize,
    /// JSON model config.
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint directory (must not exist).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    fold: usize,
    /// Checkpoint directory to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON output path.
    #[arg(long)]
    report: PathBuf,
    /// Episodes per run; defaults to the checkpoint config's value.
    #[arg(long)]
    episodes: Option<usize>,
    /// Average per-episode IoUs within each class instead of pooling
    /// counts (sensitivity analysis).
    #[arg(long)]
    per_episode: bool,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    /// 1-based manifest line of the query item.
    #[arg(long)]
    episode: usize,
    #[arg(long)]
    ckpt: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outputs; anything else is a
            // usage failure (exit 1) with the rendered message.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SplitFolds(args) => split_folds(args),
        Command::GenSynth(args) => gen_synth(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Render(args) => render_cmd(args),
    }
}

fn split_folds(args: SplitFoldsArgs) -> Result<()> {
    let scheme = Scheme::parse(&args.scheme).map_err(Error::Core)?;
    let classes = load_class_list(&args.classes)?;
    let folds = coseg_core::episodes::make_folds(&classes, scheme).map_err(Error::Core)?;
    write_folds(&args.out, scheme, &classes, &folds)?;
    println!(
        "wrote {} folds ({} test classes each) to {}",
        folds.len(),
        folds[0].test_classes.len(),
        args.out.display()
    );
    Ok(())
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let ds = generate_synthetic_dataset(SynthConfig {
        n_classes: args.classes,
        items_per_class: args.per_class,
        image_size: args.size,
        channels: args.channels,
        embed_dim: args.embed_dim,
        two_object: args.two_object,
        seed: args.seed,
    })
    .map_err(Error::Core)?;
    write_synth_dataset(&args.out, &ds)?;
    println!(
        "wrote {} items ({} classes x {}) to {}",
        ds.items.len(),
        args.classes,
        args.per_class,
        args.out.display()
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let dims = match &args.dims {
        None => GradCheckDims::default(),
        Some(text) => parse_dims(text)?,
    };
    if args.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;
    for seed in args.seed..args.seed + args.seeds {
        let report = full_model_check(dims, seed).map_err(Error::Core)?;
        if report.max_rel_err > worst {
            worst = report.max_rel_err;
            worst_param = report.worst_param.clone();
        }
        checked += report.n_checked;
    }
    println!(
        "gradcheck: {} seeds, {} gradient elements, max relative error {:.3e} (worst at {})",
        args.seeds, checked, worst, worst_param
    );
    if worst > REL_TOL {
        return Err(Error::Core(CoreError::Contract(format!(
            "max relative error {worst:.3e} exceeds tolerance {REL_TOL:.0e}"
        ))));
    }
    println!("PASS (tolerance {REL_TOL:.0e})");
    Ok(())
}

fn parse_dims(text: &str) -> Result<GradCheckDims> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Usage(format!("--dims expects C,WH,d; got {text:?}")));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::Usage(format!("--dims {what} component {s:?}: {e}")))
    };
    Ok(GradCheckDims {
        channels: parse(parts[0], "C")?,
        locations: parse(parts[1], "WH")?,
        embed_dim: parse(parts[2], "d")?,
    })
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let scheme = Scheme::parse(&args.scheme).map_err(Error::Core)?;
    let config = ConfigFile::load(&args.config)?;
    let data = LoadedDataset::open(&args.data)?;
    let outcome = train_run(&data, scheme, args.fold, &config, &args.out)?;
    let first = outcome.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained fold {} for {} iterations (loss {first:.4} -> {last:.4}); checkpoint at {}",
        args.fold,
        outcome.loss_trace.len(),
        args.out.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let scheme = Scheme::parse(&args.scheme).map_err(Error::Core)?;
    let (config, model, set) = load_checkpoint(&args.ckpt)?;
    let data = LoadedDataset::open(&args.data)?;
    let episodes = args.episodes.unwrap_or(config.eval_episodes);
    let aggregation = if args.per_episode {
        coseg_core::metrics::PerClassAggregation::PerEpisode
    } else {
        coseg_core::metrics::PerClassAggregation::Dataset
    };
    let report = eval_runs_with(
        &data,
        scheme,
        args.fold,
        &model,
        &set,
        args.runs,
        args.seed,
        episodes,
        aggregation,
    )?;
    write_report(&args.report, &report)?;
    println!(
        "eval fold {}: mean-IoU {:.4} (stddev {:.4}), binary-IoU {:.4} over {} runs -> {}",
        args.fold,
        report.summary.mean_iou.mean,
        report.summary.mean_iou.stddev,
        report.summary.binary_iou.mean,
        report.summary.runs,
        args.report.display()
    );
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    let (_config, model, set) = load_checkpoint(&args.ckpt)?;
    let data = LoadedDataset::open(&args.data)?;
    let episode = episode_for_line(&data, args.episode)?;
    render_episode(&data, &model, &set, &episode, &args.out)?;
    println!(
        "rendered episode (class {:?}, query line {}) to {}",
        episode.class_label,
        args.episode,
        args.out.display()
    );
    Ok(())
}
