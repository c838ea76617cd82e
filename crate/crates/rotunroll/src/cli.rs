//! Command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing data,
//! 4 corrupt or unsupported file.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{CommandFactory, Parser, Subcommand};
use rotunroll_core::data::{generate_rot_mnist, Split};
use rotunroll_core::network::{count_parameters_for, Model, NetworkConfig};
use rotunroll_core::optim::OptimizerKind;

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, PartialTrainConfig};
use crate::datasets::{
    self, resolve_data_dir, rot_mnist_file, rot_mnist_seed, save_dataset, DATA_DIR_ENV, ROT_MNIST_SEED,
};
use crate::error::{Error, Result};
use crate::export::filter_grid;
use crate::run::{evaluate_checked, load_limited, metrics_path, train_to_files};

fn parse_model(s: &str) -> std::result::Result<Model, String> {
    s.parse().map_err(|e: rotunroll_core::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    s.parse().map_err(|e: rotunroll_core::Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: rotunroll_core::Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "rotunroll",
    version,
    about = "Rotation-equivariant unrolled sparse-coding networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a metrics CSV beside it.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print accuracy, loss and code sparsity.
    Eval(EvalArgs),
    /// Write the expanded filter bank of one layer as a PGM/PPM grid.
    ExportFilters(ExportArgs),
    /// Generate rot-MNIST train and test files from MNIST.
    GenRotmnist(GenArgs),
    /// Print the trainable-parameter breakdown of a model.
    ParamCount(ParamArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// baseline, r90, r60, dense-baseline, dense-r90 or dense-r60.
    #[arg(long, value_parser = parse_model)]
    pub model: Option<Model>,
    /// mnist, rot-mnist or cifar10.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// Dataset for the per-epoch test accuracy (defaults to --dataset).
    #[arg(long)]
    pub eval_dataset: Option<DatasetKind>,
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// adam or sgd-momentum.
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Train on the first N images only.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Evaluate on the first N test images only.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; metrics go to the same path with a .csv extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: DatasetKind,
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// train or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Evaluate on the first N images only.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Layer index in [0, L).
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels between tiles.
    #[arg(long, default_value_t = 1)]
    pub separator: usize,
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    /// Directory holding mnist/.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Train split seed; the test split uses seed + 1.
    #[arg(long, default_value_t = ROT_MNIST_SEED)]
    pub seed: u64,
    /// Output directory (defaults to the data directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ParamArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: Model,
    #[arg(long)]
    pub dataset: DatasetKind,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, Error::Usage(_)) {
                let _ = writeln!(err, "\n{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::ExportFilters(a) => cmd_export(a, out),
        Command::GenRotmnist(a) => cmd_gen(a, out),
        Command::ParamCount(a) => cmd_param_count(a, out),
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let file = match &a.config {
        Some(p) => PartialTrainConfig::load(p)?,
        None => PartialTrainConfig::default(),
    };
    let flags = PartialTrainConfig {
        model: a.model,
        dataset: a.dataset,
        eval_dataset: a.eval_dataset,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        seed: a.seed,
        train_limit: a.train_limit,
        test_limit: a.test_limit,
    };
    let cfg = file.overridden_by(flags).resolve()?;
    let data_dir = resolve_data_dir(a.data_dir.as_deref());
    writeln!(out, "{}", crate::run::METRICS_HEADER).map_err(io_err)?;
    let mut write_err = None;
    let outcome = train_to_files(&cfg, &data_dir, &a.out, |m| {
        let line = format!(
            "{},{:.6},{:.4},{:.4},{:.4},{:.4}",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.sparsity, m.stability_margin
        );
        if let Err(e) = writeln!(out, "{line}").and_then(|()| out.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    for w in &outcome.warnings {
        writeln!(err, "warning: {w}").map_err(io_err)?;
    }
    writeln!(err, "wrote {} and {}", a.out.display(), metrics_path(&a.out).display()).map_err(io_err)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if a.batch_size == 0 {
        return Err(Error::Usage("--batch-size must be at least 1".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let want = ck.net.config().input;
    let have = a.dataset.geometry().input();
    if want != have {
        return Err(Error::Mismatch(format!(
            "checkpoint expects {}×{}×{} inputs but {} images are {}×{}×{}",
            want[0], want[1], want[2], a.dataset, have[0], have[1], have[2]
        )));
    }
    let data_dir = resolve_data_dir(a.data_dir.as_deref());
    let (data, warnings) = load_limited(a.dataset, a.split, &data_dir, a.limit)?;
    for w in &warnings {
        writeln!(err, "warning: {w}").map_err(io_err)?;
    }
    let e = evaluate_checked(&ck.net, &data, a.batch_size)?;
    writeln!(out, "accuracy {:.4}", e.accuracy).map_err(io_err)?;
    writeln!(out, "loss {:.6}", e.mean_loss).map_err(io_err)?;
    writeln!(out, "sparsity {:.4}", e.mean_sparsity).map_err(io_err)?;
    Ok(())
}

fn cmd_export(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let layers = ck.net.config().num_layers();
    if a.layer >= layers {
        return Err(Error::Usage(format!(
            "--layer {} out of range; the network has {layers} layers",
            a.layer
        )));
    }
    let img = filter_grid(ck.net.layer_bank(a.layer), a.separator)?;
    img.save(&a.out)?;
    writeln!(
        out,
        "wrote {} ({}×{}, {} rows × {} columns)",
        a.out.display(),
        img.width,
        img.height,
        ck.net.config().num_basis,
        ck.net.config().order
    )
    .map_err(io_err)?;
    Ok(())
}

fn cmd_gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let data_dir = resolve_data_dir(a.data_dir.as_deref());
    let out_dir = a.out.unwrap_or_else(|| data_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    for split in [Split::Train, Split::Test] {
        let (base, _) = datasets::load(DatasetKind::Mnist, split, &data_dir)?;
        let seed = rot_mnist_seed(a.seed, split);
        let rotated = generate_rot_mnist(&base, seed)?;
        let path = rot_mnist_file(&out_dir, split);
        save_dataset(&rotated, &path)?;
        writeln!(out, "wrote {} ({} images, seed {seed})", path.display(), rotated.len()).map_err(io_err)?;
    }
    Ok(())
}

fn cmd_param_count(a: ParamArgs, out: &mut dyn Write) -> Result<()> {
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        let cfg = NetworkConfig::preset(a.model, a.dataset.geometry());
        let c = count_parameters_for(&cfg);
        let (n, _) = cfg.kernel;
        writeln!(out, "model {} on {}", a.model, a.dataset)?;
        writeln!(
            out,
            "filters {} ({} basis × {} channels × {n}×{n} × {} banks, {} rotations each)",
            c.filters,
            cfg.num_basis,
            cfg.input[0],
            if cfg.tied { 1 } else { cfg.num_layers() },
            cfg.order
        )?;
        writeln!(out, "batchnorm {}", c.batchnorm)?;
        writeln!(out, "head {}", c.head)?;
        writeln!(out, "total {}", c.total)
    };
    write(out).map_err(io_err)
}
