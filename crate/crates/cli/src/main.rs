//! `dctaug` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_blocks, DropoutSetting, RunConfig};
use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(
    name = "dctaug",
    version,
    about = "DCT-threshold augmentation, distortion and evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and write checkpoint.bin, train_log.jsonl and run_config.json.
    Train(TrainArgs),
    /// Score a checkpoint on clean and distorted test data; writes report.json and CSVs.
    Eval(EvalArgs),
    /// Side-by-side table of two eval reports.
    Compare(CompareArgs),
    /// Apply random DCT thresholding to an image or dataset.
    Augment(AugmentArgs),
    /// Apply one distortion to an image or dataset.
    Distort(DistortArgs),
    /// DCT utilities.
    Dct {
        #[command(subcommand)]
        command: DctCommand,
    },
}

#[derive(Subcommand, Debug)]
enum DctCommand {
    /// Print the coefficient magnitudes of one image channel.
    Inspect(InspectArgs),
}

/// Flags shared by `train` and `eval`; each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registered dataset name (cifar10-subset) or path.
    #[arg(long)]
    dataset: Option<String>,
    /// cifar-binary, cifar100-binary, idx or image-directory.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

impl CommonArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            config.data.dataset = d.clone();
        }
        if let Some(f) = &self.format {
            config.data.format = Some(f.clone());
        }
        if let Some(t) = self.threads {
            config.threads = t;
        }
        if self.deterministic {
            config.deterministic = true;
        }
        if let Some(o) = &self.out {
            config.output.dir = Some(o.clone());
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// dct or none.
    #[arg(long)]
    augment: Option<String>,
    #[arg(long)]
    threshold_min: Option<u32>,
    #[arg(long)]
    threshold_max: Option<u32>,
    /// adaptive or a fixed probability.
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Filters per conv block, e.g. 32,32/64,64.
    #[arg(long)]
    conv_blocks: Option<String>,
    #[arg(long)]
    hidden_units: Option<usize>,
}

impl TrainArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = RunConfig::load(self.common.config.as_deref())?;
        self.common.apply(&mut c);
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(a) = &self.augment {
            c.train.augment = a.clone();
        }
        if let Some(v) = self.threshold_min {
            c.train.threshold_min = v;
        }
        if let Some(v) = self.threshold_max {
            c.train.threshold_max = v;
        }
        if let Some(d) = &self.dropout {
            c.train.dropout = DropoutSetting::parse(d)?;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            c.train.momentum = v;
        }
        if let Some(b) = &self.conv_blocks {
            c.network.conv_blocks = parse_blocks(b)?;
        }
        if let Some(h) = self.hidden_units {
            c.network.hidden_units = h;
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Distortion seed.
    #[arg(long)]
    seed: Option<u64>,
    /// small (32x32) or large.
    #[arg(long)]
    profile: Option<String>,
    /// Comma-separated families; empty for clean accuracy only.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    families: Option<Vec<String>>,
    /// Row label in report.csv.
    #[arg(long, default_value = "model")]
    name: String,
    /// Also write every distorted test set under this directory.
    #[arg(long)]
    materialize: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// First report.json.
    a: PathBuf,
    /// Second report.json.
    b: PathBuf,
    /// Row labels, e.g. clean,dct.
    #[arg(long, value_delimiter = ',')]
    names: Option<Vec<String>>,
    /// Directory for comparison.json and table.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// PPM/PGM image or dataset.
    #[arg(long)]
    input: PathBuf,
    /// Image file, `.bin` CIFAR file or directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 0)]
    threshold_min: u32,
    #[arg(long, default_value_t = 50)]
    threshold_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epoch index mixed into every draw.
    #[arg(long, default_value_t = 1)]
    epoch: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Manifest path (defaults next to the output).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DistortArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// gaussian-noise, salt-pepper, speckle, gaussian-blur or motion-blur.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    level: f64,
    #[arg(long, default_value = "small")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// PPM/PGM image.
    image: PathBuf,
    /// Bare M x N CSV of |coefficient| values.
    #[arg(long)]
    csv: bool,
    #[arg(long, default_value_t = 0)]
    channel: usize,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            commands::train(&config, args.common.quiet)
        }
        Command::Eval(args) => {
            let mut config = RunConfig::load(args.common.config.as_deref())?;
            let dataset_given = args.common.dataset.is_some() || args.common.config.is_some();
            args.common.apply(&mut config);
            if let Some(s) = args.seed {
                config.eval.seed = Some(s);
            }
            if let Some(p) = &args.profile {
                config.eval.profile = p.clone();
            }
            if let Some(f) = &args.families {
                config.eval.families = f.iter().filter(|s| !s.is_empty()).cloned().collect();
            }
            commands::eval(&commands::EvalRequest {
                config,
                dataset_given,
                checkpoint: args.checkpoint,
                name: args.name,
                materialize: args.materialize,
                quiet: args.common.quiet,
            })
        }
        Command::Compare(args) => commands::compare(&args.a, &args.b, args.names.as_deref(), args.out.as_deref()),
        Command::Augment(args) => commands::augment(&commands::AugmentRequest {
            input: args.input,
            output: args.output,
            format: args.format,
            threshold_min: args.threshold_min,
            threshold_max: args.threshold_max,
            seed: args.seed,
            epoch: args.epoch,
            threads: args.threads.unwrap_or(1),
            manifest: args.manifest,
        }),
        Command::Distort(args) => commands::distort(&commands::DistortRequest {
            input: args.input,
            output: args.output,
            format: args.format,
            kind: args.kind,
            level: args.level,
            profile: args.profile,
            seed: args.seed,
            threads: args.threads.unwrap_or(1),
            manifest: args.manifest,
        }),
        Command::Dct {
            command: DctCommand::Inspect(args),
        } => commands::inspect(&args.image, args.channel, args.csv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
