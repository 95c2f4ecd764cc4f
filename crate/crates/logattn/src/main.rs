use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use logattn::commands::{
    self, CommandError, CompareArgs, DumpArgs, EvalArgs, GradcheckArgs, Precision, SynthArgs, TrainArgs,
};
use logattn_core::detector::{TrainConfig, DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_THRESHOLD, DEFAULT_SEED};

/// Log attention small-object detection toolkit.
#[derive(Debug, Parser)]
#[command(name = "logattn", version)]
struct Cli {
    /// Seed for data generation, initialization and splitting.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory receiving every artifact (created if absent).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Floating-point precision for training and inference.
    #[arg(long, global = true, value_enum, default_value_t = PrecisionArg::F64)]
    precision: PrecisionArg,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// Weight of the objectness term in the loss.
    #[arg(long, default_value_t = 1.0)]
    obj_weight: f64,
    /// Weight of the box regression term in the loss.
    #[arg(long, default_value_t = 1.0)]
    box_weight: f64,
    /// Clip the joint gradient norm of each batch to this value; 0 disables clipping.
    #[arg(long, default_value_t = logattn_core::detector::DEFAULT_MAX_GRAD_NORM)]
    max_grad_norm: f64,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: DEFAULT_SEED,
            objectness_loss_weight: self.obj_weight,
            box_loss_weight: self.box_weight,
            max_grad_norm: (self.max_grad_norm != 0.0).then_some(self.max_grad_norm),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (P5/P6 images, VOC XML, manifest).
    Synth {
        /// JSON scene spec; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
    /// Train a detector on a manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// log, sigmoid, softmax or none.
        #[arg(long, default_value = "none")]
        attention: String,
        /// Comma-separated stage indices receiving attention; pass an empty
        /// value for none. Defaults to stage 2 when attention is set.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        stages: Option<String>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Evaluate weights on a manifest (or replay ground truth without --weights).
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
        conf_thresh: f64,
        #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
        nms_thresh: f64,
        /// Also report AP averaged over IoU 0.50:0.05:0.95.
        #[arg(long)]
        sweep: bool,
    },
    /// Check the attention gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Sample interval as lo:hi.
        #[arg(long, default_value = "0.01:10", allow_hyphen_values = true)]
        range: String,
    },
    /// Train and evaluate several attention variants over several seeds.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long, default_value = "log,none")]
        attention_list: String,
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        stages: Option<String>,
        /// Fraction of images used for training; the rest is validation.
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
        conf_thresh: f64,
        #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
        nms_thresh: f64,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Size-bin statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write per-channel activation maps of one stage as P5 images.
    DumpActivations {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        stage: usize,
    },
}

fn run(cli: Cli) -> Result<String, CommandError> {
    let global = commands::Global {
        seed: cli.seed,
        out_dir: cli.out_dir,
        precision: match cli.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
    };
    let stages = |s: Option<String>| s.as_deref().map(commands::parse_stages).transpose();
    match cli.command {
        Command::Synth { spec, n } => commands::cmd_synth(&global, &SynthArgs { spec, n }),
        Command::Train {
            data,
            attention,
            stages: st,
            train,
        } => commands::cmd_train(
            &global,
            &TrainArgs {
                data,
                attention: commands::parse_attention(&attention)?,
                stages: stages(st)?,
                config: train.config(),
            },
        ),
        Command::Eval {
            weights,
            data,
            iou_thresh,
            conf_thresh,
            nms_thresh,
            sweep,
        } => commands::cmd_eval(
            &global,
            &EvalArgs {
                weights,
                data,
                iou_threshold: iou_thresh,
                conf_threshold: conf_thresh,
                nms_threshold: nms_thresh,
                sweep,
            },
        ),
        Command::Gradcheck { samples, eps, range } => commands::cmd_gradcheck(
            &global,
            &GradcheckArgs {
                samples,
                eps,
                range: commands::parse_range(&range)?,
            },
        ),
        Command::Compare {
            data,
            seeds,
            attention_list,
            stages: st,
            train_ratio,
            iou_thresh,
            conf_thresh,
            nms_thresh,
            train,
        } => commands::cmd_compare(
            &global,
            &CompareArgs {
                data,
                seeds: commands::parse_seeds(&seeds)?,
                attention: attention_list
                    .split(',')
                    .map(commands::parse_attention)
                    .collect::<Result<_, _>>()?,
                stages: stages(st)?,
                train_ratio,
                config: train.config(),
                conf_threshold: conf_thresh,
                nms_threshold: nms_thresh,
                iou_threshold: iou_thresh,
            },
        ),
        Command::Stats { data } => commands::cmd_stats(&global, &data),
        Command::DumpActivations { weights, image, stage } => {
            commands::cmd_dump_activations(&global, &DumpArgs { weights, image, stage })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let quiet = cli.quiet;
    match run(cli) {
        Ok(text) => {
            if !quiet {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
