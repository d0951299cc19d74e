use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tta_core::data_io::SynthConfig;
use tta_core::{Strategy, StrategyConfig};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "tta", version, about = "Online test-time adaptation for frozen binary detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic source/target benchmark as raw FTS1 streams.
    Synth(SynthArgs),
    /// Train the linear base detector on a labeled source stream.
    TrainBase(TrainBaseArgs),
    /// Run a frozen detector over a raw stream, producing (feature, logits) records.
    Extract(ExtractArgs),
    /// Adapt over a feature stream and report per-sample scores.
    Run(RunArgs),
    /// Compare the four component variants over several seeds.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "TTA_SEED", default_value_t = 0)]
    seed: u64,
    /// Feature dimension (the cluster layout needs at least 4).
    #[arg(long, default_value_t = SynthConfig::DEFAULT_D, value_parser = layout_dim)]
    d: usize,
    #[arg(long, default_value_t = SynthConfig::DEFAULT_N_SOURCE, value_parser = positive)]
    n_source: usize,
    #[arg(long, default_value_t = SynthConfig::DEFAULT_N_TARGET, value_parser = positive)]
    n_target: usize,
    #[arg(long, default_value_t = SynthConfig::DEFAULT_SHIFT)]
    shift: f64,
    #[arg(long, default_value_t = SynthConfig::DEFAULT_NOVEL_WEIGHT, value_parser = unit_interval)]
    novel_weight: f64,
}

#[derive(Args, Debug)]
struct TrainBaseArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, env = "TTA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct StrategyArgs {
    #[arg(long = "n-m", default_value_t = 1000, value_parser = positive)]
    n_m: usize,
    #[arg(long = "n-t", default_value_t = 5, value_parser = positive)]
    n_t: usize,
    /// Revised feature dimension (default d/2).
    #[arg(long = "d-t", value_parser = positive)]
    d_t: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    conf: f64,
    #[arg(long = "n-f", default_value_t = 16)]
    n_f: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long = "k-s", default_value_t = 1, value_parser = positive)]
    k_s: usize,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    batch: usize,
    #[arg(long, env = "TTA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_lcpc_train: bool,
    #[arg(long)]
    no_nfc: bool,
    #[arg(long)]
    predict_after_update: bool,
    /// Also backpropagate through the neighbor predictions of the consistency term.
    #[arg(long)]
    nfc_grad_through_neighbors: bool,
    /// Clear Adam moments at the start of every batch.
    #[arg(long)]
    reset_optimizer: bool,
    /// Use one fixed identity transform instead of the learned ensemble.
    #[arg(long)]
    identity_transform: bool,
}

impl StrategyArgs {
    fn config(&self, strategy: Strategy) -> StrategyConfig {
        StrategyConfig {
            strategy,
            n_m: self.n_m,
            n_t: self.n_t,
            d_t: self.d_t,
            n_f: self.n_f,
            conf: self.conf,
            alpha: self.alpha,
            lr: self.lr,
            k_s: self.k_s,
            batch_size: self.batch,
            seed: self.seed,
            enable_lcpc_training: !self.no_lcpc_train,
            enable_nfc: !self.no_nfc,
            predict_after_update: self.predict_after_update,
            nfc_grad_through_neighbors: self.nfc_grad_through_neighbors,
            reset_optimizer_per_batch: self.reset_optimizer,
            identity_transform: self.identity_transform,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// FTS1 stream, or CSV when the name ends in `.csv`.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value = "ours", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value = "tta-run")]
    out: PathBuf,
    #[command(flatten)]
    params: StrategyArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Engine seeds `seed .. seed + repeats`.
    #[arg(long, default_value_t = 5, value_parser = positive)]
    repeats: usize,
    #[arg(long, default_value = "tta-ablate")]
    out: PathBuf,
    #[command(flatten)]
    params: StrategyArgs,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn layout_dim(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 4 => Ok(v),
        Ok(_) => Err("the synthetic layout needs at least 4 dimensions".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: tta_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TrainBase(a) => commands::train_base(a),
        Command::Extract(a) => commands::extract(a),
        Command::Run(a) => commands::run(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
