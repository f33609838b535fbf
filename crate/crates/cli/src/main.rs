mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

/// Content-aware text-logo layout synthesis.
#[derive(Parser, Debug)]
#[command(name = "logoforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a layout model on a dataset or a synthetic corpus.
    Train(TrainArgs),
    /// Sample layout candidates for a text from a checkpoint.
    Sample(SampleArgs),
    /// Score a checkpoint or a rule baseline on a held-out split.
    Eval(EvalArgs),
    /// Render a layout JSON file for a text.
    Compose(ComposeArgs),
    /// Serve the HTTP API used by the studio.
    Serve(ServeArgs),
}

/// Where records come from. `--data` and `--synthetic` are exclusive.
#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Dataset directory containing an `index.jsonl`.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a synthetic corpus with this many records instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Held-out fraction for the test split.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Abort on the first invalid dataset record instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for checkpoints, metrics and samples.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Overlap penalty weight.
    #[arg(long)]
    lambda_ol: Option<f64>,
    /// Learning rate for both players.
    #[arg(long)]
    lr: Option<f64>,
    /// Start from the small CPU preset instead of the full-size defaults.
    #[arg(long)]
    toy: bool,
    /// Ablation switch (no_text, no_img, no_seq_dis, no_img_dis); repeatable.
    #[arg(long)]
    ablation: Vec<String>,
    /// Pretrained character embeddings (text, one `unit v1 v2 ...` per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long)]
    font: Option<String>,
    /// Directory of extra `.ttf`/`.otf` fonts.
    #[arg(long)]
    font_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate; not needed with `--baseline`.
    #[arg(long, required_unless_present = "baseline")]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate a rule baseline (a, b or c) instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    baseline: Option<String>,
    /// Ablation the checkpoint was trained with; checked and used as the row label.
    #[arg(long)]
    ablation: Option<String>,
    /// Seed for the corpus split and the sampling noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    #[arg(long)]
    text: String,
    /// Layout JSON (`{"canvas":[W,H],"boxes":[[x_c,y_c,w,h],...]}`).
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    font: Option<String>,
    #[arg(long)]
    font_dir: Option<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    #[arg(long)]
    font_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compose(a) => commands::compose(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                eprintln!("{}", Cli::command().render_usage());
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
