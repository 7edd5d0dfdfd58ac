//! `nic`: preprocessing, training, captioning, classification and METEOR
//! evaluation from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "nic", version, about = "Caption and classify images from precomputed features")]
struct Cli {
    /// Seed for every random choice (splits, initialization, shuffling, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation and scoring.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary file from the captions of a manifest.
    Preprocess(PreprocessArgs),
    /// Train (or resume training) a model and write a checkpoint each epoch.
    Train(TrainArgs),
    /// Caption one feature file.
    Caption(CaptionArgs),
    /// Classify one feature file as anomaly or normal.
    Classify(ClassifyArgs),
    /// Caption and classify the test split of a manifest and report METEOR.
    Evaluate(EvaluateArgs),
    /// Score a hypothesis file against a reference file.
    ScoreMeteor(ScoreArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Check manifest captions against the captioning instructions.
    Lint(LintArgs),
    /// Write a synthetic manifest with feature files.
    GenerateFixture(FixtureArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_freq: usize,
    #[arg(long, default_value_t = 14)]
    max_len: usize,
    #[arg(long)]
    vocab_out: PathBuf,
    /// Drop over-long captions before counting words, or count them too.
    #[arg(long, value_enum, default_value_t = FilterOrderArg::LengthFirst)]
    filter_order: FilterOrderArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FilterOrderArg {
    LengthFirst,
    VocabFirst,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeadsArg {
    Joint,
    Caption,
    Classifier,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Written after every epoch; read first when resuming.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Continue from the epoch count stored in the checkpoint. The model
    /// shape, dropout and λ then come from the checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Weight of the classifier loss.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 14)]
    max_len: usize,
    /// Fraction of unassigned records that go to training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Fraction of the training bucket held out for validation losses.
    #[arg(long, default_value_t = 0.0)]
    val_fraction: f64,
    #[arg(long, default_value_t = 512)]
    embed_dim: usize,
    #[arg(long, default_value_t = 512)]
    hidden_dim: usize,
    #[arg(long, num_args = 2, value_names = ["H1", "H2"], default_values_t = [256, 64])]
    classifier_hidden: Vec<usize>,
    /// Global gradient-norm threshold; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, value_enum, default_value_t = HeadsArg::Joint)]
    heads: HeadsArg,
}

#[derive(Args, Debug)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    feature: PathBuf,
    /// Beam width; 1 is greedy decoding.
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Defaults to the length the model was trained with.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    feature: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Synonym groups, one per line.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long)]
    max_len: Option<usize>,
    /// Must match the fraction used for training to recover its test split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Evaluate every record instead of the test split.
    #[arg(long)]
    all: bool,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// One hypothesis per line.
    #[arg(long)]
    hyp: PathBuf,
    /// One line per hypothesis; several references are separated by tabs.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 11)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 8)]
    hidden_dim: usize,
    /// Words in the random target caption.
    #[arg(long, default_value_t = 4)]
    caption_len: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Corrupt one analytic gradient; the check must then fail.
    #[arg(long)]
    inject_bug: bool,
}

#[derive(Args, Debug)]
struct LintArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    records: usize,
    #[arg(long, default_value_t = 2048)]
    feature_dim: usize,
    /// Alternatives per grammar slot, at most 6.
    #[arg(long, default_value_t = 6)]
    vocab_words: usize,
    /// Overwrite an existing manifest in the output directory.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
