use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bertdesk",
    version,
    about = "Desk-scale BERT/ALBERT pretraining, fine-tuning and evaluation",
    after_help = "Every subcommand accepts --config FILE with flat key=value settings named after its long flags; \
                  flags given on the command line win. Each run writes a resolved-config file echoing all effective settings."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train or apply a WordPiece vocabulary.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Inspect a pretraining corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Build masked-LM / next-sentence examples.
    #[command(subcommand, name = "pretrain-data")]
    PretrainData(PretrainDataCommand),
    /// Pretrain an encoder from a run config.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained encoder on a downstream task.
    Finetune(FinetuneArgs),
    /// Score predictions against gold data.
    Evaluate(EvaluateArgs),
    /// Label a dataset with a fine-tuned model.
    Predict(PredictArgs),
    /// Generate a deterministic synthetic corpus or task dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCommand {
    /// Learn a vocabulary from a corpus.
    Train(TokenizerTrainArgs),
    /// Encode stdin, one sentence per line.
    Encode(TokenizerEncodeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Block, sentence and pair counts.
    Stats(CorpusStatsArgs),
}

#[derive(Debug, Subcommand)]
pub enum PretrainDataCommand {
    /// Write a binary example file.
    Build(PretrainDataArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key=value settings file; keys are long flag names.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the resolved settings [default: next to the main output].
    #[arg(long, value_name = "FILE")]
    pub resolved_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CasingArg {
    Cased,
    Uncased,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    /// Blank lines separate blocks; one sentence per line.
    BlankLineBlocks,
    /// One document per line, split into sentences.
    OneDocPerLine,
}

impl From<FormatArg> for bertdesk::corpus::CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::BlankLineBlocks => Self::BlankLineBlocks,
            FormatArg::OneDocPerLine => Self::OneDocPerLine,
        }
    }
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    /// Corpus text file.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "blank-line-blocks")]
    pub format: FormatArg,
    /// Target vocabulary size, special tokens included.
    #[arg(long)]
    pub vocab_size: usize,
    #[arg(long, value_enum, default_value = "uncased")]
    pub casing: CasingArg,
    /// Vocabulary file to write (one token per line).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct TokenizerEncodeArgs {
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Print token<TAB>word index lines instead of ids.
    #[arg(long)]
    pub show_alignment: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CorpusStatsArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "blank-line-blocks")]
    pub format: FormatArg,
    /// Print a flat JSON object instead of key: value lines.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct PretrainDataArgs {
    /// Corpus text file.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "blank-line-blocks")]
    pub format: FormatArg,
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    /// Copies of the pair list, each masked independently.
    #[arg(long, default_value_t = 1)]
    pub dupe_factor: usize,
    /// Negative pairs per positive pair.
    #[arg(long, default_value_t = 1.0)]
    pub negatives: f64,
    /// Share of maskable tokens selected for prediction.
    #[arg(long, default_value_t = 0.15)]
    pub mask_prob: f64,
    #[arg(long)]
    pub seed: u64,
    /// Binary example file to write.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Also write a human-readable dump of every example.
    #[arg(long, value_name = "FILE")]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Training config: model.*, phaseN.{max_len,batch,steps,lr,warmup}, seed, workers, ...
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Example files, one per phase.
    #[arg(long, value_name = "FILE", num_args = 1.., value_delimiter = ',', required = true)]
    pub examples: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Output directory for checkpoints, loss log and transcript.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Stop after this many steps (a checkpoint is written).
    #[arg(long)]
    pub stop_after: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub resolved_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Ner,
    Pos,
    Srl,
    Sentiment,
    Mlc,
    Sts,
}

impl TaskArg {
    pub fn name(self) -> &'static str {
        match self {
            TaskArg::Ner => "ner",
            TaskArg::Pos => "pos",
            TaskArg::Srl => "srl",
            TaskArg::Sentiment => "sentiment",
            TaskArg::Mlc => "mlc",
            TaskArg::Sts => "sts",
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Dev set used to pick the best epoch.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Pretrained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Fraction of all steps spent warming up.
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    /// Dropout before the task head.
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    #[arg(long)]
    pub seed: u64,
    /// Task model file to write; per-epoch log goes to FILE.epochs.csv.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    /// Prediction files; several are averaged with a 95% interval.
    #[arg(long, value_name = "FILE", num_args = 1.., value_delimiter = ',', required = true)]
    pub pred: Vec<PathBuf>,
    /// Per-label probability files (one per prediction file) for AUROC on mlc.
    #[arg(long, value_name = "FILE", num_args = 1.., value_delimiter = ',')]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fine-tuned task model.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Dataset in the task's format; any gold labels are ignored.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    /// Predictions in the input's format (mlc also writes FILE.scores).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub blocks: usize,
    /// Mean sentences per block (1 + Poisson).
    #[arg(long, group = "sizes")]
    pub avg_sentences: Option<f64>,
    /// Every block has exactly this many sentences.
    #[arg(long, group = "sizes")]
    pub block_size: Option<usize>,
    /// Uniform block sizes, MIN-MAX inclusive.
    #[arg(long, group = "sizes", value_name = "MIN-MAX")]
    pub block_range: Option<String>,
    /// Draw sources and block sizes from the web/wiki/news mixture.
    #[arg(long, group = "sizes")]
    pub mixture: bool,
    /// Number of pseudo-words in the language.
    #[arg(long, default_value_t = 60)]
    pub vocabulary: usize,
    #[arg(long, default_value_t = 4)]
    pub min_words: usize,
    #[arg(long, default_value_t = 8)]
    pub max_words: usize,
    /// Generate a task dataset over the same words instead of a corpus.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Task examples written to --output.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Extra task examples written to --dev-output.
    #[arg(long, default_value_t = 0)]
    pub dev_count: usize,
    #[arg(long, value_name = "FILE")]
    pub dev_output: Option<PathBuf>,
    /// Label inventory size for mlc (at most --vocabulary).
    #[arg(long, default_value_t = 5)]
    pub labels: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output file [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Command {
    /// Explicit `--resolved-config`, else next to the main output, else a
    /// file named after the subcommand in the working directory.
    pub fn resolved_config_path(&self) -> PathBuf {
        const EXT: &str = ".resolved-config";
        let (explicit, default) = match self {
            Command::Tokenizer(TokenizerCommand::Train(a)) => (&a.run.resolved_config, suffixed(&a.output, EXT)),
            Command::Tokenizer(TokenizerCommand::Encode(a)) => {
                (&a.run.resolved_config, PathBuf::from(format!("tokenizer-encode{EXT}")))
            }
            Command::Corpus(CorpusCommand::Stats(a)) => (&a.run.resolved_config, PathBuf::from(format!("corpus-stats{EXT}"))),
            Command::PretrainData(PretrainDataCommand::Build(a)) => (&a.run.resolved_config, suffixed(&a.output, EXT)),
            Command::Pretrain(a) => (&a.resolved_config, a.out.join("resolved-config")),
            Command::Finetune(a) => (&a.run.resolved_config, suffixed(&a.output, EXT)),
            Command::Evaluate(a) => (
                &a.run.resolved_config,
                a.output
                    .as_ref()
                    .map_or_else(|| PathBuf::from(format!("evaluate{EXT}")), |o| suffixed(o, EXT)),
            ),
            Command::Predict(a) => (&a.run.resolved_config, suffixed(&a.output, EXT)),
            Command::Synth(a) => (
                &a.run.resolved_config,
                a.output
                    .as_ref()
                    .map_or_else(|| PathBuf::from(format!("synth{EXT}")), |o| suffixed(o, EXT)),
            ),
        };
        explicit.clone().unwrap_or(default)
    }
}
