use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "abx", version, about = "Antibiotic resistance prediction from clinical-note embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: microbiology.csv, notes.csv, embeddings.abxe.
    Synth(SynthArgs),
    /// Parse the inputs and write cohort_summary.json.
    Ingest(IngestArgs),
    /// Embed the linked notes and write an embedding store.
    Embed(EmbedArgs),
    /// Cross-validate the classifiers and write the report and figure.
    Evaluate(EvaluateArgs),
    /// Re-render figure.csv and figure.svg from an existing report.json.
    Report(ReportArgs),
    /// Serve the embedding contract with the hash embedder.
    StubServer(StubServerArgs),
    /// Run the black-box contract checks against an embedding service.
    CheckService(CheckServiceArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub n_antibiotics: usize,
    #[arg(long, default_value_t = 2.0)]
    pub class_sep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub label_balance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the hash embedder used to write the store.
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Input locations. Each file defaults to its conventional name under
/// `--data-dir`.
#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, default_value = ".")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub micro: Option<PathBuf>,
    #[arg(long)]
    pub notes: Option<PathBuf>,
}

impl InputArgs {
    pub fn micro_path(&self) -> PathBuf {
        self.micro.clone().unwrap_or_else(|| self.data_dir.join("microbiology.csv"))
    }

    pub fn notes_path(&self) -> PathBuf {
        self.notes.clone().unwrap_or_else(|| self.data_dir.join("notes.csv"))
    }

    pub fn store_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data_dir.join("embeddings.abxe"))
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Specimen category table (`pattern,category`); defaults to the built-in one.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Directory for cohort_summary.json; defaults to the data directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbedMode {
    Store,
    Hash,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StoreFormat {
    Bin,
    Csv,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = EmbedMode::Hash)]
    pub mode: EmbedMode,
    /// Embedding service base URL; falls back to ABX_EMBED_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Request timeout in seconds for the remote mode.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    /// Antibiotics whose linked notes are embedded (default: the standard seven).
    #[arg(long, value_delimiter = ',')]
    pub antibiotics: Vec<String>,
    #[arg(long)]
    pub max_notes: Option<usize>,
    #[arg(long, value_enum, default_value_t = StoreFormat::Bin)]
    pub format: StoreFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Mlp,
    Gbt,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PositiveClass {
    Resistant,
    Sensitive,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Embedding store (`.csv` suffix reads the CSV layout).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Output directory; defaults to the data directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = PositiveClass::Resistant)]
    pub positive_class: PositiveClass,
    #[arg(long, value_delimiter = ',')]
    pub antibiotics: Vec<String>,
    #[arg(long, value_enum, default_value_t = EmbedMode::Store)]
    pub embed_mode: EmbedMode,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    /// Dimension and seed for `--embed-mode hash`.
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    /// Keep every culture of a subject in the same fold.
    #[arg(long)]
    pub group_by_subject: bool,
    /// Shuffle each antibiotic's labels before cross-validation (null baseline).
    #[arg(long)]
    pub permute_labels: bool,
    #[arg(long)]
    pub max_notes: Option<usize>,
    #[arg(long)]
    pub categories: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Defaults to the directory holding the report.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StubServerArgs {
    #[arg(long, default_value_t = 8901)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckServiceArgs {
    /// Service base URL; falls back to ABX_EMBED_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
}
