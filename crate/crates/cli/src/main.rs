mod commands;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topicmine::encoder::MaskStrategy;
use topicmine::evalmetrics::WindowMode;

use config::{LdaTokens, RunConfig};
use run::{RunDir, CONFIG_FILE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] topicmine::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "topicmine", version, about = "Topic mining over review-style corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, drop stopwords, build the vocabulary and encode the corpus.
    Preprocess(Flags),
    /// Train the masked-language-model encoder.
    TrainMlm(Flags),
    /// Write contextual token vectors and pooled document vectors.
    Embed(Flags),
    /// Held-out perplexity for each topic count in kmin..=kmax.
    SweepK(Flags),
    /// Fit the topic model and write the keyword report.
    Fit(Flags),
    /// Score the fitted topics with u_mass and c_v.
    Coherence(Flags),
    /// Project fused document vectors to 2D.
    Tsne(Flags),
    /// preprocess, train-mlm, embed, sweep-k, fit, coherence and tsne in one go.
    Pipeline(Flags),
    /// Write the synthetic three-aspect review corpus as JSON lines.
    SampleCorpus(SampleArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Number of documents.
    #[arg(long, default_value_t = 300)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination file.
    #[arg(long)]
    output: PathBuf,
}

/// Flags shared by every stage. Unset flags fall back to `--config`, then to
/// the run directory's saved config, then to built-in defaults.
#[derive(Args, Default)]
struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Raw corpus: JSON lines with id/text, or plain text with one document per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Stopword file, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<usize>,

    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    mask_rate: Option<f64>,
    /// pure-mask or bert-80-10-10.
    #[arg(long)]
    strategy: Option<MaskStrategy>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// External document vectors; skips encoder training.
    #[arg(long)]
    from_file: Option<PathBuf>,
    /// External per-token vectors to go with --from-file.
    #[arg(long)]
    from_file_tokens: Option<PathBuf>,
    /// Cluster token vectors into this many senses.
    #[arg(long)]
    senses: Option<usize>,
    /// Run the topic model on sense ids instead of words.
    #[arg(long)]
    use_senses: bool,

    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Worker threads for sweep-k.
    #[arg(long)]
    jobs: Option<usize>,

    #[arg(long)]
    top_t: Option<usize>,
    /// Window for both coherence families: doc or slide:N.
    #[arg(long)]
    window: Option<WindowMode>,
    #[arg(long)]
    u_mass_window: Option<WindowMode>,
    #[arg(long)]
    c_v_window: Option<WindowMode>,

    /// Weight of the topic block in fused vectors.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tsne_perplexity: Option<f64>,
    #[arg(long)]
    tsne_iters: Option<usize>,
    /// Also write points.svg.
    #[arg(long)]
    svg: bool,
}

macro_rules! override_fields {
    ($cfg:ident, $flags:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v; })*
    };
}

macro_rules! override_optional {
    ($cfg:ident, $flags:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = Some(v); })*
    };
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::from_json(&run::read_required(path, "pipeline")?, path)
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => {
                let out = self.out.clone().unwrap_or_else(|| RunConfig::default().out);
                let saved = out.join(CONFIG_FILE);
                if saved.is_file() {
                    read_config(&saved)?
                } else {
                    RunConfig::default()
                }
            }
        };
        let flags = self;
        override_fields!(cfg, flags; out, seed, min_count, dim, heads, layers, max_len, mask_rate, strategy,
            steps, batch_size, learning_rate, kmin, kmax, beta, iters, burn_in, jobs, top_t, lambda,
            tsne_perplexity, tsne_iters);
        override_optional!(cfg, flags; input, stopwords, from_file, from_file_tokens, senses, k, alpha);
        if let Some(w) = self.window {
            cfg.u_mass_window = w.to_string();
            cfg.c_v_window = w.to_string();
        }
        if let Some(w) = self.u_mass_window {
            cfg.u_mass_window = w.to_string();
        }
        if let Some(w) = self.c_v_window {
            cfg.c_v_window = w.to_string();
        }
        if self.use_senses {
            cfg.lda_tokens = LdaTokens::Senses;
        }
        if self.svg {
            cfg.svg = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_stage(flags: &Flags, stage: fn(&mut RunDir, &RunConfig) -> Result<(), CliError>) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    let mut dir = RunDir::open(&cfg.out)?;
    dir.write_config(&cfg)?;
    stage(&mut dir, &cfg)
}

fn sample_corpus(args: &SampleArgs) -> Result<(), CliError> {
    let mut text = String::new();
    for doc in topicmine::synth::sample_reviews(args.docs, args.seed) {
        text.push_str(&serde_json::to_string(&doc).expect("document serializes"));
        text.push('\n');
    }
    run::write_atomic(&args.output, text.as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Preprocess(f) => run_stage(f, commands::preprocess),
        Command::TrainMlm(f) => run_stage(f, commands::train_mlm),
        Command::Embed(f) => run_stage(f, commands::embed),
        Command::SweepK(f) => run_stage(f, |d, c| commands::sweep_k(d, c).map(|_| ())),
        Command::Fit(f) => run_stage(f, commands::fit),
        Command::Coherence(f) => run_stage(f, commands::coherence),
        Command::Tsne(f) => run_stage(f, commands::tsne),
        Command::Pipeline(f) => run_stage(f, commands::pipeline),
        Command::SampleCorpus(a) => sample_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
