use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use restore_core::eval::{
    eval_masked, eval_mcq, eval_perplexity, parse_mcq, Completer, CompletionQuery, EvalReport, MaskedEval,
    McqScoring,
};
use restore_core::ingest::{
    corpus_stats, extract_directory, read_archive, split_corpus, write_archive, CorpusSplit, ExtractOptions,
    TransliteratedDocument,
};
use restore_core::lm::checkpoint::{self, sha256_hex};
use restore_core::lm::{train_with_progress, LstmModel};
use restore_core::model::LanguageModel;
use restore_core::ngram::{fit_ngram_with, CompletionMode, NGramModel};
use restore_core::synth::{generate, to_html, SynthConfig};
use restore_core::tokenizer::{
    parse_token_stream, token_stream_to_string, tokenize_document, EncodedSequence, Token, TokenId,
    TokenizerOptions, Vocabulary,
};

use crate::config::AppConfig;
use crate::{render_pairs, server, CliError, OutputFormat};

#[derive(Debug, Parser)]
#[command(name = "restore", about = "Gap restoration for transliterated cuneiform texts")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract HTML pages into a split corpus archive.
    Ingest {
        /// First write this many synthetic pages into the corpus directory.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Word and vocabulary counts of the archive.
    Stats,
    /// Re-split the archive, build the vocabulary and write token streams.
    Split,
    TrainNgram,
    TrainLstm,
    EvalPerplexity(ModelArg),
    EvalMasked {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = Mode::Start)]
        mode: Mode,
    },
    EvalMcq {
        #[command(flatten)]
        model: ModelArg,
        /// Tab-separated question file.
        #[arg(long)]
        questions: PathBuf,
        /// Divide each filled sentence's log-likelihood by its length.
        #[arg(long)]
        per_token: bool,
    },
    /// Rank fillers for one gap.
    Complete {
        #[command(flatten)]
        model: ModelArg,
        /// Space-separated tokens before the gap.
        #[arg(long, default_value = "")]
        left: String,
        /// Space-separated tokens after the gap.
        #[arg(long, default_value = "")]
        right: String,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Serve the HTTP API.
    Serve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Ngram,
    Lstm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ngram => "ngram",
            ModelKind::Lstm => "lstm",
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ModelArg {
    #[arg(long, value_enum, default_value_t = ModelKind::Lstm)]
    pub model: ModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Start,
    Full,
}

impl From<Mode> for CompletionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Start => CompletionMode::Start,
            Mode::Full => CompletionMode::Full,
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.split.seed = seed;
        config.lm.seed = seed;
    }
    Ok(config)
}

pub async fn run(cli: Cli) -> Result<String, CliError> {
    let config = resolve_config(&cli)?;
    let f = cli.format;
    match cli.command {
        Command::Ingest { synthetic } => ingest(&config, synthetic, f),
        Command::Stats => stats(&config, f),
        Command::Split => split(&config, f),
        Command::TrainNgram => train_ngram(&config, f),
        Command::TrainLstm => train_lstm(&config, f),
        Command::EvalPerplexity(m) => eval_perplexity_cmd(&config, m.model, f),
        Command::EvalMasked { model, mode } => eval_masked_cmd(&config, model.model, mode, f),
        Command::EvalMcq {
            model,
            questions,
            per_token,
        } => eval_mcq_cmd(&config, model.model, &questions, per_token, f),
        Command::Complete {
            model,
            left,
            right,
            mode,
            k,
        } => complete_cmd(&config, model.model, &left, &right, mode, k, f),
        Command::Serve => {
            server::serve(&config).await?;
            Ok(String::new())
        }
    }
}

fn pairs<const N: usize>(items: [(&str, String); N]) -> Vec<(String, String)> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn read(path: &Path, producer: &'static str) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput(path.to_path_buf(), producer));
    }
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn tokenizer_options(config: &AppConfig) -> TokenizerOptions {
    TokenizerOptions {
        collapse_breaks: config.tokenizer.collapse_breaks,
    }
}

fn tokenize_all(docs: &[TransliteratedDocument], opts: &TokenizerOptions) -> Vec<Vec<Token>> {
    docs.iter().flat_map(|d| tokenize_document(d, opts)).collect()
}

pub fn ingest(config: &AppConfig, synthetic: Option<usize>, f: OutputFormat) -> Result<String, CliError> {
    let dir = &config.paths.corpus_dir;
    if let Some(n) = synthetic {
        let docs = generate(&SynthConfig {
            seed: config.split.seed,
            documents: n,
            ..SynthConfig::default()
        });
        for doc in &docs {
            write(&dir.join(format!("{}.html", doc.doc_id)), to_html(doc))?;
        }
    }
    if !dir.is_dir() {
        return Err(CliError::MissingInput(dir.clone(), "ingest --synthetic N (or scrape pages)"));
    }
    let options = ExtractOptions {
        content_selector: config.paths.content_selector.clone(),
    };
    let docs = extract_directory(dir, &options)?;
    let split = split_corpus(docs, config.split.test_fraction, config.split.seed)?;
    let archive = config.paths.archive();
    write_archive(&archive, &split)?;
    let all: Vec<TransliteratedDocument> = split.train.iter().chain(&split.test).cloned().collect();
    let tokens: Vec<Token> = tokenize_all(&all, &tokenizer_options(config)).into_iter().flatten().collect();
    let stats = corpus_stats(&all, &tokens);
    Ok(render_pairs(
        &pairs([
            ("archive", archive.display().to_string()),
            ("documents", stats.document_count.to_string()),
            ("train_documents", split.train.len().to_string()),
            ("test_documents", split.test.len().to_string()),
            ("total_words", stats.total_word_count.to_string()),
            ("tokens", tokens.len().to_string()),
        ]),
        f,
    ))
}

fn load_archive(config: &AppConfig) -> Result<CorpusSplit, CliError> {
    let archive = config.paths.archive();
    if !archive.join("manifest.tsv").exists() {
        return Err(CliError::MissingInput(archive, "ingest"));
    }
    Ok(read_archive(&archive)?)
}

pub fn stats(config: &AppConfig, f: OutputFormat) -> Result<String, CliError> {
    let split = load_archive(config)?;
    let all: Vec<TransliteratedDocument> = split.train.into_iter().chain(split.test).collect();
    let tokens: Vec<Token> = tokenize_all(&all, &tokenizer_options(config)).into_iter().flatten().collect();
    let s = corpus_stats(&all, &tokens);
    Ok(render_pairs(
        &pairs([
            ("documents", s.document_count.to_string()),
            ("total_words", s.total_word_count.to_string()),
            ("unique_words", s.unique_word_count.to_string()),
            ("words_once", s.count_once.to_string()),
            ("words_twice", s.count_twice.to_string()),
        ]),
        f,
    ))
}

pub fn split(config: &AppConfig, f: OutputFormat) -> Result<String, CliError> {
    let old = load_archive(config)?;
    let all: Vec<TransliteratedDocument> = old.train.into_iter().chain(old.test).collect();
    let split = split_corpus(all, config.split.test_fraction, config.split.seed)?;
    write_archive(&config.paths.archive(), &split)?;
    let dev = split_corpus(split.train.clone(), config.split.valid_fraction, config.split.seed.wrapping_add(1))?;
    let opts = tokenizer_options(config);
    let train = tokenize_all(&dev.train, &opts);
    let valid = tokenize_all(&dev.test, &opts);
    let test = tokenize_all(&split.test, &opts);
    let vocab = Vocabulary::build(train.iter().flatten(), config.tokenizer.min_count)?;
    let p = &config.paths;
    write(&p.vocab(), vocab.to_file_string())?;
    write(&p.tokens("train"), token_stream_to_string(&train))?;
    write(&p.tokens("valid"), token_stream_to_string(&valid))?;
    write(&p.tokens("test"), token_stream_to_string(&test))?;
    Ok(render_pairs(
        &pairs([
            ("vocab_size", vocab.len().to_string()),
            ("vocab_hash", sha256_hex(vocab.to_file_string().as_bytes())),
            ("train_lines", train.len().to_string()),
            ("valid_lines", valid.len().to_string()),
            ("test_lines", test.len().to_string()),
        ]),
        f,
    ))
}

pub fn load_vocab(config: &AppConfig) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::from_file_str(&read(&config.paths.vocab(), "split")?)?)
}

fn load_stream(config: &AppConfig, part: &str, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>, CliError> {
    let text = read(&config.paths.tokens(part), "split")?;
    Ok(parse_token_stream(&text)
        .iter()
        .map(|l| vocab.encode(l).0)
        .collect())
}

pub fn train_ngram(config: &AppConfig, f: OutputFormat) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let train: Vec<EncodedSequence> = load_stream(config, "train", &vocab)?
        .into_iter()
        .map(EncodedSequence)
        .collect();
    let s = &config.ngram;
    let model = fit_ngram_with(&train, s.order, s.alpha, s.smoothing()?, vocab.len())?;
    let text = model.to_file_string();
    write(&config.paths.ngram(), &text)?;
    Ok(render_pairs(
        &pairs([
            ("model", config.paths.ngram().display().to_string()),
            ("order", s.order.to_string()),
            ("contexts", model.counts().len().to_string()),
            ("sha256", sha256_hex(text.as_bytes())),
        ]),
        f,
    ))
}

pub fn train_lstm(config: &AppConfig, f: OutputFormat) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let train = load_stream(config, "train", &vocab)?;
    let valid = load_stream(config, "valid", &vocab)?;
    let lm_config = config.lm.to_config(vocab.len())?;
    let (model, log) = train_with_progress(&train, &valid, &lm_config, |e| {
        eprintln!(
            "epoch {:>3}  train_nll {:.4}  valid_nll {:.4}  {:.1}s",
            e.epoch,
            e.train_nll,
            e.valid_nll,
            e.wall_time.as_secs_f64()
        );
    })?;
    let bytes = checkpoint::to_bytes(&model, &vocab.content_hash());
    write(&config.paths.lstm(), &bytes)?;
    let best = &log.epochs[log.best_epoch.max(1) - 1];
    Ok(render_pairs(
        &pairs([
            ("checkpoint", config.paths.lstm().display().to_string()),
            ("epochs", log.epochs.len().to_string()),
            ("best_epoch", log.best_epoch.to_string()),
            ("best_valid_nll", format!("{:.6}", best.valid_nll)),
            ("sha256", sha256_hex(&bytes)),
        ]),
        f,
    ))
}

pub fn load_ngram(config: &AppConfig, vocab: &Vocabulary) -> Result<NGramModel, CliError> {
    let model = NGramModel::from_file_str(&read(&config.paths.ngram(), "train-ngram")?)?;
    if LanguageModel::vocab_size(&model) != vocab.len() {
        return Err(CliError::Config(format!(
            "n-gram model has {} types but the vocabulary has {}",
            LanguageModel::vocab_size(&model),
            vocab.len()
        )));
    }
    Ok(model)
}

pub fn load_lstm(config: &AppConfig, vocab: &Vocabulary) -> Result<LstmModel, CliError> {
    let path = config.paths.lstm();
    if !path.exists() {
        return Err(CliError::MissingInput(path, "train-lstm"));
    }
    Ok(checkpoint::load(&path, &vocab.content_hash())?)
}

/// A loaded model of either kind.
pub enum AnyModel {
    NGram(NGramModel),
    Lstm(LstmModel),
}

impl AnyModel {
    pub fn load(config: &AppConfig, kind: ModelKind, vocab: &Vocabulary) -> Result<Self, CliError> {
        Ok(match kind {
            ModelKind::Ngram => AnyModel::NGram(load_ngram(config, vocab)?),
            ModelKind::Lstm => AnyModel::Lstm(load_lstm(config, vocab)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::NGram(_) => ModelKind::Ngram,
            AnyModel::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn lm(&self) -> &(dyn LanguageModel + Send + Sync) {
        match self {
            AnyModel::NGram(m) => m,
            AnyModel::Lstm(m) => m,
        }
    }

    pub fn completer(&self) -> &(dyn Completer + Send + Sync) {
        match self {
            AnyModel::NGram(m) => m,
            AnyModel::Lstm(m) => m,
        }
    }
}

fn report(r: &EvalReport, f: OutputFormat) -> String {
    match f {
        OutputFormat::Text => r.to_text(),
        OutputFormat::Machine => r.to_tsv(),
    }
}

pub fn eval_perplexity_cmd(config: &AppConfig, kind: ModelKind, f: OutputFormat) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let model = AnyModel::load(config, kind, &vocab)?;
    let test = load_stream(config, "test", &vocab)?;
    Ok(report(&eval_perplexity(model.lm(), &test), f))
}

pub fn eval_masked_cmd(config: &AppConfig, kind: ModelKind, mode: Mode, f: OutputFormat) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let model = AnyModel::load(config, kind, &vocab)?;
    let test = load_stream(config, "test", &vocab)?;
    let settings = MaskedEval {
        mask_index: config.eval.mask_index,
        min_len: config.eval.min_len,
        mode: mode.into(),
        pool_size: config.eval.pool_size,
    };
    Ok(report(&eval_masked(model.completer(), &test, &settings)?, f))
}

pub fn eval_mcq_cmd(
    config: &AppConfig,
    kind: ModelKind,
    questions: &Path,
    per_token: bool,
    f: OutputFormat,
) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let model = AnyModel::load(config, kind, &vocab)?;
    let text = fs::read_to_string(questions).map_err(|e| CliError::Io(questions.to_path_buf(), e))?;
    let qs = parse_mcq(&text, &vocab)?;
    let scoring = if per_token { McqScoring::PerToken } else { McqScoring::Total };
    let (r, outcomes) = eval_mcq(model.lm(), &qs, scoring);
    let mut out = report(&r, f);
    if f == OutputFormat::Text {
        for (i, o) in outcomes.iter().enumerate() {
            let order: Vec<String> = o.ranking.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "question {}: predicted {} ({}) ranking {}{}\n",
                i + 1,
                o.predicted,
                if o.correct { "correct" } else { "wrong" },
                order.join(">"),
                if o.tie { " tie" } else { "" }
            ));
        }
    }
    Ok(out)
}

pub fn encode_words(vocab: &Vocabulary, text: &str) -> Vec<TokenId> {
    let toks: Vec<Token> = text.split_whitespace().map(Token::new).collect();
    vocab.encode(&toks).0
}

pub fn complete_cmd(
    config: &AppConfig,
    kind: ModelKind,
    left: &str,
    right: &str,
    mode: Mode,
    k: usize,
    f: OutputFormat,
) -> Result<String, CliError> {
    let vocab = load_vocab(config)?;
    let model = AnyModel::load(config, kind, &vocab)?;
    let query = CompletionQuery {
        left: encode_words(&vocab, left),
        right: encode_words(&vocab, right),
        mode: mode.into(),
        pool_size: config.eval.pool_size.max(k),
        k,
    };
    query.validate()?;
    let ranked = model.completer().complete(&query);
    let mut out = match f {
        OutputFormat::Text => String::new(),
        OutputFormat::Machine => "rank\ttoken\tlog_score\n".to_string(),
    };
    for c in &ranked.entries {
        let tok = vocab.token_of(c.token_id).map(Token::as_str).unwrap_or("?");
        out.push_str(&match f {
            OutputFormat::Text => format!("{:>3}. {tok} ({:.4})\n", c.rank, c.log_score),
            OutputFormat::Machine => format!("{}\t{tok}\t{}\n", c.rank, c.log_score),
        });
    }
    Ok(out)
}
