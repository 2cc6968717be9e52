mod config;
mod repl;
mod server;

use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use p2c_core::corpus::{self, build_parallel, build_vocab, encode_all, CorpusOptions, Granularity, InputMode};
use p2c_core::metrics::{evaluate, ModelConverter};
use p2c_core::model::{build_variant, checkpoint, P2CModel, Side, Variant};
use p2c_core::pinyin::{CharPinyinDict, Lexicon};
use p2c_core::service::Service;
use p2c_core::training::{train, OutputDir};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "p2c", version, about = "Context-aware pinyin-to-character conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus construction.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Train a model and write per-epoch checkpoints plus metrics.tsv.
    Train(TrainArgs),
    /// Print the ranked candidates for one input.
    Convert(ConvertArgs),
    /// Top-K accuracy and KySS on a test corpus.
    Eval(EvalArgs),
    /// Serve sessions as JSON lines over TCP and JSON over HTTP.
    Serve(ServeArgs),
    /// Interactive session in the terminal.
    Repl(ReplArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Pair every utterance with the previous one. Each file in --in is a document,
    /// one utterance per line.
    Build(BuildArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Complete,
    Abbrev,
}

impl From<Mode> for InputMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Complete => InputMode::Complete,
            Mode::Abbrev => InputMode::Abbreviated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Gated,
    Simple,
    Basic,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Gated => Variant::Gated,
            VariantArg::Simple => Variant::SimpleConcat,
            VariantArg::Basic => Variant::Basic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Char,
    Word,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Char => Granularity::Char,
            GranularityArg::Word => Granularity::Word,
        }
    }
}

#[derive(Args)]
struct LexiconArg {
    /// Syllable table as `syllable<TAB>initial` lines (default: the bundled table).
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl LexiconArg {
    fn load(&self) -> Result<Lexicon> {
        match &self.lexicon {
            None => Ok(Lexicon::standard()),
            Some(p) => Ok(Lexicon::from_tsv(&read(p)?)?),
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    /// Character readings as `char<TAB>syllable<TAB>weight` lines.
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "char")]
    granularity: GranularityArg,
    /// Previous utterances used as context (0 or 1).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    context_window: u8,
    #[command(flatten)]
    lexicon: LexiconArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long)]
    corpus: PathBuf,
    /// TOML run configuration; an empty file means the desk preset.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lexicon: LexiconArg,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pinyin: String,
    #[arg(long, default_value = "")]
    context: String,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[command(flatten)]
    lexicon: LexiconArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus file with complete pinyin.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "complete")]
    mode: Mode,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    topk: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[command(flatten)]
    lexicon: LexiconArg,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Port for line-delimited JSON.
    #[arg(long)]
    port: u16,
    /// Port for HTTP (default: --port + 1).
    #[arg(long)]
    http_port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 1800)]
    session_ttl: u64,
    /// Directory of static files served over HTTP.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[command(flatten)]
    lexicon: LexiconArg,
}

#[derive(Args)]
struct ReplArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[command(flatten)]
    lexicon: LexiconArg,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<P2CModel> {
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn corpus_build(a: BuildArgs) -> Result<()> {
    let dict = CharPinyinDict::from_tsv(&read(&a.dict)?)?;
    let lex = a.lexicon.load()?;
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| format!("listing {}", a.input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    if files.is_empty() {
        bail!("no documents in {}", a.input.display());
    }
    let docs: Vec<Vec<String>> = files
        .iter()
        .map(|p| Ok(read(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()))
        .collect::<Result<_>>()?;
    let opts = CorpusOptions {
        granularity: a.granularity.into(),
        context_window: a.context_window as usize,
    };
    let examples = build_parallel(&docs, &dict, &lex, a.mode.into(), opts).map_err(|e| match e {
        corpus::CorpusError::Annotation { document, utterance, source } => {
            anyhow::anyhow!("{}, line {}: {source}", files[document].display(), utterance + 1)
        }
        other => other.into(),
    })?;
    fs::write(&a.out, corpus::write_corpus(&examples, opts.granularity))?;
    eprintln!(
        "{} examples from {} documents, relativity {:.3}",
        examples.len(),
        docs.len(),
        corpus::relativity(&examples)
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::parse(&read(&a.config)?, a.variant.into())?;
    let lex = a.lexicon.load()?;
    let examples = corpus::read_corpus(&read(&a.corpus)?, cfg.data.granularity, &lex)?;
    let (pv, tv) = build_vocab(&examples, cfg.data.min_count)?;
    let data = encode_all(&examples, &pv, &tv);
    let mut model = build_variant(&cfg.model, pv, tv, cfg.train.seed)?;
    model.granularity = cfg.data.granularity;
    for (path, side) in [(&cfg.data.pinyin_embeddings, Side::Pinyin), (&cfg.data.target_embeddings, Side::Context)] {
        if let Some(p) = path {
            let n = model.load_embeddings(&read(p)?, side)?;
            eprintln!("loaded {n} vectors from {}", p.display());
        }
    }
    eprintln!(
        "{} examples, pinyin vocab {}, target vocab {}, {} parameters",
        data.len(),
        model.pinyin_vocab.len(),
        model.target_vocab.len(),
        model.params.scalar_count()
    );
    let out = OutputDir(a.out);
    let stdout = io::stdout();
    train(&mut model, &data, &cfg.train, Some(&out), |r| {
        let _ = writeln!(stdout.lock(), "{}", r.log_line());
    })?;
    eprintln!("wrote {}", out.latest().display());
    Ok(())
}

fn convert_cmd(a: ConvertArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let context = model.granularity.tokenize(&a.context);
    let svc = Service::new(Arc::new(model), a.lexicon.load()?, Duration::ZERO);
    let conv = svc.convert_with_context(&context, &a.pinyin, a.beam, a.topk)?;
    let mut out = io::stdout().lock();
    for c in &conv.candidates {
        writeln!(out, "{}\t{:.4}\t{}", c.rank, c.logprob, c.text)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let lex = a.lexicon.load()?;
    let examples = corpus::read_corpus(&read(&a.test)?, model.granularity, &lex)?;
    let conv = ModelConverter { model: &model, beam: a.beam };
    let result = evaluate(&conv, &examples, a.mode.into(), &a.topk, &lex)?;
    print!("{}", result.report());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let svc = Arc::new(Service::new(Arc::new(model), a.lexicon.load()?, Duration::from_secs(a.session_ttl)));
    let http_port = match a.http_port {
        Some(p) => p,
        None => a.port.checked_add(1).context("--port too large to derive --http-port")?,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::run(svc, SocketAddr::new(a.host, a.port), SocketAddr::new(a.host, http_port), a.ui))
}

fn repl_cmd(a: ReplArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let svc = Service::new(Arc::new(model), a.lexicon.load()?, Duration::MAX);
    repl::run(&svc, a.beam, a.topk, io::stdin().lock(), io::stdout().lock())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Corpus {
            command: CorpusCommand::Build(a),
        } => corpus_build(a),
        Command::Train(a) => train_cmd(a),
        Command::Convert(a) => convert_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Repl(a) => repl_cmd(a),
    }
}
