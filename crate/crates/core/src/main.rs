use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use empathia::corpus::{
    corpus_stats, generate_synthetic, load_corpus, save_corpus, split_corpus, Corpus, EmotionLabel, GeneratorConfig,
    SplitRatios,
};
use empathia::dialogue::scripted::{RecordingGenerator, ScriptedRecognizer};
use empathia::dialogue::{DialogueEngine, DialogueState, TemplateBank, TemplatePolicy};
use empathia::emotion::{train_joint, EmotionModel, EmotionTrainConfig, TaskMode};
use empathia::evalkit::{
    aggregate_ratings, distinct_n, emit_report, load_ratings, load_responses, load_votes, ModelMetrics, Vote,
    VoteLedgerView,
};
use empathia::generator::{
    generator_examples, train_generator, CauseAblation, DecodeConfig, DecodeStrategy, GeneratorModel,
    GeneratorTrainConfig,
};
use empathia::neural::FitConfig;
use empathia::service::{ServiceConfig, ServiceState};
use empathia::textproc::{build_vocab, tokenize, Vocabulary, DEFAULT_VOCAB_CAP};
use empathia::{Error, Result};

#[derive(Parser)]
#[command(name = "empathia", version, about = "Emotion- and cause-aware dialogue engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic annotated corpus as JSONL.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Split a corpus 8:1:1 into train/dev/test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the joint emotion classifier and cause extractor.
    TrainEmotion {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long, conflicts_with = "ece_only")]
        ecf_only: bool,
        #[arg(long)]
        ece_only: bool,
        /// Encode only the query, without preceding turns.
        #[arg(long)]
        query_only: bool,
    },
    /// Report {precision, recall, exact_match, fuzzy_match} on a corpus.
    EvalEmotion {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train the response generator.
    TrainGenerator {
        #[command(flatten)]
        common: TrainArgs,
        /// Drop the cause segment and indicator from every example.
        #[arg(long, conflicts_with = "cause_tokens_only")]
        no_cause: bool,
        /// Drop the cause tokens but keep the indicator.
        #[arg(long)]
        cause_tokens_only: bool,
        /// Template bank whose probe replies are excluded from training.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Report {ppl, dist1, dist2} on a corpus, using greedy decoding.
    EvalGenerator {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate one response.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long)]
        label: EmotionLabel,
        #[arg(long)]
        cause: Option<String>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Interactive chat on stdin/stdout.
    Chat {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        debug: bool,
    },
    /// Build the metrics table from response, vote and rating files.
    Eval {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        votes: Option<PathBuf>,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Per-model perplexity, as MODEL=VALUE.
        #[arg(long, value_parser = parse_ppl)]
        ppl: Vec<(String, f64)>,
        /// Output stem; writes .txt and .json next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Dev corpus; when absent the input is split 8:1:1 and its dev part used.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary file; built from the training data when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    max_updates: Option<u64>,
    #[arg(long, default_value_t = 16)]
    micro_batch: usize,
    #[arg(long, default_value_t = 1)]
    accumulation: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the 12-layer, 768-wide configuration instead of the desk one.
    #[arg(long)]
    reference: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    greedy: bool,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 40)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    decode_seed: u64,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            strategy: if self.greedy { DecodeStrategy::Greedy } else { DecodeStrategy::TopK },
            k: self.k,
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            seed: self.decode_seed,
        }
    }
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    emotion_ckpt: Option<PathBuf>,
    #[arg(long)]
    generator_ckpt: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Alternate questioning and listening probes instead of uniform choice.
    #[arg(long)]
    alternate_strategy: bool,
    /// Use keyword rules and canned replies instead of checkpoints.
    #[arg(long)]
    scripted: bool,
    #[command(flatten)]
    decode: DecodeArgs,
}

fn parse_ppl(s: &str) -> std::result::Result<(String, f64), String> {
    let (m, v) = s.split_once('=').ok_or("expected MODEL=VALUE")?;
    Ok((m.to_string(), v.parse().map_err(|e| format!("{e}"))?))
}

fn bank(path: Option<&Path>) -> Result<TemplateBank> {
    match path {
        Some(p) => TemplateBank::load(p),
        None => Ok(TemplateBank::default_bank()),
    }
}

impl EngineArgs {
    /// `None` when no models were given and scripted mode is off.
    fn build(&self) -> Result<Option<DialogueEngine>> {
        let bank = Arc::new(bank(self.templates.as_deref())?);
        let policy = if self.alternate_strategy { TemplatePolicy::AlternateStrategy } else { TemplatePolicy::Uniform };
        let decode = self.decode.config();
        if self.scripted {
            let e = DialogueEngine::new(
                Arc::new(ScriptedRecognizer::default()),
                Arc::new(RecordingGenerator::default()),
                bank,
                policy,
                decode,
            );
            return Ok(Some(e));
        }
        match (&self.emotion_ckpt, &self.generator_ckpt) {
            (Some(e), Some(g)) => {
                let em = EmotionModel::load(e)?;
                let gm = GeneratorModel::load(g)?;
                if em.vocab().hash() != gm.vocab().hash() {
                    log::warn!("emotion and generator checkpoints use different vocabularies");
                }
                Ok(Some(DialogueEngine::new(Arc::new(em), Arc::new(gm), bank, policy, decode)))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Config("give both --emotion-ckpt and --generator-ckpt".into())),
        }
    }
}

struct Data {
    train: Corpus,
    dev: Corpus,
    vocab: Vocabulary,
}

impl TrainArgs {
    fn data(&self) -> Result<Data> {
        let corpus = load_corpus(&self.corpus)?;
        let (train, dev) = match &self.dev {
            Some(d) => (corpus, load_corpus(d)?),
            None => {
                let s = split_corpus(&corpus, SplitRatios::default(), self.seed)?;
                (s.train, s.dev)
            }
        };
        let vocab = match &self.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => build_vocab(&train, DEFAULT_VOCAB_CAP)?,
        };
        Ok(Data { train, dev, vocab })
    }

    fn fit(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            micro_batch: self.micro_batch,
            accumulation: self.accumulation,
            max_lr: self.lr,
            max_updates: self.max_updates,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { out, n, seed, templates } => {
            let cfg = GeneratorConfig { n_conversations: n, seed, ..GeneratorConfig::default() };
            let corpus = generate_synthetic(&cfg, &bank(templates.as_deref())?)?;
            save_corpus(&corpus, &out)?;
            log::info!("wrote {} conversations to {}", corpus.len(), out.display());
        }
        Command::Stats { corpus, json } => {
            let s = corpus_stats(&load_corpus(&corpus)?)?;
            if json {
                print_json(&s);
            } else {
                println!("conversations            {}", s.conversations);
                println!("distinct cause types     {}", s.distinct_cause_types);
                println!("utterances / conv        {:.2}", s.mean_utterances);
                println!("words / utterance        {:.2}", s.mean_words_per_utterance);
                println!("initial-turn cause rate  {:.3}", s.initial_cause_rate);
            }
        }
        Command::Split { corpus, out_dir, seed } => {
            let s = split_corpus(&load_corpus(&corpus)?, SplitRatios::default(), seed)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
                save_corpus(part, out_dir.join(format!("{name}.jsonl")))?;
            }
        }
        Command::TrainEmotion { common, ecf_only, ece_only, query_only } => {
            let data = common.data()?;
            let mut cfg = EmotionTrainConfig::desk(data.vocab.len());
            if common.reference {
                cfg.model = empathia::neural::ModelConfig::reference(data.vocab.len(), 128, false);
            }
            cfg.fit = common.fit();
            cfg.mode = if ecf_only {
                TaskMode::EcfOnly
            } else if ece_only {
                TaskMode::EceOnly
            } else {
                TaskMode::Joint
            };
            cfg.settings.use_history = !query_only;
            let (model, report) = train_joint(&data.train, &data.dev, data.vocab, &cfg)?;
            model.save(&common.out)?;
            log::info!("best dev loss {:.4} after {} updates", report.best_dev_score, report.best_update);
        }
        Command::EvalEmotion { ckpt, corpus, json } => {
            let model = EmotionModel::load(ckpt)?;
            let test = load_corpus(corpus)?;
            let ecf = model.eval_ecf(&test)?;
            let ece = model.eval_ece(&test)?;
            let out = json!({
                "precision": ecf.precision,
                "recall": ecf.recall,
                "exact_match": ece.exact_match,
                "fuzzy_match": ece.fuzzy_match,
            });
            if json {
                print_json(&out);
            } else {
                println!("precision {:.3}  recall {:.3}  accuracy {:.3}", ecf.precision, ecf.recall, ecf.accuracy);
                println!("exact_match {:.3}  fuzzy_match {:.3}", ece.exact_match, ece.fuzzy_match);
            }
        }
        Command::TrainGenerator { common, no_cause, cause_tokens_only, templates } => {
            let data = common.data()?;
            let mut cfg = GeneratorTrainConfig::desk(data.vocab.len());
            if common.reference {
                cfg.model = empathia::neural::ModelConfig::reference(data.vocab.len(), 128, true);
            }
            cfg.fit = common.fit();
            cfg.ablation = if no_cause {
                CauseAblation::NoCause
            } else if cause_tokens_only {
                CauseAblation::IndicatorOnly
            } else {
                CauseAblation::Full
            };
            let bank = bank(templates.as_deref())?;
            let (model, report) = train_generator(&data.train, &data.dev, data.vocab, &cfg, Some(&bank))?;
            model.save(&common.out)?;
            log::info!(
                "dev perplexity {:.2} -> {:.2} after {} updates",
                report.initial_dev_score,
                report.best_dev_score,
                report.best_update
            );
        }
        Command::EvalGenerator { ckpt, corpus, limit } => {
            let model = GeneratorModel::load(ckpt)?;
            let test = load_corpus(corpus)?;
            let ppl = model.eval_perplexity(&test)?;
            let contexts = generator_examples(&test, model.vocab(), model.ablation(), None, model.config().max_len)?;
            let greedy = DecodeConfig::greedy();
            let mut responses = Vec::new();
            for ex in contexts.iter().take(limit.unwrap_or(usize::MAX)) {
                let g = model.continue_from(&ex.prompt(), &greedy, &mut rand::thread_rng())?;
                responses.push(tokenize(&g.text));
            }
            print_json(&json!({
                "ppl": ppl.ppl,
                "dist1": distinct_n(&responses, 1).ok(),
                "dist2": distinct_n(&responses, 2).ok(),
            }));
        }
        Command::Generate { ckpt, query, label, cause, decode } => {
            let model = GeneratorModel::load(ckpt)?;
            let g = model.generate(&[], &query, label, cause.as_deref(), &decode.config())?;
            println!("{}", g.text);
        }
        Command::Chat { engine, debug } => {
            let seed = engine.seed;
            let engine = engine
                .build()?
                .ok_or_else(|| Error::Config("chat needs --emotion-ckpt and --generator-ckpt, or --scripted".into()))?;
            let mut state = DialogueState::new("cli", seed);
            let stdin = io::stdin();
            print!("> ");
            io::stdout().flush().ok();
            for line in stdin.lock().lines() {
                let line = line.map_err(|e| Error::io(Path::new("<stdin>"), e))?;
                if !line.trim().is_empty() {
                    match engine.step(&mut state, &line) {
                        Ok(r) => {
                            println!("{}", r.text);
                            if debug {
                                println!("  {}", serde_json::to_string(&r.meta).expect("meta serializes"));
                            }
                        }
                        Err(e) => eprintln!("error: {e}"),
                    }
                }
                print!("> ");
                io::stdout().flush().ok();
            }
        }
        Command::Eval { responses, votes, ratings, ppl, out } => {
            let report = build_report(&responses, votes.as_deref(), ratings.as_deref(), &ppl)?;
            print!("{}", report.text);
            if let Some(stem) = out {
                for (ext, body) in [("txt", report.text.clone()), ("json", serde_json::to_string_pretty(&report.json).expect("json"))] {
                    let p = stem.with_extension(ext);
                    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
        Command::Serve { port, host, engine, ledger, sessions_dir } => {
            let seed = engine.seed;
            let engine = engine.build()?;
            if engine.is_none() {
                log::warn!("no models loaded; session creation will answer 503");
            }
            let cfg = ServiceConfig { ledger_path: ledger, sessions_dir, seed, ..ServiceConfig::default() };
            let state = ServiceState::new(engine, cfg)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Config(format!("bad address: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("runtime"), e))?;
            rt.block_on(empathia::service::serve(state, addr))?;
        }
    }
    Ok(())
}

fn build_report(
    responses: &Path,
    votes: Option<&Path>,
    ratings: Option<&Path>,
    ppl: &[(String, f64)],
) -> Result<empathia::evalkit::Report> {
    let mut by_model: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for r in load_responses(responses)? {
        by_model.entry(r.model).or_default().push(tokenize(&r.text));
    }
    let mut tallies: BTreeMap<String, VoteLedgerView> = BTreeMap::new();
    if let Some(v) = votes {
        for rec in load_votes(v)? {
            let t = tallies.entry(rec.model).or_default();
            match rec.vote {
                Vote::Up => t.upvotes += 1,
                Vote::Down => t.downvotes += 1,
            }
        }
    }
    let means = match ratings {
        Some(r) => aggregate_ratings(&load_ratings(r)?)?,
        None => BTreeMap::new(),
    };
    let ppl: BTreeMap<&str, f64> = ppl.iter().map(|(m, v)| (m.as_str(), *v)).collect();
    let rows: Vec<ModelMetrics> = by_model
        .iter()
        .map(|(model, rs)| ModelMetrics {
            model: model.clone(),
            ppl: ppl.get(model.as_str()).copied(),
            dist1: distinct_n(rs, 1).ok(),
            dist2: distinct_n(rs, 2).ok(),
            empathy: means.get(model).map(|m| m.empathy),
            relevance: means.get(model).map(|m| m.relevance),
            nsv: tallies.get(model).and_then(|t| t.nsv().ok()),
        })
        .collect();
    emit_report(&rows)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
