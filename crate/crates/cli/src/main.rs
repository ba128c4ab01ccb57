//! `modq`: build corpora, train forests, evaluate rankings and serve them.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modq_core::corpus::{
    chronological_split, downsample, ingest_comments, synth_generate, train_val_test_split, ArticleSet, CommentSet,
    CorpusFormat, CorpusStore, SplitSpec, SynthConfig,
};
use modq_core::eval::{evaluate_articles, evaluate_classification, random_ranker_ndcg};
use modq_core::explain::{decompose_prediction, error_analysis};
use modq_core::features::{load_embeddings, EmbeddingTable, FeatureConfig};
use modq_core::forest::{ForestScorer, Hyperparams, InformedBaseline, Model, BASELINE_THRESHOLD};
use modq_core::pipeline::train_model;
use modq_service::AppState;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] modq_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "modq", version, about = "Rank news comments by their chance of being featured")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a comment JSONL file and report what was accepted.
    Ingest {
        path: PathBuf,
        /// Write the canonical (sorted, normalized) corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with planted signal.
    Synth {
        #[arg(long, default_value_t = 200)]
        articles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        mean_comments: f64,
        #[arg(long, default_value_t = 1500)]
        users: usize,
    },
    /// Chronological, train/val/test and downsampling splits.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Directory receiving one JSON id list per split.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a forest on the downsampled training split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Rf)]
        preset: Preset,
        #[command(flatten)]
        split: SplitArgs,
        /// Train on these comment ids instead of the derived split.
        #[arg(long)]
        train_ids: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        trees: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// NDCG@k per article plus baselines.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// JSON list of article ids, or `all`.
        #[arg(long, default_value = "all")]
        articles: String,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
        k: Vec<usize>,
        /// JSON list of comment ids for threshold metrics.
        #[arg(long)]
        comments: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        shuffles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Break one prediction down into per-feature contributions.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        comment: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Feature means and contributions per TP/FP/TN/FN outcome.
    ErrorAnalysis {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "all")]
        articles: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve recommendations, surveys and pick recording over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "picks.jsonl")]
        picks: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// Share of articles, oldest first, used for training and tuning.
    #[arg(long, default_value_t = 0.5)]
    chrono: f64,
    /// Train, validation and test shares of those articles' comments.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    tvt: Vec<f64>,
    /// Featured share after downsampling the training comments.
    #[arg(long, default_value_t = 0.05)]
    downsample: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SplitArgs {
    fn spec(&self) -> Result<SplitSpec> {
        let [train, val, test] = self.tvt[..] else {
            return Err(CliError::Usage("--tvt takes exactly three shares".into()));
        };
        let spec = SplitSpec {
            chrono_fraction: self.chrono,
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            downsample_ratio: self.downsample,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Rf,
    RfEmb,
    RfBow,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: path.into(), source })?;
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn load_corpus(path: &Path) -> Result<CorpusStore> {
    Ok(ingest_comments(path, CorpusFormat::Jsonl)?)
}

fn load_optional_embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    Ok(path.map(load_embeddings).transpose()?)
}

fn article_set(spec: &str, corpus: &CorpusStore) -> Result<ArticleSet> {
    if spec == "all" {
        return Ok(ArticleSet(corpus.article_ids().map(String::from).collect()));
    }
    let set: ArticleSet = read_json(Path::new(spec))?;
    if let Some(a) = set.ids().iter().find(|a| !corpus.has_article(a)) {
        return Err(modq_core::Error::UnknownArticle(a.clone()).into());
    }
    Ok(set)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: "<stdout>".into(), source })?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { path, out } => {
            let corpus = load_corpus(&path)?;
            let m = corpus.manifest();
            println!(
                "{} records accepted, {} rejected, {} articles",
                m.record_count,
                m.rejected_count,
                corpus.article_count()
            );
            for s in &m.sources {
                println!("source {} sha256 {} ({} lines)", s.name, s.sha256, s.lines);
            }
            for d in &m.diagnostics {
                println!("  {d}");
            }
            if let Some(out) = out {
                corpus.save_jsonl(&out)?;
            }
        }
        Command::Synth { articles, seed, out, mean_comments, users } => {
            let cfg = SynthConfig {
                n_articles: articles,
                mean_comments,
                n_users: users,
                ..SynthConfig::default()
            };
            let corpus = synth_generate(&cfg, seed)?;
            corpus.save_jsonl(&out)?;
            let featured = corpus.comments().iter().filter(|c| c.status.is_featured()).count();
            println!("{} comments on {articles} articles ({featured} featured) -> {}", corpus.len(), out.display());
        }
        Command::Split { corpus, split, out } => {
            let corpus = load_corpus(&corpus)?;
            let spec = split.spec()?;
            let (set1, set2) = chronological_split(&corpus, &spec)?;
            let tvt = train_val_test_split(&corpus, &set1, &spec)?;
            let ds = downsample(&corpus, &tvt.train, spec.downsample_ratio, spec.seed)?;
            println!("articles: set1 {} / set2 {}", set1.len(), set2.len());
            for (name, set) in [("train", &tvt.train), ("val", &tvt.val), ("test", &tvt.test)] {
                println!("{name}: {} comments, {} featured", set.len(), set.featured_count(&corpus));
            }
            println!(
                "train downsampled: {} comments ({} featured, {} of {} requested non-featured)",
                ds.set.len(),
                ds.featured,
                ds.kept_negatives,
                ds.requested_negatives
            );
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
                write_json(&dir.join("set1.json"), &set1)?;
                write_json(&dir.join("set2.json"), &set2)?;
                write_json(&dir.join("train.json"), &tvt.train)?;
                write_json(&dir.join("val.json"), &tvt.val)?;
                write_json(&dir.join("test.json"), &tvt.test)?;
                write_json(&dir.join("train_downsampled.json"), &ds.set)?;
            }
        }
        Command::Train { corpus, preset, split, train_ids, embeddings, trees, out } => {
            let corpus = load_corpus(&corpus)?;
            let emb = load_optional_embeddings(embeddings.as_deref())?;
            let spec = split.spec()?;
            let (mut hp, config) = match preset {
                Preset::Rf => (Hyperparams::rf(spec.seed), FeatureConfig::default()),
                Preset::RfBow => (Hyperparams::rf_bow(spec.seed), FeatureConfig { use_bow: true, use_embeddings: false }),
                Preset::RfEmb => (Hyperparams::rf_emb(spec.seed), FeatureConfig { use_bow: false, use_embeddings: true }),
            };
            if let Some(t) = trees {
                hp.n_estimators = t;
            }
            if config.use_embeddings && emb.is_none() {
                return Err(CliError::Usage("the rf-emb preset needs --embeddings".into()));
            }
            let train = match train_ids {
                Some(p) => read_json::<CommentSet>(&p)?,
                None => {
                    let (set1, _) = chronological_split(&corpus, &spec)?;
                    let tvt = train_val_test_split(&corpus, &set1, &spec)?;
                    downsample(&corpus, &tvt.train, spec.downsample_ratio, spec.seed)?.set
                }
            };
            let model = train_model(&corpus, &train, config, &hp, emb.as_ref())?;
            model.save(&out)?;
            println!(
                "{} trees, {} features, trained on {} comments -> {} (sha256 {})",
                model.forest.trees.len(),
                model.schema.len(),
                train.len(),
                out.display(),
                model.digest()?
            );
        }
        Command::Eval { model, corpus, articles, k, comments, embeddings, shuffles, seed, json } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&corpus)?;
            let emb = load_optional_embeddings(embeddings.as_deref())?;
            let articles = article_set(&articles, &corpus)?;
            let scorer = ForestScorer::new(&model, emb.as_ref())?;
            let mut report = evaluate_articles(&scorer, &corpus, &articles, &k)?;
            let mut baseline = evaluate_articles(&InformedBaseline::default(), &corpus, &articles, &k)?;
            if let Some(p) = comments {
                let set: CommentSet = read_json(&p)?;
                report.classification.insert("comments".into(), evaluate_classification(&scorer, &corpus, &set, 0.5)?);
                baseline.classification.insert(
                    "comments".into(),
                    evaluate_classification(&InformedBaseline::default(), &corpus, &set, BASELINE_THRESHOLD)?,
                );
            }
            let random = random_ranker_ndcg(&corpus, &articles, &k, shuffles, seed)?;
            if json {
                print_json(&serde_json::json!({ "model": report, "baseline": baseline, "random": random }))?;
            } else {
                print!("{}", report.to_text());
                print!("{}", baseline.to_text());
                let cells: Vec<String> = random.iter().map(|(k, v)| format!("NDCG@{k}={v:.4}")).collect();
                println!("random ({shuffles} shuffles): {}", cells.join(" "));
            }
        }
        Command::Explain { model, corpus, comment, top, embeddings, json } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&corpus)?;
            let emb = load_optional_embeddings(embeddings.as_deref())?;
            let scorer = ForestScorer::new(&model, emb.as_ref())?;
            let fv = scorer.featurizer().featurize(&corpus, &comment)?;
            let b = decompose_prediction(&model.forest, &fv)?;
            if json {
                print_json(&b)?;
            } else {
                println!("{comment}: p(featured) = {:.4}, bias {:.4}", b.predicted, b.bias);
                for (j, c) in b.top(top) {
                    println!("  {:<24} value {:>10.3}  contribution {:+.4}", model.schema.names[j], fv.values[j], c);
                }
            }
        }
        Command::ErrorAnalysis { model, corpus, articles, k, threshold, top, embeddings, json } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&corpus)?;
            let emb = load_optional_embeddings(embeddings.as_deref())?;
            let articles = article_set(&articles, &corpus)?;
            let scorer = ForestScorer::new(&model, emb.as_ref())?;
            let report = error_analysis(&scorer, &corpus, &articles, k, threshold, top)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Serve { model, corpus, addr, picks, embeddings } => {
            let model = Model::load(&model)?;
            let corpus = load_corpus(&corpus)?;
            let emb = load_optional_embeddings(embeddings.as_deref())?;
            ForestScorer::new(&model, emb.as_ref())?;
            let state = Arc::new(AppState::new(model, corpus, emb, &picks)?);
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "<runtime>".into(), source })?;
            rt.block_on(modq_service::serve(state, addr))
                .map_err(|source| CliError::Io { path: addr.to_string().into(), source })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
