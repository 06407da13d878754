use std::fmt::Write as _;

use topicmine::corpus::{
    build_vocabulary, default_stopwords, encode_corpus, preprocess as tokenize_docs, read_documents, read_stopwords,
    Corpus, UnicodeTokenizer, Vocabulary,
};
use topicmine::encoder::{
    cluster_tokens, embed_corpus, import_embeddings, loss_history_csv, refine_corpus, train, EmbeddingSet,
    EncoderParams,
};
use topicmine::evalmetrics::coherence_report;
use topicmine::lda::{fit as fit_lda, load_model, save_model, select_topic_count, LdaModel, SweepResult};
use topicmine::projection::{dominant_topics, emit_points, fuse_vectors, points_svg, silhouette, tsne as run_tsne};
use topicmine::util::derive_seed;

use crate::config::{LdaTokens, RunConfig};
use crate::run::RunDir;
use crate::CliError;

pub const VOCAB: &str = "vocab.tsv";
pub const CORPUS: &str = "corpus.jsonl";
pub const SENSE_VOCAB: &str = "sense_vocab.tsv";
pub const SENSE_CORPUS: &str = "sense_corpus.jsonl";
pub const ENCODER: &str = "encoder.json";
pub const MLM_LOSS: &str = "mlm_loss.csv";
pub const DOC_VECTORS: &str = "doc_vectors.txt";
pub const TOKEN_VECTORS: &str = "token_vectors.txt";
pub const PERPLEXITY: &str = "perplexity.csv";
pub const SWEEP: &str = "sweep.json";
pub const MODEL: &str = "lda_model.txt";
pub const TOPICS: &str = "topics.json";
pub const COHERENCE: &str = "coherence.json";
pub const POINTS: &str = "points.csv";
pub const TSNE_KL: &str = "tsne_kl.csv";
pub const POINTS_SVG: &str = "points.svg";

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn load_word_corpus(run: &RunDir, cfg: &RunConfig) -> Result<Corpus, CliError> {
    let vocab = Vocabulary::from_tsv(&run.read(VOCAB, "preprocess")?, VOCAB, cfg.min_count)?;
    Ok(Corpus::from_jsonl(&run.read(CORPUS, "preprocess")?, CORPUS, vocab)?)
}

/// The corpus the topic model runs on: words, or sense ids from `embed --senses`.
fn load_lda_corpus(run: &RunDir, cfg: &RunConfig) -> Result<Corpus, CliError> {
    match cfg.lda_tokens {
        LdaTokens::Words => load_word_corpus(run, cfg),
        LdaTokens::Senses => {
            let vocab = Vocabulary::from_tsv(&run.read(SENSE_VOCAB, "embed --senses N")?, SENSE_VOCAB, 0)?;
            Ok(Corpus::from_jsonl(&run.read(SENSE_CORPUS, "embed --senses N")?, SENSE_CORPUS, vocab)?)
        }
    }
}

fn load_lda_model(run: &RunDir, corpus: &Corpus) -> Result<LdaModel, CliError> {
    let model = load_model(&run.read(MODEL, "fit")?, MODEL)?;
    if model.vocab_size() != corpus.vocab_size() || model.num_docs() != corpus.num_docs() {
        return Err(CliError::Core(topicmine::Error::Alignment(format!(
            "{MODEL} covers {} documents over {} words but the corpus has {} documents over {} words",
            model.num_docs(),
            model.vocab_size(),
            corpus.num_docs(),
            corpus.vocab_size()
        ))));
    }
    Ok(model)
}

pub fn preprocess(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("preprocess needs --input".into()))?;
    let raw = read_documents(input)?;
    let stop = match &cfg.stopwords {
        Some(p) => read_stopwords(p)?,
        None => default_stopwords(),
    };
    let docs = tokenize_docs(raw, &UnicodeTokenizer, &stop);
    let tokens: Vec<Vec<String>> = docs.iter().map(|d| d.tokens.clone()).collect();
    let vocab = build_vocabulary(&tokens, cfg.min_count)?;
    let corpus = encode_corpus(&docs, vocab);
    let empty = corpus.empty_docs().len();
    if empty > 0 {
        eprintln!("warning: {empty} documents are empty after preprocessing");
    }
    run.write(VOCAB, &corpus.vocab().to_tsv())?;
    run.write(CORPUS, &corpus.to_jsonl())?;
    eprintln!(
        "preprocess: {} documents, {} tokens, vocabulary {}",
        corpus.num_docs(),
        corpus.total_tokens(),
        corpus.vocab_size()
    );
    Ok(())
}

pub fn train_mlm(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_word_corpus(run, cfg)?;
    let outcome = train(&corpus, &cfg.encoder_config(), &cfg.train_config())?;
    if outcome.clamped > 0 {
        eprintln!("warning: {} label probabilities clamped at 1e-12", outcome.clamped);
    }
    run.write(ENCODER, &outcome.params.to_json())?;
    run.write(MLM_LOSS, &loss_history_csv(&outcome))?;
    if let (Some(first), Some(last)) = (outcome.loss_history.first(), outcome.loss_history.last()) {
        eprintln!("train-mlm: {} steps, batch loss {first:.4} -> {last:.4}", outcome.loss_history.len());
    }
    Ok(())
}

pub fn embed(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_word_corpus(run, cfg)?;
    let set: EmbeddingSet = match &cfg.from_file {
        Some(path) => import_embeddings(path, cfg.from_file_tokens.as_deref())?.align_to(&corpus)?,
        None => {
            let params = EncoderParams::from_json(&run.read(ENCODER, "train-mlm")?, ENCODER)?;
            if params.vocab_size != corpus.vocab_size() {
                return Err(CliError::Core(topicmine::Error::Alignment(format!(
                    "{ENCODER} was trained on {} words but the corpus has {}",
                    params.vocab_size,
                    corpus.vocab_size()
                ))));
            }
            embed_corpus(&params, &corpus)?
        }
    };
    let empty = set.empty_docs().len();
    if empty > 0 {
        eprintln!("warning: {empty} documents pooled to the zero vector");
    }
    run.write(DOC_VECTORS, &set.doc_vectors_text())?;
    if let Some(text) = set.token_vectors_text() {
        run.write(TOKEN_VECTORS, &text)?;
    }
    if let Some(k) = cfg.senses {
        let senses = cluster_tokens(&set, k, derive_seed(cfg.seed, 11))?;
        if !senses.converged {
            eprintln!("warning: sense clustering stopped after {} iterations without converging", senses.iterations);
        }
        let refined = refine_corpus(&corpus, &senses)?;
        run.write(SENSE_VOCAB, &refined.vocab().to_tsv())?;
        run.write(SENSE_CORPUS, &refined.to_jsonl())?;
        eprintln!("embed: {} occurrences clustered into {} senses", corpus.total_tokens(), refined.vocab_size());
    }
    eprintln!("embed: {} document vectors of dimension {}", set.num_docs(), set.dim);
    Ok(())
}

pub fn sweep_k(run: &mut RunDir, cfg: &RunConfig) -> Result<SweepResult, CliError> {
    let corpus = load_lda_corpus(run, cfg)?;
    let result = select_topic_count(&corpus, &cfg.lda_config(cfg.kmin), &cfg.sweep_settings())?;
    run.write(PERPLEXITY, &result.to_csv())?;
    run.write(SWEEP, &to_json(&result))?;
    eprintln!("sweep-k: K* = {} over {}..{}", result.best_k, cfg.kmin, cfg.kmax);
    Ok(result)
}

pub fn fit(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_lda_corpus(run, cfg)?;
    let k = match cfg.k {
        Some(k) => k,
        None => {
            let sweep: SweepResult = serde_json::from_str(&run.read(SWEEP, "sweep-k")?).map_err(|e| {
                CliError::Core(topicmine::Error::parse(SWEEP, e.line(), e.to_string()))
            })?;
            sweep.best_k
        }
    };
    let model = fit_lda(&corpus, &cfg.lda_config(k))?;
    let report = model.report(corpus.vocab(), cfg.top_t);
    run.write(MODEL, &save_model(&model))?;
    run.write(TOPICS, &to_json(&report))?;
    let mut summary = String::new();
    for t in &report.topics {
        let words: Vec<&str> = t.keywords.iter().map(|k| k.word.as_str()).collect();
        let _ = writeln!(summary, "topic {}: {}", t.topic_index, words.join(" "));
    }
    print!("{summary}");
    Ok(())
}

pub fn coherence(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_lda_corpus(run, cfg)?;
    let model = load_lda_model(run, &corpus)?;
    let report = coherence_report(&model, &corpus, cfg.top_t, cfg.windows()?)?;
    if report.topics.iter().any(|t| t.degenerate) {
        eprintln!("warning: some topics have fewer than two scorable keywords");
    }
    run.write(COHERENCE, &to_json(&report))?;
    let a = &report.aggregate;
    eprintln!(
        "coherence: u_mass_mean {:.4}, c_v_mean {:.4} (u_mass_sum {:.4}, c_v_paper {:.4})",
        a.u_mass_mean, a.c_v_mean, a.u_mass_sum, a.c_v_paper
    );
    Ok(())
}

pub fn tsne(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_lda_corpus(run, cfg)?;
    let model = load_lda_model(run, &corpus)?;
    let set = EmbeddingSet::from_text(&run.read(DOC_VECTORS, "embed")?, DOC_VECTORS, None)?.align_to(&corpus)?;
    let theta = model.theta();
    let fused = fuse_vectors(&set, &theta, cfg.lambda)?;
    let vectors: Vec<Vec<f64>> = fused.into_iter().map(|f| f.vector).collect();
    let proj = run_tsne(&vectors, &cfg.tsne_settings())?;
    if !proj.unconverged_points.is_empty() {
        eprintln!(
            "warning: bandwidth search did not converge for {} points",
            proj.unconverged_points.len()
        );
    }
    let mut kl = String::from("iteration,kl\n");
    for r in &proj.kl_history {
        let _ = writeln!(kl, "{},{:.9}", r.iteration, r.kl);
    }
    run.write(POINTS, &emit_points(corpus.doc_ids(), &proj, &theta)?)?;
    run.write(TSNE_KL, &kl)?;
    let dominant = dominant_topics(&theta);
    if cfg.svg {
        run.write(POINTS_SVG, &points_svg(&proj, &dominant))?;
    }
    let pts: Vec<Vec<f64>> = proj.points.iter().map(|p| p.to_vec()).collect();
    eprintln!(
        "tsne: final KL {:.4}, silhouette by dominant topic {:.4}",
        proj.kl_history.last().map_or(f64::NAN, |r| r.kl),
        silhouette(&pts, &dominant)
    );
    Ok(())
}

pub fn pipeline(run: &mut RunDir, cfg: &RunConfig) -> Result<(), CliError> {
    preprocess(run, cfg)?;
    if cfg.from_file.is_none() {
        train_mlm(run, cfg)?;
    }
    embed(run, cfg)?;
    let sweep = sweep_k(run, cfg)?;
    let fit_cfg = RunConfig { k: Some(cfg.k.unwrap_or(sweep.best_k)), ..cfg.clone() };
    fit(run, &fit_cfg)?;
    coherence(run, cfg)?;
    tsne(run, cfg)
}
