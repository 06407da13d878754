//! Document ingestion, tokenization, stopword removal and vocabulary encoding.
//!
//! Documents flow through `tokenize` -> `remove_stopwords` -> `build_vocabulary`
//! -> `encode_corpus`. The resulting [`Corpus`] holds dense token ids and is the
//! input to every downstream stage.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: usize = 2;

/// Small English stopword list used when no stopword file is supplied.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "but", "by", "can", "could", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is",
    "it", "its", "just", "me", "my", "no", "not", "of", "on", "one", "or", "our", "out", "she",
    "so", "some", "than", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "to", "too", "up", "very", "was", "we", "were", "what", "when", "which", "while",
    "who", "will", "with", "would", "you", "your",
];

/// A raw document as ingested, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<String>,
}

/// Splits raw text into surface tokens.
pub trait Tokenizer {
    fn tokenize(&self, raw: &str) -> Vec<String>;
}

/// Lowercasing Unicode word-boundary tokenizer with per-character fallback
/// for Han and kana codepoints.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnicodeTokenizer;

impl Tokenizer for UnicodeTokenizer {
    fn tokenize(&self, raw: &str) -> Vec<String> {
        let lower = raw.to_lowercase();
        let mut out = Vec::new();
        for word in lower.unicode_words() {
            let mut run = String::new();
            for ch in word.chars() {
                if is_cjk(ch) {
                    if !run.is_empty() {
                        out.push(std::mem::take(&mut run));
                    }
                    out.push(ch.to_string());
                } else {
                    run.push(ch);
                }
            }
            if !run.is_empty() {
                out.push(run);
            }
        }
        out.retain(|t| t.chars().any(char::is_alphanumeric));
        out
    }
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x3040..=0x30FF        // hiragana, katakana
        | 0x3400..=0x4DBF      // extension A
        | 0x4E00..=0x9FFF      // unified ideographs
        | 0xF900..=0xFAFF      // compatibility ideographs
        | 0x20000..=0x2EBEF    // extensions B-F
        | 0x2F800..=0x2FA1F)
}

/// Tokenizes with the built-in rules.
pub fn tokenize(raw: &str) -> Vec<String> {
    UnicodeTokenizer.tokenize(raw)
}

/// Validates raw bytes as UTF-8, reporting the offset of the first bad byte.
pub fn decode_utf8<'a>(bytes: &'a [u8], source_name: &str) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        source_name: source_name.to_string(),
        offset: e.valid_up_to(),
    })
}

pub fn remove_stopwords(tokens: Vec<String>, stopwords: &HashSet<String>) -> Vec<String> {
    if stopwords.is_empty() {
        return tokens;
    }
    tokens.into_iter().filter(|t| !stopwords.contains(t)).collect()
}

pub fn default_stopwords() -> HashSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Parses a stopword file: one token per line, `#` lines ignored. Entries are lowercased.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = decode_utf8(&bytes, &path.display().to_string())?;
    Ok(parse_stopwords(text))
}

/// Tokenizes and filters a batch of raw documents.
pub fn preprocess(
    raw: Vec<RawDocument>,
    tokenizer: &dyn Tokenizer,
    stopwords: &HashSet<String>,
) -> Vec<Document> {
    raw.into_iter()
        .map(|r| {
            let tokens = remove_stopwords(tokenizer.tokenize(&r.text), stopwords);
            Document {
                id: r.id,
                raw: r.text,
                tokens,
            }
        })
        .collect()
}

/// JSON-lines documents with `id` and `text` fields. Blank lines are skipped.
pub fn parse_jsonl_documents(text: &str, source_name: &str) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(line)
            .map_err(|e| Error::parse(source_name, i + 1, format!("malformed JSON: {e}")))?;
        docs.push(doc);
    }
    check_ids(&docs, source_name)?;
    Ok(docs)
}

/// One document per line, ids `doc-<line-number>` (1-based).
pub fn parse_plain_documents(text: &str) -> Vec<RawDocument> {
    text.lines()
        .enumerate()
        .map(|(i, line)| RawDocument {
            id: format!("doc-{}", i + 1),
            text: line.to_string(),
        })
        .collect()
}

fn check_ids(docs: &[RawDocument], source_name: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, d) in docs.iter().enumerate() {
        if d.id.is_empty() || d.id.chars().any(char::is_whitespace) {
            return Err(Error::parse(
                source_name,
                i + 1,
                format!("document id {:?} must be non-empty and contain no whitespace", d.id),
            ));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(Error::parse(source_name, i + 1, format!("duplicate document id {:?}", d.id)));
        }
    }
    Ok(())
}

/// Reads a corpus file. `.jsonl`, `.ndjson` and `.json` are parsed as JSON lines,
/// anything else as plain text.
pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let text = decode_utf8(&bytes, &name)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") | Some("json") => parse_jsonl_documents(text, &name),
        _ => Ok(parse_plain_documents(text)),
    }
}

/// Bijective id <-> surface map with corpus frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    min_count: usize,
}

impl Vocabulary {
    /// Builds from `(surface, count)` entries already in id order.
    pub fn from_entries(entries: Vec<(String, u64)>, min_count: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut surfaces = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        for (id, (surface, count)) in entries.into_iter().enumerate() {
            if surface.is_empty() {
                return Err(Error::config(format!("empty surface string for id {id}")));
            }
            if ids.insert(surface.clone(), id).is_some() {
                return Err(Error::config(format!("duplicate surface {surface:?}")));
            }
            surfaces.push(surface);
            counts.push(count);
        }
        Ok(Vocabulary {
            surfaces,
            ids,
            counts,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id_of(&self, surface: &str) -> Option<usize> {
        self.ids.get(surface).copied()
    }

    pub fn surface_of(&self, id: usize) -> &str {
        &self.surfaces[id]
    }

    pub fn count_of(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Tab-separated `id surface count` rows sorted by id, with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tsurface\tcount\n");
        for (id, (s, c)) in self.surfaces.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{id}\t{s}\t{c}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str, source_name: &str, min_count: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line.starts_with("id\t") {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(source_name, i + 1, "expected 3 tab-separated columns"));
            }
            let id: usize = cols[0]
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, "bad id"))?;
            if id != entries.len() {
                return Err(Error::parse(source_name, i + 1, format!("ids must be dense and sorted, got {id}")));
            }
            let count: u64 = cols[2]
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, "bad count"))?;
            entries.push((cols[1].to_string(), count));
        }
        Vocabulary::from_entries(entries, min_count)
    }
}

/// Keeps tokens occurring at least `min_count` times; ids by descending
/// frequency, ties by surface string.
pub fn build_vocabulary<S: AsRef<str>>(docs: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::config("min_count must be >= 1"));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in docs {
        for t in doc {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries = kept.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
    Vocabulary::from_entries(entries, min_count)
}

/// Token-id documents plus their vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    doc_ids: Vec<String>,
    docs: Vec<Vec<usize>>,
    vocab: Vocabulary,
}

impl Corpus {
    pub fn new(doc_ids: Vec<String>, docs: Vec<Vec<usize>>, vocab: Vocabulary) -> Result<Self> {
        if doc_ids.len() != docs.len() {
            return Err(Error::Alignment(format!(
                "{} document ids for {} documents",
                doc_ids.len(),
                docs.len()
            )));
        }
        let v = vocab.len();
        for (id, doc) in doc_ids.iter().zip(&docs) {
            if let Some(&bad) = doc.iter().find(|&&t| t >= v) {
                return Err(Error::config(format!(
                    "document {id}: token id {bad} out of range for vocabulary of size {v}"
                )));
            }
        }
        Ok(Corpus { doc_ids, docs, vocab })
    }

    /// Number of documents (M).
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn docs(&self) -> &[Vec<usize>] {
        &self.docs
    }

    pub fn doc(&self, m: usize) -> &[usize] {
        &self.docs[m]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Per-document token counts (N_m).
    pub fn doc_lengths(&self) -> Vec<usize> {
        self.docs.iter().map(Vec::len).collect()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Documents that hold no in-vocabulary tokens.
    pub fn empty_docs(&self) -> Vec<usize> {
        (0..self.docs.len()).filter(|&m| self.docs[m].is_empty()).collect()
    }

    pub fn decode(&self, m: usize) -> Vec<&str> {
        self.docs[m].iter().map(|&t| self.vocab.surface_of(t)).collect()
    }

    /// Subset of documents in the given order, sharing the vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            doc_ids: indices.iter().map(|&i| self.doc_ids[i].clone()).collect(),
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
            vocab: self.vocab.clone(),
        }
    }

    /// JSON lines `{"id": .., "ids": [..]}` in document order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, doc) in self.doc_ids.iter().zip(&self.docs) {
            let line = serde_json::json!({ "id": id, "ids": doc, "empty": doc.is_empty() });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, source_name: &str, vocab: Vocabulary) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            ids: Vec<usize>,
        }
        let mut ids = Vec::new();
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line)
                .map_err(|e| Error::parse(source_name, i + 1, format!("malformed JSON: {e}")))?;
            ids.push(row.id);
            docs.push(row.ids);
        }
        Corpus::new(ids, docs, vocab)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }
}

/// Maps documents onto vocabulary ids, dropping out-of-vocabulary tokens.
/// Documents that end up empty are kept so indices stay aligned.
pub fn encode_corpus(docs: &[Document], vocab: Vocabulary) -> Corpus {
    let doc_ids = docs.iter().map(|d| d.id.clone()).collect();
    let encoded = docs
        .iter()
        .map(|d| d.tokens.iter().filter_map(|t| vocab.id_of(t)).collect())
        .collect();
    Corpus {
        doc_ids,
        docs: encoded,
        vocab,
    }
}

/// Encodes documents against an existing vocabulary (e.g. held-out text).
pub fn encode_with<S: AsRef<str>>(ids: Vec<String>, docs: &[Vec<S>], vocab: Vocabulary) -> Corpus {
    let encoded = docs
        .iter()
        .map(|d| d.iter().filter_map(|t| vocab.id_of(t.as_ref())).collect())
        .collect();
    Corpus {
        doc_ids: ids,
        docs: encoded,
        vocab,
    }
}
