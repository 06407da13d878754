//! Document/token embedding sets and their decimal text exchange format.
//!
//! ```text
//! dim=<d> count=<n>
//! <key> <v1> <v2> ... <vd>
//! ```
//!
//! Keys are document ids in doc-vector files and `<doc-id>:<position>` in
//! token-vector files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{decode_utf8, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    TrainedEncoder,
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub doc_ids: Vec<String>,
    /// One pooled vector per document.
    pub doc_vectors: Vec<Vec<f64>>,
    /// Per document, one vector per token occurrence.
    pub token_vectors: Option<Vec<Vec<Vec<f64>>>>,
    pub source: EmbeddingSource,
}

/// Mean of a document's token vectors. An empty document pools to the zero
/// vector and the returned flag is set.
pub fn pool_document(token_vectors: &[Vec<f64>], dim: usize) -> (Vec<f64>, bool) {
    if token_vectors.is_empty() {
        return (vec![0.0; dim], true);
    }
    let mut out = vec![0.0; dim];
    for v in token_vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = token_vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    (out, false)
}

impl EmbeddingSet {
    pub fn num_docs(&self) -> usize {
        self.doc_vectors.len()
    }

    /// Documents whose pooled vector came from no tokens.
    pub fn empty_docs(&self) -> Vec<usize> {
        match &self.token_vectors {
            Some(tv) => (0..tv.len()).filter(|&m| tv[m].is_empty()).collect(),
            None => (0..self.doc_vectors.len())
                .filter(|&m| self.doc_vectors[m].iter().all(|&x| x == 0.0))
                .collect(),
        }
    }

    pub fn doc_vectors_text(&self) -> String {
        let mut out = format!("dim={} count={}\n", self.dim, self.doc_vectors.len());
        for (id, v) in self.doc_ids.iter().zip(&self.doc_vectors) {
            write_row(&mut out, id, v);
        }
        out
    }

    pub fn token_vectors_text(&self) -> Option<String> {
        let tv = self.token_vectors.as_ref()?;
        let count: usize = tv.iter().map(Vec::len).sum();
        let mut out = format!("dim={} count={}\n", self.dim, count);
        for (id, doc) in self.doc_ids.iter().zip(tv) {
            for (pos, v) in doc.iter().enumerate() {
                write_row(&mut out, &format!("{id}:{pos}"), v);
            }
        }
        Some(out)
    }

    /// Parses a doc-vector file and, optionally, a token-vector file.
    pub fn from_text(doc_text: &str, doc_source: &str, token: Option<(&str, &str)>) -> Result<Self> {
        let (dim, rows) = parse_rows(doc_text, doc_source)?;
        let mut doc_ids = Vec::with_capacity(rows.len());
        let mut doc_vectors = Vec::with_capacity(rows.len());
        let mut index = HashMap::new();
        for (line, key, v) in rows {
            if index.insert(key.clone(), doc_ids.len()).is_some() {
                return Err(Error::parse(doc_source, line, format!("duplicate document id {key:?}")));
            }
            doc_ids.push(key);
            doc_vectors.push(v);
        }
        let token_vectors = match token {
            None => None,
            Some((text, source)) => {
                let (tdim, rows) = parse_rows(text, source)?;
                if tdim != dim {
                    return Err(Error::parse(source, 1, format!("dimension {tdim} differs from document vectors ({dim})")));
                }
                let mut tv: Vec<Vec<Vec<f64>>> = vec![Vec::new(); doc_ids.len()];
                for (line, key, v) in rows {
                    let (doc, pos) = key
                        .rsplit_once(':')
                        .ok_or_else(|| Error::parse(source, line, format!("key {key:?} is not <doc-id>:<position>")))?;
                    let pos: usize = pos
                        .parse()
                        .map_err(|_| Error::parse(source, line, format!("bad position in key {key:?}")))?;
                    let &m = index
                        .get(doc)
                        .ok_or_else(|| Error::parse(source, line, format!("unknown document id {doc:?}")))?;
                    if pos != tv[m].len() {
                        return Err(Error::parse(source, line, format!("document {doc}: expected position {}, found {pos}", tv[m].len())));
                    }
                    tv[m].push(v);
                }
                Some(tv)
            }
        };
        Ok(EmbeddingSet {
            dim,
            doc_ids,
            doc_vectors,
            token_vectors,
            source: EmbeddingSource::File,
        })
    }

    /// Reorders to the corpus document order and checks token alignment.
    pub fn align_to(&self, corpus: &Corpus) -> Result<EmbeddingSet> {
        let index: HashMap<&str, usize> = self.doc_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut doc_vectors = Vec::with_capacity(corpus.num_docs());
        let mut token_vectors = self.token_vectors.as_ref().map(|_| Vec::with_capacity(corpus.num_docs()));
        for (m, id) in corpus.doc_ids().iter().enumerate() {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Alignment(format!("document {id}: no embedding found")))?;
            doc_vectors.push(self.doc_vectors[i].clone());
            if let (Some(out), Some(tv)) = (token_vectors.as_mut(), self.token_vectors.as_ref()) {
                let n = corpus.doc(m).len();
                if tv[i].len() != n {
                    return Err(Error::Alignment(format!(
                        "document {id}: {} token vectors for {n} tokens",
                        tv[i].len()
                    )));
                }
                out.push(tv[i].clone());
            }
        }
        Ok(EmbeddingSet {
            dim: self.dim,
            doc_ids: corpus.doc_ids().to_vec(),
            doc_vectors,
            token_vectors,
            source: self.source,
        })
    }
}

fn write_row(out: &mut String, key: &str, v: &[f64]) {
    out.push_str(key);
    for x in v {
        let _ = write!(out, " {x:.9}");
    }
    out.push('\n');
}

fn parse_header(line: &str, source: &str) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for part in line.split_whitespace() {
        match part.split_once('=') {
            Some(("dim", v)) => dim = v.parse().ok(),
            Some(("count", v)) => count = v.parse().ok(),
            _ => return Err(Error::parse(source, 1, format!("unexpected header field {part:?}"))),
        }
    }
    match (dim, count) {
        (Some(d), Some(c)) if d > 0 => Ok((d, c)),
        _ => Err(Error::parse(source, 1, "header must be 'dim=<d> count=<n>' with d >= 1")),
    }
}

type Row = (usize, String, Vec<f64>);

fn parse_rows(text: &str, source: &str) -> Result<(usize, Vec<Row>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(source, 1, "missing header"))?;
    let (dim, count) = parse_header(header, source)?;
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines {
        let row = rows.len() + 1;
        if row > count {
            return Err(Error::parse(source, i + 1, format!("row {row} exceeds header count {count}")));
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().expect("non-empty line").to_string();
        let v: Vec<f64> = parts
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source, i + 1, format!("bad number {t:?}")))
            })
            .collect::<Result<_>>()?;
        if v.len() != dim {
            return Err(Error::parse(source, i + 1, format!("row {row} has {} values, expected {dim}", v.len())));
        }
        rows.push((i + 1, key, v));
    }
    if rows.len() < count {
        let missing = rows.len() + 1;
        return Err(Error::parse(
            source,
            missing + 1,
            format!("row {missing} missing: header declares {count} rows, found {}", rows.len()),
        ));
    }
    Ok((dim, rows))
}

pub fn export_embeddings(set: &EmbeddingSet, doc_path: &Path, token_path: Option<&Path>) -> Result<()> {
    fs::write(doc_path, set.doc_vectors_text()).map_err(|e| Error::io(doc_path, e))?;
    if let (Some(p), Some(text)) = (token_path, set.token_vectors_text()) {
        fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

pub fn import_embeddings(doc_path: &Path, token_path: Option<&Path>) -> Result<EmbeddingSet> {
    let read = |p: &Path| -> Result<String> {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        Ok(decode_utf8(&bytes, &p.display().to_string())?.to_string())
    };
    let doc_text = read(doc_path)?;
    let token_text = token_path.map(read).transpose()?;
    let doc_name = doc_path.display().to_string();
    let token_name = token_path.map(|p| p.display().to_string());
    EmbeddingSet::from_text(
        &doc_text,
        &doc_name,
        token_text.as_deref().zip(token_name.as_deref()),
    )
}
