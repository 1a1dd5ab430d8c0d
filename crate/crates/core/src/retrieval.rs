//! Exact dense retrieval over an encoded corpus, plus the max-over-chunks
//! baseline for long documents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Corpus, Query};
use crate::encoder::{dot, embed, Encoder, EncoderModel, TokenSequence, MAX_DOC_TOKENS, MAX_QUERY_TOKENS};
use crate::error::{Error, Result};
use crate::structml::{render_untagged, StructuredDocument, Variant};

pub const INDEX_MAGIC: &[u8; 8] = b"SEALIDX1";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_CHUNK_LEN: usize = 512;
pub const DEFAULT_K: usize = 10;

/// Ranked `(doc_id, score)` lists per query, keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedRun {
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, ranking: Vec<(String, f64)>) {
        self.rankings.insert(query_id.into(), ranking);
    }

    /// Appends one document to the end of a query's ranking.
    pub fn push(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, score: f64) {
        self.rankings
            .entry(query_id.into())
            .or_default()
            .push((doc_id.into(), score));
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

/// Encoded corpus. Rows align with `doc_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub doc_ids: Vec<String>,
    pub dim: usize,
    /// Row-major `doc_ids.len() x dim`.
    pub vectors: Vec<f32>,
    pub variant: Variant,
    pub model_fingerprint: [u8; 32],
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.model_fingerprint)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.vectors.len() * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&self.model_fingerprint);
        out.push(self.variant.as_u8());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.doc_ids.len() as u32).to_le_bytes());
        for id in &self.doc_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptIndex(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated"))?;
            let out = &bytes[pos..end];
            pos = end;
            Ok(out)
        };
        if take(8).map_err(|_| Error::BadMagic("index file".into()))? != INDEX_MAGIC {
            return Err(Error::BadMagic("index file".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(Error::VersionMismatch {
                expected: INDEX_VERSION,
                found: version,
            });
        }
        let model_fingerprint: [u8; 32] = take(32)?.try_into().unwrap();
        let variant = Variant::from_u8(take(1)?[0]).ok_or_else(|| corrupt("unknown variant"))?;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?).map_err(|_| corrupt("doc id is not UTF-8"))?;
            doc_ids.push(id.to_string());
        }
        let raw = take(n * dim * 4)?;
        let vectors = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            doc_ids,
            dim,
            vectors,
            variant,
            model_fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Encodes every document of `corpus` under `variant`.
pub fn build_index(corpus: &Corpus, model: &EncoderModel, variant: Variant) -> Result<VectorIndex> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("cannot index an empty corpus".into()));
    }
    let vectors: Vec<f32> = corpus
        .docs()
        .par_iter()
        .map(|doc| {
            let text = variant.render(doc);
            let v = model.embed_text(&text, MAX_DOC_TOKENS);
            v.into_iter().map(|x| x as f32).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("encoder produced a non-finite vector".into()));
    }
    Ok(VectorIndex {
        doc_ids: corpus.docs().iter().map(|d| d.doc_id.clone()).collect(),
        dim: model.dim(),
        vectors,
        variant,
        model_fingerprint: model.fingerprint(),
    })
}

/// Sorts by descending score, ties by ascending doc id, and keeps `k`.
pub fn rank_top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn check_fingerprint(index: &VectorIndex, fingerprint: &[u8; 32]) -> Result<()> {
    if &index.model_fingerprint != fingerprint {
        return Err(Error::ModelMismatch {
            index: index.fingerprint_hex(),
            model: hex::encode(fingerprint),
        });
    }
    Ok(())
}

/// Scores every indexed document against an already encoded query.
pub fn search_vector<E: Encoder + ?Sized>(query: &[f64], index: &VectorIndex, model: &E, k: usize) -> Vec<(String, f64)> {
    let tau = model.temperature();
    let scored = index
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s: f64 = index
                .row(i)
                .iter()
                .zip(query)
                .map(|(&d, &q)| f64::from(d) * q)
                .sum();
            (id.clone(), s / tau)
        })
        .collect();
    rank_top_k(scored, k)
}

/// Exact top-`k` search.
pub fn search(query_text: &str, index: &VectorIndex, model: &EncoderModel, k: usize) -> Result<Vec<(String, f64)>> {
    search_with_fingerprint(query_text, index, model, &model.fingerprint(), k)
}

/// As [`search`], with the model fingerprint computed once by the caller.
pub fn search_with_fingerprint(
    query_text: &str,
    index: &VectorIndex,
    model: &EncoderModel,
    fingerprint: &[u8; 32],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    check_fingerprint(index, fingerprint)?;
    let q = model.embed_text(query_text, MAX_QUERY_TOKENS);
    Ok(search_vector(&q, index, model, k))
}

/// Runs every query against the index.
pub fn search_all(queries: &[Query], index: &VectorIndex, model: &EncoderModel, k: usize) -> Result<RankedRun> {
    let fingerprint = model.fingerprint();
    check_fingerprint(index, &fingerprint)?;
    let results: Vec<_> = queries
        .par_iter()
        .map(|q| {
            let v = model.embed_text(&q.text, MAX_QUERY_TOKENS);
            (q.query_id.clone(), search_vector(&v, index, model, k))
        })
        .collect();
    let mut run = RankedRun::new();
    for (q, ranking) in results {
        run.insert(q, ranking);
    }
    Ok(run)
}

/// Scores of each `chunk_len`-token chunk of the untagged document.
pub fn chunk_scores<E: Encoder + ?Sized>(query: &[f64], doc: &StructuredDocument, model: &E, chunk_len: usize) -> Vec<f64> {
    let tokens = model.tokenize(&render_untagged(doc), usize::MAX);
    if tokens.is_empty() {
        return vec![dot(query, &embed(&tokens, model)) / model.temperature()];
    }
    tokens
        .ids
        .chunks(chunk_len)
        .map(|chunk| {
            let v = embed(&TokenSequence { ids: chunk.to_vec() }, model);
            dot(query, &v) / model.temperature()
        })
        .collect()
}

/// Chunk baseline: a document scores the maximum over its chunks.
pub fn search_chunked<E: Encoder + ?Sized>(
    query_text: &str,
    corpus: &Corpus,
    model: &E,
    chunk_len: usize,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if chunk_len == 0 {
        return Err(Error::InvalidConfig("chunk length must be at least 1".into()));
    }
    let q = embed(&model.tokenize(query_text, MAX_QUERY_TOKENS), model);
    let scored = corpus
        .docs()
        .par_iter()
        .map(|doc| {
            let best = chunk_scores(&q, doc, model, chunk_len)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            (doc.doc_id.clone(), best)
        })
        .collect();
    Ok(rank_top_k(scored, k))
}

pub fn search_all_chunked(
    queries: &[Query],
    corpus: &Corpus,
    model: &EncoderModel,
    chunk_len: usize,
    k: usize,
) -> Result<RankedRun> {
    let mut run = RankedRun::new();
    for q in queries {
        run.insert(q.query_id.clone(), search_chunked(&q.text, corpus, model, chunk_len, k)?);
    }
    Ok(run)
}

/// Writes query and document embeddings as TSV (`kind`, `id`, values) and
/// returns the number of rows.
pub fn export_embeddings(
    index: &VectorIndex,
    queries: &[Query],
    model: &EncoderModel,
    out_path: impl AsRef<Path>,
) -> Result<usize> {
    check_fingerprint(index, &model.fingerprint())?;
    let mut out = String::new();
    let mut rows = 0;
    for q in queries {
        let v = model.embed_text(&q.text, MAX_QUERY_TOKENS);
        write_row(&mut out, "query", &q.query_id, v.iter().map(|&x| x as f32));
        rows += 1;
    }
    for (i, id) in index.doc_ids.iter().enumerate() {
        write_row(&mut out, "doc", id, index.row(i).iter().copied());
        rows += 1;
    }
    let path = out_path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

fn write_row(out: &mut String, kind: &str, id: &str, values: impl Iterator<Item = f32>) {
    out.push_str(kind);
    out.push('\t');
    out.push_str(id);
    for v in values {
        let _ = write!(out, "\t{v}");
    }
    out.push('\n');
}
