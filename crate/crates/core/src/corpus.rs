//! Datasets: document collections, queries, training examples with sampled
//! negatives, element masking and a synthetic structured corpus.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Qrels;
use crate::rng::{fnv1a64, keyed_rng, Domain};
use crate::structml::{parse_raw_html, MaskedDocument, StructuredDocument};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub html: String,
}

/// One line of a queries file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub query_text: String,
    pub pos_doc_id: String,
    pub neg_doc_ids: Vec<String>,
}

/// Parsed documents with lookup by id. Order is the input order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<StructuredDocument>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<StructuredDocument>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.doc_id.is_empty() {
                return Err(Error::InvalidConfig(format!("document #{i} has an empty doc_id")));
            }
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.doc_id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    /// Sanitizes and parses every raw document.
    pub fn from_raw(raw: &[RawDocument]) -> Result<Self> {
        let docs = raw
            .iter()
            .map(|r| parse_raw_html(&r.doc_id, &r.html))
            .collect::<Result<Vec<_>>>()?;
        Self::new(docs)
    }

    pub fn get(&self, doc_id: &str) -> Option<&StructuredDocument> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, doc_id: &str) -> Result<&StructuredDocument> {
        self.get(doc_id)
            .ok_or_else(|| Error::MissingDocument(doc_id.to_string()))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn docs(&self) -> &[StructuredDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_raw(&read_jsonl::<RawDocument>(path)?)
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let queries: Vec<Query> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for q in &queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::DuplicateId(q.query_id.clone()));
        }
    }
    Ok(queries)
}

/// Masking configuration: seed and fraction of elements whose tags are
/// removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub seed: u64,
    pub ratio: f64,
}

impl MaskPlan {
    pub fn new(seed: u64, ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidConfig(format!(
                "mask ratio must lie in [0, 1], got {ratio}"
            )));
        }
        Ok(Self { seed, ratio })
    }
}

/// Number of elements to mask: `ratio * n` rounded half up, at least one
/// when both are positive, never more than `n`.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    if n == 0 || ratio <= 0.0 {
        return 0;
    }
    // the epsilon keeps decimal halves such as 0.3 * 5 on the upper side
    let m = (ratio * n as f64 + 0.5 + 1e-9).floor() as usize;
    m.clamp(1, n)
}

/// Draws the masked element set for `doc`. Deterministic in
/// `(plan.seed, doc_id, draw_id, plan.ratio)`.
pub fn plan_mask(doc: &StructuredDocument, plan: &MaskPlan, draw_id: u64) -> MaskedDocument {
    let n = doc.len();
    let m = mask_count(plan.ratio, n);
    if m == 0 {
        return MaskedDocument::none(doc);
    }
    let mut rng = keyed_rng(Domain::Mask, plan.seed, fnv1a64(doc.doc_id.as_bytes()), draw_id);
    MaskedDocument::new(doc.doc_id.clone(), index::sample(&mut rng, n, m))
}

/// Samples `count` distinct non-relevant documents for `query_id`.
pub fn sample_negatives(
    query_id: &str,
    corpus: &Corpus,
    qrels: &Qrels,
    count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<&str> = corpus
        .docs()
        .iter()
        .map(|d| d.doc_id.as_str())
        .filter(|d| !qrels.is_relevant(query_id, d))
        .collect();
    if candidates.len() < count {
        return Err(Error::InsufficientNegatives {
            query_id: query_id.to_string(),
            needed: count,
            available: candidates.len(),
        });
    }
    let mut rng = keyed_rng(Domain::Negatives, seed, fnv1a64(query_id.as_bytes()), 0);
    Ok(index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i].to_string())
        .collect())
}

/// One example per relevant `(query, doc)` pair, in query order.
pub fn build_training_set(
    corpus: &Corpus,
    queries: &[Query],
    qrels: &Qrels,
    negatives: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let known: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    if let Some((missing, _)) = qrels.queries().find(|(q, _)| !known.contains(q)) {
        return Err(Error::MissingQuery(missing.to_string()));
    }
    let mut out = Vec::new();
    for query in queries {
        let Some(relevant) = qrels.relevant(&query.query_id) else {
            continue;
        };
        if let Some(doc) = relevant.iter().find(|d| !corpus.contains(d)) {
            return Err(Error::MissingDocument(doc.clone()));
        }
        let negs = sample_negatives(&query.query_id, corpus, qrels, negatives, seed)?;
        for pos in relevant {
            out.push(TrainingExample {
                query_id: query.query_id.clone(),
                query_text: query.text.clone(),
                pos_doc_id: pos.clone(),
                neg_doc_ids: negs.clone(),
            });
        }
    }
    Ok(out)
}

/// Reads corpus, queries and qrels, writes the training JSON-lines file and
/// returns the number of examples.
pub fn build_training_file(
    corpus_path: impl AsRef<Path>,
    queries_path: impl AsRef<Path>,
    qrels_path: impl AsRef<Path>,
    negatives: usize,
    seed: u64,
    out_path: impl AsRef<Path>,
) -> Result<usize> {
    let corpus = read_corpus(corpus_path)?;
    let queries = read_queries(queries_path)?;
    let qrels = crate::trec::read_qrels(qrels_path)?;
    let examples = build_training_set(&corpus, &queries, &qrels, negatives, seed)?;
    write_jsonl(out_path, &examples)?;
    Ok(examples.len())
}

pub fn read_training_file(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    read_jsonl(path)
}

/// A generated corpus in which relevance is carried by document structure.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub documents: Vec<RawDocument>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    /// Key terms of each query, in query order.
    pub key_terms: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::from_raw(&self.documents)
    }

    /// Writes `corpus.jsonl`, `queries.jsonl` and `qrels.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(dir.join("corpus.jsonl"), &self.documents)?;
        write_jsonl(dir.join("queries.jsonl"), &self.queries)?;
        crate::trec::write_qrels(dir.join("qrels.txt"), &self.qrels)
    }
}

const SYLLABLES: [&str; 40] = [
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "qui", "ro", "su",
    "ta", "ve", "wi", "xo", "yu", "za", "bre", "cla", "dro", "fle", "gri", "plo", "sta", "tri",
    "vor", "nel", "mar", "tis", "lun", "pex", "dor", "kan", "sel", "rim", "ost",
];

const QUERY_TEMPLATES: [&str; 4] = [
    "how to use {} {}",
    "what is {} {}",
    "{} {} setup guide",
    "configure {} {} quickly",
];

struct WordMint {
    used: HashSet<String>,
}

impl WordMint {
    fn fresh(&mut self, rng: &mut impl Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.used.insert(word.clone()) {
                return word;
            }
        }
    }

    fn fresh_n(&mut self, rng: &mut impl Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh(rng)).collect()
    }
}

/// Filler words of one synthetic page: three sections, each a subheading,
/// a paragraph and three list items.
struct Filler {
    title: Vec<String>,
    h1: Vec<String>,
    sections: Vec<(Vec<String>, Vec<String>, Vec<Vec<String>>)>,
}

impl Filler {
    fn draw(rng: &mut impl Rng, pool: &[String]) -> Self {
        let mut pick = |n: usize| -> Vec<String> { (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect() };
        Filler {
            title: pick(2),
            h1: pick(1),
            sections: (0..3).map(|_| (pick(2), pick(10), (0..3).map(|_| pick(3)).collect())).collect(),
        }
    }
}

/// `head` terms go to `<title>` and `<h1>`; `body` terms are spliced into
/// the paragraphs of the first two sections. 17 elements in all.
fn render_synthetic(head: &[String], body: &[String], filler: &Filler) -> String {
    let mut html = format!(
        "<html><head><title>{} {}</title></head><body>\n<h1 class=\"headline\">{} {}</h1>\n",
        head.join(" "),
        filler.title.join(" "),
        head.join(" "),
        filler.h1.join(" "),
    );
    for (i, (heading, para, items)) in filler.sections.iter().enumerate() {
        let mut words: Vec<&str> = para.iter().map(String::as_str).collect();
        if i < 2 {
            let mid = words.len() / 2;
            words.splice(mid..mid, body.iter().map(String::as_str));
        }
        html.push_str(&format!("<div class=\"section\"><h2>{}</h2>\n<p>{}</p>\n<ul>", heading.join(" "), words.join(" ")));
        for item in items {
            html.push_str(&format!("<li>{}</li>", item.join(" ")));
        }
        html.push_str("</ul></div>\n");
    }
    html.push_str("</body></html>");
    html
}

/// Generates `n_queries` queries, each with one relevant document and
/// `n_distractors` distractors.
///
/// The relevant document carries the query's key terms in `<title>` and
/// `<h1>` and a companion topic in its paragraphs. Every distractor carries
/// the same key terms only inside `<p>` under a different title topic. The
/// first distractor uses the companion topic as its title and reuses the
/// relevant document's filler words, so without tags it is the same bag of
/// words as the relevant document; only structure tells them apart.
pub fn make_synthetic_corpus(n_queries: usize, n_distractors: usize, seed: u64) -> Result<SyntheticCorpus> {
    if n_queries == 0 || n_distractors == 0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs at least one query and one distractor".into(),
        ));
    }
    let mut rng = keyed_rng(Domain::Synthetic, seed, 0, 0);
    let mut mint = WordMint {
        used: HashSet::new(),
    };
    for template in QUERY_TEMPLATES {
        for w in template.split_whitespace() {
            mint.used.insert(w.to_string());
        }
    }
    let filler_pool = mint.fresh_n(&mut rng, 200);

    let mut documents = Vec::with_capacity(n_queries * (n_distractors + 1));
    let mut queries = Vec::with_capacity(n_queries);
    let mut qrels = Qrels::new();
    let mut key_terms = Vec::with_capacity(n_queries);
    let mut doc_ids = BTreeSet::new();
    let mut fresh_id = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let id = format!("doc-{:08x}", rng.gen::<u32>());
        if doc_ids.insert(id.clone()) {
            return id;
        }
    };

    for qi in 0..n_queries {
        let keys = mint.fresh_n(&mut rng, 2);
        let companion = mint.fresh_n(&mut rng, 2);
        let query_id = format!("q{:04}", qi + 1);
        let template = QUERY_TEMPLATES[qi % QUERY_TEMPLATES.len()];
        let text = template
            .replacen("{}", &keys[0], 1)
            .replacen("{}", &keys[1], 1);
        queries.push(Query {
            query_id: query_id.clone(),
            text,
        });

        let filler = Filler::draw(&mut rng, &filler_pool);
        let relevant_id = fresh_id(&mut rng);
        documents.push(RawDocument {
            doc_id: relevant_id.clone(),
            html: render_synthetic(&keys, &companion, &filler),
        });
        qrels.insert(query_id.clone(), relevant_id);

        for j in 0..n_distractors {
            let html = if j == 0 {
                render_synthetic(&companion, &keys, &filler)
            } else {
                let topic = mint.fresh_n(&mut rng, 2);
                render_synthetic(&topic, &keys, &Filler::draw(&mut rng, &filler_pool))
            };
            documents.push(RawDocument {
                doc_id: fresh_id(&mut rng),
                html,
            });
        }
        key_terms.push(keys);
    }

    Ok(SyntheticCorpus {
        documents,
        queries,
        qrels,
        key_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structml::{render_untagged, Element};

    fn doc_with(n: usize, id: &str) -> StructuredDocument {
        StructuredDocument::new(
            id,
            (0..n).map(|i| Element::new(format!("t{i}"), "p")).collect(),
        )
    }

    #[test]
    fn mask_count_examples() {
        assert_eq!(mask_count(0.10, 10), 1);
        assert_eq!(mask_count(0.5, 10), 5);
        assert_eq!(mask_count(0.0, 10), 0);
        assert_eq!(mask_count(0.01, 3), 1);
        assert_eq!(mask_count(0.1, 15), 2);
        assert_eq!(mask_count(0.3, 5), 2);
        assert_eq!(mask_count(1.0, 7), 7);
        assert_eq!(mask_count(0.5, 0), 0);
    }

    #[test]
    fn plan_mask_is_deterministic_and_sized() {
        let doc = doc_with(10, "d");
        let plan = MaskPlan::new(42, 0.5).unwrap();
        let a = plan_mask(&doc, &plan, 3);
        assert_eq!(a, plan_mask(&doc, &plan, 3));
        assert_eq!(a.len(), 5);
        assert!(a.masked_indices.iter().all(|&i| i < 10));
        assert!(plan_mask(&doc, &MaskPlan::new(42, 0.0).unwrap(), 0).is_empty());
        assert!(MaskPlan::new(1, 1.5).is_err());
    }

    fn small_corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| doc_with(1, &format!("d{i}"))).collect()).unwrap()
    }

    #[test]
    fn negatives_exclude_relevant_and_repeat() {
        let corpus = small_corpus(1000);
        let mut qrels = Qrels::new();
        qrels.insert("q", "d5");
        let negs = sample_negatives("q", &corpus, &qrels, 8, 7).unwrap();
        assert_eq!(negs.len(), 8);
        assert!(!negs.contains(&"d5".to_string()));
        assert_eq!(negs.iter().collect::<HashSet<_>>().len(), 8);
        assert_eq!(negs, sample_negatives("q", &corpus, &qrels, 8, 7).unwrap());
        assert!(sample_negatives("q", &corpus, &qrels, 0, 7).unwrap().is_empty());
    }

    #[test]
    fn negatives_can_run_out() {
        let corpus = small_corpus(3);
        let mut qrels = Qrels::new();
        qrels.insert("q", "d0");
        let err = sample_negatives("q", &corpus, &qrels, 3, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientNegatives { available: 2, .. }));
    }

    #[test]
    fn training_set_cardinality_and_errors() {
        let corpus = small_corpus(10);
        let queries: Vec<Query> = (0..3)
            .map(|i| Query {
                query_id: format!("q{i}"),
                text: format!("query {i}"),
            })
            .collect();
        let mut qrels = Qrels::new();
        for i in 0..3 {
            qrels.insert(format!("q{i}"), format!("d{i}"));
        }
        let set = build_training_set(&corpus, &queries, &qrels, 2, 1).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.iter().all(|e| e.neg_doc_ids.len() == 2));
        assert!(build_training_set(&corpus, &queries, &Qrels::new(), 2, 1)
            .unwrap()
            .is_empty());

        let mut bad = qrels.clone();
        bad.insert("q0", "nope");
        assert!(matches!(
            build_training_set(&corpus, &queries, &bad, 2, 1),
            Err(Error::MissingDocument(d)) if d == "nope"
        ));
        let mut bad = qrels;
        bad.insert("q9", "d1");
        assert!(matches!(
            build_training_set(&corpus, &queries, &bad, 2, 1),
            Err(Error::MissingQuery(q)) if q == "q9"
        ));
    }

    #[test]
    fn duplicate_doc_ids_are_rejected() {
        let docs = vec![doc_with(1, "a"), doc_with(1, "a")];
        assert!(matches!(Corpus::new(docs), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn synthetic_cardinality() {
        let s = make_synthetic_corpus(1, 1, 3).unwrap();
        assert_eq!(s.documents.len(), 2);
        assert_eq!(s.queries.len(), 1);
        assert_eq!(s.qrels.n_pairs(), 1);
        let s = make_synthetic_corpus(50, 9, 3).unwrap();
        assert_eq!(s.documents.len(), 500);
        assert!(make_synthetic_corpus(0, 1, 3).is_err());
    }

    #[test]
    fn synthetic_relevance_lives_in_the_title() {
        let s = make_synthetic_corpus(20, 4, 11).unwrap();
        let corpus = s.corpus().unwrap();
        for (query, keys) in s.queries.iter().zip(&s.key_terms) {
            let rel = s.qrels.relevant(&query.query_id).unwrap().iter().next().unwrap();
            let doc = corpus.get(rel).unwrap();
            let title = &doc.elements[0];
            assert_eq!(title.tag, "title");
            assert!(keys.iter().all(|k| title.text.contains(k.as_str())));
            assert!(keys.iter().all(|k| query.text.contains(k.as_str())));
        }
    }

    #[test]
    fn synthetic_twin_matches_untagged_bag() {
        let s = make_synthetic_corpus(3, 3, 5).unwrap();
        let corpus = s.corpus().unwrap();
        let bag = |d: &StructuredDocument| {
            let mut w: Vec<String> = render_untagged(d)
                .split(' ')
                .map(str::to_string)
                .collect();
            w.sort();
            w
        };
        let rel = corpus.docs()[0].clone();
        let twin = corpus.docs()[1].clone();
        assert_eq!(bag(&rel), bag(&twin));
        assert_ne!(rel.elements, twin.elements);
        assert_ne!(bag(&rel), bag(&corpus.docs()[2]));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic_corpus(5, 2, 9).unwrap();
        let b = make_synthetic_corpus(5, 2, 9).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.queries, b.queries);
        let c = make_synthetic_corpus(5, 2, 10).unwrap();
        assert_ne!(a.documents, c.documents);
    }
}
