#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use structret::corpus::{Corpus, TrainingExample};
use structret::encoder::Vocabulary;
use structret::{Element, Encoder, StructuredDocument};

pub const TUTORIAL_DOC: &str = "<title> [Nanny-level tutorial] VS Code installation and configuration of Python </title> <h1> Configure Jupyter in VS Code </h1> <h2> Install Jupyter extension </h2> <p> Choose the version that suits your computer and start downloading. </p>";

/// Encoder over a 64-bit table so finite differences are meaningful.
pub struct F64Encoder {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub temperature: f64,
    pub normalize: bool,
    pub table: Vec<f64>,
    pub tag_logits: Vec<f64>,
}

impl F64Encoder {
    pub fn random(rng: &mut ChaCha8Rng, content_buckets: usize, dim: usize) -> Self {
        let vocab = Vocabulary::structural(64 + content_buckets, 64).unwrap();
        let n = vocab.vocab_size() * dim;
        Self {
            dim,
            temperature: rng.gen_range(0.5..2.0),
            normalize: rng.gen_bool(0.5),
            table: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            tag_logits: (0..64).map(|_| rng.gen_range(-0.7..0.7)).collect(),
            vocab,
        }
    }
}

impl Encoder for F64Encoder {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn normalize(&self) -> bool {
        self.normalize
    }

    fn add_row(&self, id: u32, weight: f64, out: &mut [f64]) {
        let row = &self.table[id as usize * self.dim..][..self.dim];
        for (o, w) in out.iter_mut().zip(row) {
            *o += weight * w;
        }
    }

    fn row_dot(&self, id: u32, v: &[f64]) -> f64 {
        let row = &self.table[id as usize * self.dim..][..self.dim];
        row.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    fn tag_logit(&self, slot: u32) -> f64 {
        self.tag_logits[slot as usize]
    }
}

const WORDS: [&str; 14] = [
    "alpha", "beta", "gamma", "delta", "jupyter", "python", "install", "code", "kernel", "notebook",
    "theme", "plugin", "path", "shell",
];
const TAGS: [&str; 7] = ["title", "h1", "h2", "p", "li", "td", "code"];

pub fn random_words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_doc(rng: &mut ChaCha8Rng, doc_id: &str, max_elements: usize) -> StructuredDocument {
    let n = rng.gen_range(1..=max_elements);
    let elements = (0..n)
        .map(|_| Element::new(random_words(rng, 1, 3), *TAGS.choose(rng).unwrap()))
        .collect();
    StructuredDocument::new(doc_id, elements)
}

/// A corpus of `n_docs` random documents and one example with `d0` as the
/// positive and the next `n_negs` documents as negatives.
pub fn random_example(rng: &mut ChaCha8Rng, n_docs: usize, n_negs: usize) -> (Corpus, TrainingExample) {
    let docs: Vec<_> = (0..n_docs).map(|i| random_doc(rng, &format!("d{i}"), 4)).collect();
    let example = TrainingExample {
        query_id: "q".into(),
        query_text: random_words(rng, 1, 3),
        pos_doc_id: "d0".into(),
        neg_doc_ids: (1..=n_negs).map(|i| format!("d{i}")).collect(),
    };
    (Corpus::new(docs).unwrap(), example)
}

const STRUCT: [&str; 12] = ["title", "h1", "h3", "p", "li", "td", "th", "strong", "em", "code", "pre", "blockquote"];
const NOISE: [&str; 6] = ["div", "span", "a", "section", "font", "nav"];
const TEXT: [&str; 12] = [
    "VS Code", "installation", "Jupyter  kernel", "naïve café", "x < y", "a&amp;b", "下载", "\tindent\n",
    "3 > 2", "emoji 🎉", "  ", "plain",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..=3);
    (0..n).map(|_| *TEXT.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_node(rng: &mut ChaCha8Rng, depth: usize, out: &mut String) {
    match rng.gen_range(0..10) {
        0..=3 => out.push_str(&random_text(rng)),
        4..=6 if depth < 3 => {
            let tag = *STRUCT.choose(rng).unwrap();
            let attr = if rng.gen_bool(0.3) { " class=\"x>y\" id='z'" } else { "" };
            let upper = rng.gen_bool(0.2);
            let name = if upper { tag.to_uppercase() } else { tag.to_string() };
            out.push_str(&format!("<{name}{attr}>"));
            for _ in 0..rng.gen_range(0..3) {
                random_node(rng, depth + 1, out);
            }
            out.push_str(&format!("</{name}>"));
        }
        7 if depth < 3 => {
            let tag = *NOISE.choose(rng).unwrap();
            out.push_str(&format!("<{tag} href=\"/p?a=1&b=2\">"));
            random_node(rng, depth + 1, out);
            out.push_str(&format!("</{tag}>"));
        }
        8 => out.push_str(["<!-- note <p>x</p> -->", "<br/>", "<img src='a.png'>", "<hr>"].choose(rng).unwrap()),
        _ => out.push_str(["<script>var s = '<p>';</script>", "<style>p { color: red }</style>", "\n"].choose(rng).unwrap()),
    }
}

/// Random, well-nested HTML mixing structural tags, noise tags, comments,
/// scripts and stray markup characters.
pub fn random_html(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::from("<html><body>");
    for _ in 0..rng.gen_range(3..16) {
        random_node(rng, 0, &mut out);
    }
    out.push_str("</body></html>");
    out
}
