//! Hashed-vocabulary bi-encoder.
//!
//! Text is tokenized into lowercased alphanumeric runs and single CJK
//! codepoints, each hashed into a fixed-size embedding table. Structural tag
//! tokens (`<h1>`, `</h1>`, ...) get reserved ids at the start of the table,
//! so a tagged rendering and its untagged counterpart share every content
//! token and differ only in the reserved ones.
//!
//! A document vector is the weighted mean of its token rows. Content tokens
//! enclosed by an open structural tag are weighted by `exp(logit[tag])`,
//! all other tokens by 1. The logits start at zero, so an untrained model (and
//! any untagged text) pools with the plain mean; training can then learn how
//! much each kind of element should count.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read as _;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, keyed_rng, Domain};
use crate::structml::STRUCTURAL_TAGS;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_VOCAB_SIZE: usize = 1 << 16;
pub const DEFAULT_RESERVED: usize = 64;
pub const MAX_QUERY_TOKENS: usize = 32;
pub const MAX_DOC_TOKENS: usize = 4096;

pub const MODEL_MAGIC: &[u8; 8] = b"SEALMDL1";
pub const MODEL_VERSION: u32 = 1;
const FLAG_NORMALIZE: u32 = 1;
const FLAG_TAG_WEIGHTS: u32 = 1 << 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Open,
    /// Closes the open slot with this id.
    Close(u32),
    Unused,
}

/// Token-id layout: reserved structural tag tokens followed by hashed
/// content buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    vocab_size: usize,
    reserved: Vec<String>,
    lookup: HashMap<String, u32>,
    slots: Vec<Slot>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit reserved token strings. Entries look
    /// like `<h1>` / `</h1>`; empty strings mark unused slots.
    pub fn new(vocab_size: usize, reserved: Vec<String>) -> Result<Self> {
        if reserved.len() < STRUCTURAL_TAGS.len() || vocab_size <= reserved.len() {
            return Err(Error::InvalidConfig(format!(
                "vocabulary of {vocab_size} with {} reserved slots (need V > T >= {})",
                reserved.len(),
                STRUCTURAL_TAGS.len()
            )));
        }
        let mut lookup = HashMap::new();
        for (id, name) in reserved.iter().enumerate() {
            if !name.is_empty() && lookup.insert(name.clone(), id as u32).is_some() {
                return Err(Error::InvalidConfig(format!("reserved token `{name}` repeated")));
            }
        }
        let slots = reserved
            .iter()
            .map(|name| {
                if let Some(tag) = name.strip_prefix("</").and_then(|n| n.strip_suffix('>')) {
                    lookup
                        .get(&format!("<{tag}>"))
                        .map_or(Slot::Unused, |&open| Slot::Close(open))
                } else if name.starts_with('<') && name.ends_with('>') {
                    Slot::Open
                } else {
                    Slot::Unused
                }
            })
            .collect();
        Ok(Self {
            vocab_size,
            reserved,
            lookup,
            slots,
        })
    }

    /// Standard layout: whitelist tag `k` opens at id `2k` and closes at
    /// `2k + 1`; the remaining reserved slots stay unused.
    pub fn structural(vocab_size: usize, n_reserved: usize) -> Result<Self> {
        let needed = 2 * STRUCTURAL_TAGS.len();
        if n_reserved < needed {
            return Err(Error::InvalidConfig(format!(
                "{n_reserved} reserved slots cannot hold {needed} tag tokens"
            )));
        }
        let mut reserved: Vec<String> = STRUCTURAL_TAGS
            .iter()
            .flat_map(|t| [format!("<{t}>"), format!("</{t}>")])
            .collect();
        reserved.resize(n_reserved, String::new());
        Self::new(vocab_size, reserved)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_reserved(&self) -> usize {
        self.reserved.len()
    }

    pub fn reserved(&self) -> &[String] {
        &self.reserved
    }

    /// Reserved id of a literal tag token such as `<h1>`.
    pub fn tag_id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        (id as usize) < self.reserved.len()
    }

    pub fn content_id(&self, token: &str) -> u32 {
        let buckets = (self.vocab_size - self.reserved.len()) as u64;
        (self.reserved.len() as u64 + fnv1a64(token.as_bytes()) % buckets) as u32
    }

    /// Splits `text` into token ids, keeping at most `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenSequence {
        let mut ids = Vec::new();
        let mut chars = text.char_indices().peekable();
        while let Some(&(start, c)) = chars.peek() {
            if ids.len() >= max_len {
                break;
            }
            if c == '<' {
                if let Some(end) = text[start..].find('>').filter(|&e| e <= 16) {
                    let candidate = text[start..=start + end].to_ascii_lowercase();
                    if let Some(id) = self.tag_id(&candidate) {
                        ids.push(id);
                        while chars.peek().is_some_and(|&(i, _)| i <= start + end) {
                            chars.next();
                        }
                        continue;
                    }
                }
                chars.next();
            } else if is_cjk(c) {
                let mut buf = [0u8; 4];
                ids.push(self.content_id(c.encode_utf8(&mut buf)));
                chars.next();
            } else if c.is_alphanumeric() {
                let mut word = String::new();
                while let Some(&(_, w)) = chars.peek() {
                    if !w.is_alphanumeric() || is_cjk(w) {
                        break;
                    }
                    word.extend(w.to_lowercase());
                    chars.next();
                }
                ids.push(self.content_id(&word));
            } else {
                chars.next();
            }
        }
        TokenSequence { ids }
    }

    fn slot(&self, id: u32) -> Option<Slot> {
        self.slots.get(id as usize).copied()
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // extensions B-F, supplement
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Parameter access needed to encode and differentiate.
///
/// Implemented by [`EncoderModel`]; tests implement it over `f64` tables to
/// check gradients with finite differences.
pub trait Encoder: Sync {
    fn vocab(&self) -> &Vocabulary;
    fn dim(&self) -> usize;
    fn temperature(&self) -> f64;
    fn normalize(&self) -> bool;
    /// `out += weight * row(id)`
    fn add_row(&self, id: u32, weight: f64, out: &mut [f64]);
    fn row_dot(&self, id: u32, v: &[f64]) -> f64;
    /// Pooling logit of the open-tag slot `slot`.
    fn tag_logit(&self, slot: u32) -> f64;

    fn tokenize(&self, text: &str, max_len: usize) -> TokenSequence {
        self.vocab().tokenize(text, max_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub vocab_size: usize,
    pub n_reserved: usize,
    pub temperature: f32,
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            vocab_size: DEFAULT_VOCAB_SIZE,
            n_reserved: DEFAULT_RESERVED,
            temperature: 1.0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    vocab: Vocabulary,
    dim: usize,
    temperature: f32,
    normalize: bool,
    /// `V x dim`, row-major.
    table: Vec<f32>,
    /// One pooling logit per reserved slot; only open-tag slots are used.
    tag_logits: Vec<f32>,
}

impl EncoderModel {
    /// Table entries uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn random(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let bound = 1.0 / (model.dim as f32).sqrt();
        let mut rng = keyed_rng(Domain::Init, seed, 0, 0);
        for w in &mut model.table {
            *w = rng.gen_range(-bound..=bound);
        }
        Ok(model)
    }

    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if !(config.temperature.is_finite() && config.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                config.temperature
            )));
        }
        let vocab = Vocabulary::structural(config.vocab_size, config.n_reserved)?;
        Ok(Self {
            dim: config.dim,
            temperature: config.temperature,
            normalize: config.normalize,
            table: vec![0.0; config.vocab_size * config.dim],
            tag_logits: vec![0.0; vocab.n_reserved()],
            vocab,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.vocab_size()
    }

    pub fn row(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.table[start..start + self.dim]
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f32] {
        &mut self.table
    }

    pub fn tag_logits(&self) -> &[f32] {
        &self.tag_logits
    }

    pub fn tag_logits_mut(&mut self) -> &mut [f32] {
        &mut self.tag_logits
    }

    /// Pooling weight currently given to content inside `<tag>`.
    pub fn tag_weight(&self, tag: &str) -> Option<f64> {
        let id = self.vocab.tag_id(&format!("<{tag}>"))?;
        Some(f64::from(self.tag_logits[id as usize]).exp())
    }

    pub fn set_temperature(&mut self, temperature: f32) -> Result<()> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(())
    }

    pub fn embed_text(&self, text: &str, max_len: usize) -> Vec<f64> {
        embed(&self.tokenize(text, max_len), self)
    }

    /// Serializes to the little-endian model file layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let has_weights = self.tag_logits.iter().any(|&w| w != 0.0);
        let mut flags = 0;
        if self.normalize {
            flags |= FLAG_NORMALIZE;
        }
        if has_weights {
            flags |= FLAG_TAG_WEIGHTS;
        }
        let mut out = Vec::with_capacity(64 + self.table.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.vocab.vocab_size() as u32,
            self.dim as u32,
            self.vocab.n_reserved() as u32,
            flags,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.temperature.to_le_bytes());
        for name in self.vocab.reserved() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for w in &self.table {
            out.extend_from_slice(&w.to_le_bytes());
        }
        if has_weights {
            for w in &self.tag_logits {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic("model file".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let vocab_size = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n_reserved = r.u32()? as usize;
        let flags = r.u32()?;
        let temperature = r.f32()?;
        if dim == 0 || !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::CorruptTable(format!(
                "invalid header (dim {dim}, temperature {temperature})"
            )));
        }
        let mut reserved = Vec::with_capacity(n_reserved.min(1 << 16));
        for _ in 0..n_reserved {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::CorruptTable("reserved tag name is not UTF-8".into()))?;
            reserved.push(name.to_string());
        }
        let vocab = Vocabulary::new(vocab_size, reserved)
            .map_err(|e| Error::CorruptTable(e.to_string()))?;
        let n = vocab_size
            .checked_mul(dim)
            .ok_or_else(|| Error::CorruptTable("table size overflows".into()))?;
        let table = r.f32s(n)?;
        let tag_logits = if flags & FLAG_TAG_WEIGHTS != 0 {
            r.f32s(n_reserved)?
        } else {
            vec![0.0; n_reserved]
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptTable(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if table.iter().chain(&tag_logits).any(|w| !w.is_finite()) {
            return Err(Error::CorruptTable("non-finite parameter".into()));
        }
        Ok(Self {
            vocab,
            dim,
            temperature,
            normalize: flags & FLAG_NORMALIZE != 0,
            table,
            tag_logits,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptTable(format!(
                    "file truncated: wanted {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::CorruptTable("table size overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Encoder for EncoderModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn temperature(&self) -> f64 {
        f64::from(self.temperature)
    }

    fn normalize(&self) -> bool {
        self.normalize
    }

    fn add_row(&self, id: u32, weight: f64, out: &mut [f64]) {
        for (o, &w) in out.iter_mut().zip(self.row(id)) {
            *o += weight * f64::from(w);
        }
    }

    fn row_dot(&self, id: u32, v: &[f64]) -> f64 {
        self.row(id)
            .iter()
            .zip(v)
            .map(|(&w, &x)| f64::from(w) * x)
            .sum()
    }

    fn tag_logit(&self, slot: u32) -> f64 {
        f64::from(self.tag_logits[slot as usize])
    }
}

/// Forward pass of one text, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub vector: Vec<f64>,
    ids: Vec<u32>,
    weights: Vec<f64>,
    /// Open-tag slot whose logit weights each token, if any.
    scopes: Vec<Option<u32>>,
    weight_sum: f64,
    pooled: Vec<f64>,
    norm: f64,
}

pub fn encode<E: Encoder + ?Sized>(model: &E, tokens: &TokenSequence) -> Encoding {
    let dim = model.dim();
    let vocab = model.vocab();
    let mut stack: Vec<u32> = Vec::new();
    let mut weights = Vec::with_capacity(tokens.len());
    let mut scopes = Vec::with_capacity(tokens.len());
    for &id in &tokens.ids {
        let (w, scope) = match vocab.slot(id) {
            Some(Slot::Open) => {
                stack.push(id);
                (1.0, None)
            }
            Some(Slot::Close(open)) => {
                if let Some(pos) = stack.iter().rposition(|&s| s == open) {
                    stack.truncate(pos);
                }
                (1.0, None)
            }
            Some(Slot::Unused) => (1.0, None),
            None => match stack.last() {
                Some(&open) => (model.tag_logit(open).exp(), Some(open)),
                None => (1.0, None),
            },
        };
        weights.push(w);
        scopes.push(scope);
    }

    let weight_sum: f64 = weights.iter().sum();
    let mut pooled = vec![0.0; dim];
    if weight_sum > 0.0 {
        for (&id, &w) in tokens.ids.iter().zip(&weights) {
            model.add_row(id, w, &mut pooled);
        }
        for p in &mut pooled {
            *p /= weight_sum;
        }
    }
    let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vector = if model.normalize() && norm > 0.0 {
        pooled.iter().map(|x| x / norm).collect()
    } else {
        pooled.clone()
    };
    Encoding {
        vector,
        ids: tokens.ids.clone(),
        weights,
        scopes,
        weight_sum,
        pooled,
        norm,
    }
}

/// Weighted mean of the token rows, unit-normalized when the model says so.
/// Empty input gives the zero vector.
pub fn embed<E: Encoder + ?Sized>(tokens: &TokenSequence, model: &E) -> Vec<f64> {
    encode(model, tokens).vector
}

/// `<query, doc> / temperature`.
pub fn score<E: Encoder + ?Sized>(query: &[f64], doc: &[f64], model: &E) -> Result<f64> {
    for v in [query, doc] {
        if v.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                actual: v.len(),
            });
        }
    }
    Ok(dot(query, doc) / model.temperature())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse parameter gradient: touched table rows plus tag logits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub tag_logits: BTreeMap<u32, f64>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, id: u32, scale: f64, g: &[f64]) {
        let row = self.rows.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (r, &x) in row.iter_mut().zip(g) {
            *r += scale * x;
        }
    }

    pub fn add_tag_logit(&mut self, slot: u32, g: f64) {
        *self.tag_logits.entry(slot).or_insert(0.0) += g;
    }

    /// `self += scale * other`, visiting `other` in key order.
    pub fn merge_scaled(&mut self, other: &Gradients, scale: f64) {
        for (&id, g) in &other.rows {
            self.add_row(id, scale, g);
        }
        for (&slot, &g) in &other.tag_logits {
            self.add_tag_logit(slot, scale * g);
        }
    }

    pub fn norm(&self) -> f64 {
        let rows: f64 = self.rows.values().flatten().map(|g| g * g).sum();
        let tags: f64 = self.tag_logits.values().map(|g| g * g).sum();
        (rows + tags).sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.tag_logits.is_empty()
    }
}

impl Encoding {
    /// Backpropagates `grad` (d loss / d vector) into `out`.
    pub fn backward<E: Encoder + ?Sized>(&self, model: &E, grad: &[f64], out: &mut Gradients) {
        if self.weight_sum == 0.0 {
            return;
        }
        let grad_pooled: Vec<f64> = if model.normalize() {
            if self.norm == 0.0 {
                return;
            }
            let vg = dot(&self.vector, grad);
            grad.iter()
                .zip(&self.vector)
                .map(|(g, v)| (g - v * vg) / self.norm)
                .collect()
        } else {
            grad.to_vec()
        };
        let pooled_dot = dot(&self.pooled, &grad_pooled);
        for ((&id, &w), scope) in self.ids.iter().zip(&self.weights).zip(&self.scopes) {
            out.add_row(id, w / self.weight_sum, &grad_pooled);
            if let Some(slot) = *scope {
                let row_dot = model.row_dot(id, &grad_pooled);
                out.add_tag_logit(slot, w / self.weight_sum * (row_dot - pooled_dot));
            }
        }
    }
}
