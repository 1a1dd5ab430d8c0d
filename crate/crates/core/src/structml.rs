//! HTML structural preprocessing.
//!
//! Raw HTML is first reduced to a whitelist of structural tags by
//! [`sanitize_html`], then flattened into an ordered sequence of
//! `(text, tag)` elements by [`parse_html`]. The element sequence can be
//! rendered back with tags intact, with every tag removed, or with the tags of
//! a chosen subset of elements removed.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tags that carry structural meaning. Everything else is stripped.
pub const STRUCTURAL_TAGS: [&str; 21] = [
    "title",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "p",
    "li",
    "ul",
    "ol",
    "table",
    "tr",
    "td",
    "th",
    "strong",
    "b",
    "em",
    "code",
    "pre",
    "blockquote",
];

/// Tag assigned to text that sits outside any structural tag.
pub const DEFAULT_TAG: &str = "p";

// Non-whitelisted tags that separate words when removed. Inline tags such as
// `span` or `a` are removed without inserting a space.
const BREAKING_TAGS: [&str; 24] = [
    "br", "hr", "div", "section", "article", "header", "footer", "nav", "main", "aside", "dd",
    "dt", "dl", "figure", "figcaption", "form", "tbody", "thead", "tfoot", "caption", "body",
    "html", "head", "img",
];

// Elements whose content is dropped together with the tags.
const DROPPED_BLOCKS: [&str; 4] = ["script", "style", "noscript", "template"];

pub fn is_structural_tag(name: &str) -> bool {
    STRUCTURAL_TAGS.contains(&name)
}

/// One `(text, tag)` unit of a structured document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Element {
    pub text: String,
    pub tag: String,
}

impl Element {
    pub fn new(text: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredDocument {
    pub doc_id: String,
    pub elements: Vec<Element>,
}

impl StructuredDocument {
    pub fn new(doc_id: impl Into<String>, elements: Vec<Element>) -> Self {
        Self {
            doc_id: doc_id.into(),
            elements,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// A document together with the set of elements whose tags are removed.
///
/// Holds the source `doc_id` rather than a borrow so masks can be planned,
/// stored and shipped independently of the document they apply to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedDocument {
    pub doc_id: String,
    pub masked_indices: BTreeSet<usize>,
}

impl MaskedDocument {
    pub fn new(doc_id: impl Into<String>, masked_indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            doc_id: doc_id.into(),
            masked_indices: masked_indices.into_iter().collect(),
        }
    }

    /// Mask covering every element of `doc`.
    pub fn all(doc: &StructuredDocument) -> Self {
        Self::new(doc.doc_id.clone(), 0..doc.len())
    }

    pub fn none(doc: &StructuredDocument) -> Self {
        Self::new(doc.doc_id.clone(), std::iter::empty())
    }

    pub fn len(&self) -> usize {
        self.masked_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked_indices.is_empty()
    }
}

/// Which rendering of a document is fed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tagged,
    Untagged,
}

impl Variant {
    pub fn render(self, doc: &StructuredDocument) -> String {
        match self {
            Variant::Tagged => render_tagged(doc),
            Variant::Untagged => render_untagged(doc),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Variant::Tagged => 0,
            Variant::Untagged => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Variant::Tagged),
            1 => Some(Variant::Untagged),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Tagged => "tagged",
            Variant::Untagged => "untagged",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tagged" => Ok(Variant::Tagged),
            "untagged" => Ok(Variant::Untagged),
            other => Err(format!("unknown variant `{other}` (expected tagged|untagged)")),
        }
    }
}

/// A tag-like construct recognized by the scanner.
#[derive(Debug, PartialEq, Eq)]
struct TagToken {
    /// Lowercased tag name.
    name: String,
    closing: bool,
    self_closing: bool,
    /// Byte length of the whole `<...>` construct.
    len: usize,
}

/// Tries to read a tag starting at `s[0] == '<'`. Returns `None` when the
/// text at this position is not a tag (e.g. `a < b`).
fn scan_tag(s: &str) -> Option<TagToken> {
    let bytes = s.as_bytes();
    debug_assert_eq!(bytes.first(), Some(&b'<'));
    let mut i = 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'-') {
        i += 1;
    }
    if i == name_start || !bytes[name_start].is_ascii_alphabetic() {
        return None;
    }
    let name = s[name_start..i].to_ascii_lowercase();
    // attributes: skip to the closing '>' honouring quotes
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let c = bytes[i];
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == b'"' || c == b'\'' => quote = Some(c),
            None if c == b'>' => {
                let self_closing = i > name_start && bytes[i - 1] == b'/';
                return Some(TagToken {
                    name,
                    closing,
                    self_closing,
                    len: i + 1,
                });
            }
            None if c == b'<' => return None,
            None => {}
        }
        i += 1;
    }
    None
}

fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Strips comments, script/style blocks, line breaks, attributes and every
/// non-structural tag. Text inside removed tags is kept in place.
///
/// Best effort: a `<` that does not start a recognizable tag is kept as text.
pub fn sanitize_html(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    // set when a word-breaking tag was removed and the next text must not be
    // glued onto the previous word
    let mut pending_break = false;

    while let Some(pos) = rest.find('<') {
        push_text(&mut out, &rest[..pos], &mut pending_break);
        rest = &rest[pos..];

        if rest.starts_with("<!--") {
            rest = match rest[4..].find("-->") {
                Some(end) => &rest[4 + end + 3..],
                None => "",
            };
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            rest = match rest.find('>') {
                Some(end) => &rest[end + 1..],
                None => "",
            };
            continue;
        }

        let Some(tag) = scan_tag(rest) else {
            push_text(&mut out, "<", &mut pending_break);
            rest = &rest[1..];
            continue;
        };
        rest = &rest[tag.len..];

        if !tag.closing && DROPPED_BLOCKS.contains(&tag.name.as_str()) {
            if !tag.self_closing {
                let close = format!("</{}", tag.name);
                rest = match find_ascii_ci(rest, &close) {
                    Some(end) => {
                        let after = &rest[end..];
                        match after.find('>') {
                            Some(gt) => &after[gt + 1..],
                            None => "",
                        }
                    }
                    None => "",
                };
            }
            continue;
        }

        if is_structural_tag(&tag.name) {
            if tag.self_closing {
                continue;
            }
            pending_break = false;
            out.push('<');
            if tag.closing {
                out.push('/');
            }
            out.push_str(&tag.name);
            out.push('>');
        } else if BREAKING_TAGS.contains(&tag.name.as_str()) {
            pending_break = true;
        }
    }
    push_text(&mut out, rest, &mut pending_break);
    out
}

fn push_text(out: &mut String, text: &str, pending_break: &mut bool) {
    if text.is_empty() {
        return;
    }
    if *pending_break {
        let prev_word = out.chars().last().is_some_and(|c| !c.is_whitespace() && c != '>');
        let next_word = text.chars().next().is_some_and(|c| !c.is_whitespace());
        if prev_word && next_word {
            out.push(' ');
        }
        *pending_break = false;
    }
    out.push_str(text);
}

/// Collapses whitespace runs to a single ASCII space, trims the ends and
/// drops stray markup characters.
fn normalize_text(raw: &str) -> String {
    raw.split(|c: char| c.is_whitespace() || c == '<' || c == '>')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Flattens sanitized HTML into an element sequence.
///
/// Nested structural tags act as boundaries: `<p>a <b>b</b> c</p>` yields
/// `("a", p), ("b", b), ("c", p)`. Text outside every structural tag is
/// tagged [`DEFAULT_TAG`].
pub fn parse_html(doc_id: &str, sanitized: &str) -> Result<StructuredDocument> {
    let mut elements = Vec::new();
    // (tag name, byte offset of the open tag)
    let mut stack: Vec<(String, usize)> = Vec::new();
    let mut buf = String::new();
    let mut offset = 0;
    let bytes = sanitized.as_bytes();

    let flush = |buf: &mut String, stack: &[(String, usize)], elements: &mut Vec<Element>| {
        let text = normalize_text(buf);
        buf.clear();
        if !text.is_empty() {
            let tag = stack.last().map_or(DEFAULT_TAG, |(t, _)| t.as_str());
            elements.push(Element::new(text, tag));
        }
    };

    while offset < bytes.len() {
        let rest = &sanitized[offset..];
        let Some(lt) = rest.find('<') else {
            buf.push_str(rest);
            break;
        };
        buf.push_str(&rest[..lt]);
        offset += lt;
        let Some(tag) = scan_tag(&sanitized[offset..]) else {
            buf.push(' ');
            offset += 1;
            continue;
        };
        let tag_offset = offset;
        offset += tag.len;
        if !is_structural_tag(&tag.name) || tag.self_closing {
            continue;
        }
        if tag.closing {
            let Some(pos) = stack.iter().rposition(|(name, _)| *name == tag.name) else {
                // stray close tag
                continue;
            };
            if pos + 1 != stack.len() {
                let (name, at) = &stack[pos + 1];
                return Err(Error::UnclosedTag {
                    doc_id: doc_id.to_string(),
                    tag: name.clone(),
                    offset: *at,
                });
            }
            flush(&mut buf, &stack, &mut elements);
            stack.pop();
        } else {
            flush(&mut buf, &stack, &mut elements);
            stack.push((tag.name, tag_offset));
        }
    }

    if let Some((name, at)) = stack.last() {
        return Err(Error::UnclosedTag {
            doc_id: doc_id.to_string(),
            tag: name.clone(),
            offset: *at,
        });
    }
    flush(&mut buf, &stack, &mut elements);

    Ok(StructuredDocument::new(doc_id, elements))
}

/// Sanitizes and parses in one go.
pub fn parse_raw_html(doc_id: &str, raw: &str) -> Result<StructuredDocument> {
    parse_html(doc_id, &sanitize_html(raw))
}

fn render_element(out: &mut String, element: &Element, keep_tag: bool) {
    if keep_tag {
        out.push('<');
        out.push_str(&element.tag);
        out.push('>');
        out.push_str(&element.text);
        out.push_str("</");
        out.push_str(&element.tag);
        out.push('>');
    } else {
        out.push_str(&element.text);
    }
}

fn render_with(doc: &StructuredDocument, keep_tag: impl Fn(usize) -> bool) -> String {
    let mut out = String::new();
    for (i, element) in doc.elements.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        render_element(&mut out, element, keep_tag(i));
    }
    out
}

pub fn render_tagged(doc: &StructuredDocument) -> String {
    render_with(doc, |_| true)
}

pub fn render_untagged(doc: &StructuredDocument) -> String {
    render_with(doc, |_| false)
}

/// Renders `doc` with the elements listed in `masked` reduced to bare text.
pub fn render_masked(doc: &StructuredDocument, masked: &MaskedDocument) -> Result<String> {
    if let Some(&index) = masked.masked_indices.iter().next_back() {
        if index >= doc.len() {
            return Err(Error::IndexOutOfRange {
                doc_id: doc.doc_id.clone(),
                index,
                len: doc.len(),
            });
        }
    }
    Ok(render_with(doc, |i| !masked.masked_indices.contains(&i)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn els(doc: &StructuredDocument) -> Vec<(&str, &str)> {
        doc.elements
            .iter()
            .map(|e| (e.text.as_str(), e.tag.as_str()))
            .collect()
    }

    #[test]
    fn sanitize_strips_attributes_and_breaks() {
        assert_eq!(sanitize_html("<p style='x'>hi<br/></p>"), "<p>hi</p>");
    }

    #[test]
    fn sanitize_drops_script_content() {
        assert_eq!(sanitize_html("<script>x=1</script><h1>T</h1>"), "<h1>T</h1>");
        assert_eq!(
            sanitize_html("<STYLE type=\"text/css\">p{}</style><p>a</p>"),
            "<p>a</p>"
        );
    }

    #[test]
    fn sanitize_keeps_text_of_removed_tags() {
        assert_eq!(sanitize_html("<div><p>a</p></div>"), "<p>a</p>");
        assert_eq!(sanitize_html("<p>see <a href=\"x>y\">here</a></p>"), "<p>see here</p>");
    }

    #[test]
    fn sanitize_separates_words_on_breaking_tags() {
        assert_eq!(sanitize_html("one<br>two"), "one two");
        assert_eq!(sanitize_html("<span>fo</span>o"), "foo");
    }

    #[test]
    fn sanitize_removes_comments_and_doctype() {
        assert_eq!(
            sanitize_html("<!DOCTYPE html><!-- c <p>x</p> --><title>T</title>"),
            "<title>T</title>"
        );
        assert_eq!(sanitize_html("<p>a</p><!-- open"), "<p>a</p>");
    }

    #[test]
    fn sanitize_degrades_malformed_to_text() {
        assert_eq!(sanitize_html("a < b"), "a < b");
        assert_eq!(sanitize_html("<p>x</p><"), "<p>x</p><");
    }

    #[test]
    fn sanitize_hand_checked_corpus() {
        let cases = [
            ("<H1 class=a>Title</H1>", "<h1>Title</h1>"),
            ("<ul><li>a</li><li>b</li></ul>", "<ul><li>a</li><li>b</li></ul>"),
            ("<table><tbody><tr><td>1</td></tr></tbody></table>", "<table><tr><td>1</td></tr></table>"),
            ("<img src='a.png'/><p>x</p>", "<p>x</p>"),
            ("<p>a<br>b</p>", "<p>a b</p>"),
            ("<noscript>js</noscript><p>y</p>", "<p>y</p>"),
            ("<p/>z", "z"),
            ("<section>s</section><section>t</section>", "s t"),
            ("plain", "plain"),
            ("", ""),
            ("<font color=red>r</font>", "r"),
            ("<em>e</em><strong>s</strong>", "<em>e</em><strong>s</strong>"),
            ("<pre><code>fn main()</code></pre>", "<pre><code>fn main()</code></pre>"),
            ("<blockquote cite='u'>q</blockquote>", "<blockquote>q</blockquote>"),
            ("<?xml version='1.0'?><p>x</p>", "<p>x</p>"),
            ("<h2>a</h2>\n<h3>b</h3>", "<h2>a</h2>\n<h3>b</h3>"),
            ("<script src='x.js'></script>after", "after"),
            ("<div>a</div><div>b</div>", "a b"),
            ("<b>bold</b>", "<b>bold</b>"),
            ("3 < 4 and 5 > 2", "3 < 4 and 5 > 2"),
        ];
        for (raw, expected) in cases {
            assert_eq!(sanitize_html(raw), expected, "input: {raw}");
        }
    }

    #[test]
    fn parse_tutorial_fragment() {
        let doc = parse_html(
            "d",
            "<title> VS Code installation </title> <h1> Configure Jupyter in VS Code </h1>",
        )
        .unwrap();
        assert_eq!(
            els(&doc),
            vec![
                ("VS Code installation", "title"),
                ("Configure Jupyter in VS Code", "h1")
            ]
        );
    }

    #[test]
    fn parse_empty_and_plain() {
        assert!(parse_html("d", "").unwrap().is_empty());
        assert_eq!(
            els(&parse_html("d", "plain text only").unwrap()),
            vec![("plain text only", "p")]
        );
    }

    #[test]
    fn parse_flattens_nested_tags() {
        let doc = parse_html("d", "<p>x <b>y</b> z</p><ul><li>a</li><li> b\n c</li></ul>").unwrap();
        assert_eq!(
            els(&doc),
            vec![("x", "p"), ("y", "b"), ("z", "p"), ("a", "li"), ("b c", "li")]
        );
    }

    #[test]
    fn parse_reports_unclosed_tag_offset() {
        let err = parse_html("d", "<title>T</title> <p>body").unwrap_err();
        match err {
            Error::UnclosedTag { tag, offset, .. } => {
                assert_eq!(tag, "p");
                assert_eq!(offset, 17);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_html("d", "<p><b>x</p></b>"),
            Err(Error::UnclosedTag { offset: 3, .. })
        ));
    }

    #[test]
    fn parse_ignores_stray_close_and_markup_chars() {
        let doc = parse_html("d", "a</p> < b").unwrap();
        assert_eq!(els(&doc), vec![("a b", "p")]);
    }

    #[test]
    fn render_variants() {
        let doc = StructuredDocument::new(
            "d",
            vec![Element::new("T", "title"), Element::new("B", "p")],
        );
        assert_eq!(render_tagged(&doc), "<title>T</title> <p>B</p>");
        assert_eq!(render_untagged(&doc), "T B");
        let masked = MaskedDocument::new("d", [0]);
        assert_eq!(render_masked(&doc, &masked).unwrap(), "T <p>B</p>");
        assert_eq!(
            render_masked(&doc, &MaskedDocument::none(&doc)).unwrap(),
            render_tagged(&doc)
        );
        assert_eq!(
            render_masked(&doc, &MaskedDocument::all(&doc)).unwrap(),
            render_untagged(&doc)
        );
        let single = StructuredDocument::new("s", vec![Element::new("T", "title")]);
        assert_eq!(render_tagged(&single), "<title>T</title>");
        let empty = StructuredDocument::new("e", vec![]);
        assert_eq!(render_tagged(&empty), "");
        assert_eq!(render_untagged(&empty), "");
    }

    #[test]
    fn render_masked_rejects_out_of_range() {
        let doc = StructuredDocument::new("d", vec![Element::new("T", "title")]);
        let err = render_masked(&doc, &MaskedDocument::new("d", [1])).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 1, len: 1, .. }));
    }

    #[test]
    fn tutorial_document_round_trips() {
        let html = "<title> [Nanny-level tutorial] VS Code installation and configuration of Python </title> <h1> Configure Jupyter in VS Code </h1> <h2> Install Jupyter extension </h2> <p> Choose the version that suits your computer and start downloading. </p>";
        let doc = parse_html("rel", html).unwrap();
        assert_eq!(doc.len(), 4);
        let rendered = render_tagged(&doc);
        assert_eq!(
            rendered,
            "<title>[Nanny-level tutorial] VS Code installation and configuration of Python</title> <h1>Configure Jupyter in VS Code</h1> <h2>Install Jupyter extension</h2> <p>Choose the version that suits your computer and start downloading.</p>"
        );
        assert_eq!(parse_html("rel", &rendered).unwrap(), doc);
    }
}
