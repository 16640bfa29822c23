//! Error-tolerant HTML parser that keeps byte spans into the source.
//!
//! The tree is deliberately simple: no implicit `html`/`head`/`body`
//! insertion and only the common implied-end-tag rules. What it guarantees
//! is that every element's outer markup is a contiguous slice of the input,
//! so snippets and attribute rewrites are byte-exact.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

const RAW_TEXT_ELEMENTS: &[&str] = &[
    "script", "style", "textarea", "title", "xmp", "iframe", "noembed", "noframes",
];

/// Elements whose start tag implicitly closes an open `<p>`.
const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "details", "div", "dl", "fieldset",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hr", "main", "menu", "nav", "ol", "p", "pre", "section", "table", "ul",
];

pub fn is_void(tag: &str) -> bool {
    VOID_ELEMENTS.contains(&tag)
}

/// One `tag[index]` step of an [`ElementPath`]; `index` counts element
/// siblings only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub tag: String,
    pub index: usize,
}

/// Structural selector from the document root, rendered as
/// `html[0]/body[1]/button[2]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ElementPath(Vec<PathStep>);

impl ElementPath {
    pub fn steps(&self) -> &[PathStep] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, tag: &str, index: usize) -> ElementPath {
        let mut steps = self.0.clone();
        steps.push(PathStep {
            tag: tag.to_owned(),
            index,
        });
        ElementPath(steps)
    }

    pub fn tag(&self) -> Option<&str> {
        self.0.last().map(|s| s.tag.as_str())
    }

    pub fn is_ancestor_of(&self, other: &ElementPath) -> bool {
        other.0.len() > self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

/// Document order: index chains compared lexicographically, ancestors first.
impl Ord for ElementPath {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.index.cmp(&b.index).then_with(|| a.tag.cmp(&b.tag)) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for ElementPath {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ElementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{}[{}]", step.tag, step.index)?;
        }
        Ok(())
    }
}

impl FromStr for ElementPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::InvalidInput(format!("malformed element path `{s}`"));
        if s.is_empty() {
            return Err(bad());
        }
        let mut steps = Vec::new();
        for part in s.split('/') {
            let open = part.find('[').ok_or_else(bad)?;
            let inner = part[open + 1..].strip_suffix(']').ok_or_else(bad)?;
            let tag = &part[..open];
            if tag.is_empty() || !tag.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b':') {
                return Err(bad());
            }
            let index = inner.parse().map_err(|_| bad())?;
            steps.push(PathStep {
                tag: tag.to_ascii_lowercase(),
                index,
            });
        }
        Ok(ElementPath(steps))
    }
}

impl Serialize for ElementPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    /// Raw value text as written (entities not decoded); `None` for bare attributes.
    pub raw_value: Option<String>,
    /// Byte range of the value inside the source, quotes excluded.
    pub value_span: Option<Range<usize>>,
}

impl Attribute {
    pub fn value(&self) -> Option<String> {
        self.raw_value.as_deref().map(decode_entities)
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub tag: String,
    pub attrs: Vec<Attribute>,
    pub path: ElementPath,
    /// Byte range of the start tag.
    pub start_tag: Range<usize>,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Element(Element),
    Text,
    Comment,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Outer byte range in the source.
    pub span: Range<usize>,
}

impl Node {
    pub fn element(&self) -> Option<&Element> {
        match &self.kind {
            NodeKind::Element(e) => Some(e),
            _ => None,
        }
    }
}

/// Parsed document. Nodes are stored in document (pre-)order.
#[derive(Debug, Clone)]
pub struct Document {
    source: String,
    nodes: Vec<Node>,
    roots: Vec<usize>,
    warnings: usize,
}

impl Document {
    pub fn parse(source: &str) -> Document {
        Parser::new(source).run()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Count of recoverable problems: stray end tags, unterminated markup.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    /// Elements in document order as `(node id, element)`.
    pub fn elements(&self) -> impl Iterator<Item = (usize, &Element)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.element().map(|e| (i, e)))
    }

    pub fn find(&self, path: &ElementPath) -> Option<usize> {
        let mut level: &[usize] = &self.roots;
        let mut found = None;
        for step in path.steps() {
            let id = level
                .iter()
                .copied()
                .filter(|&c| self.nodes[c].element().is_some())
                .nth(step.index)?;
            let el = self.nodes[id].element()?;
            if el.tag != step.tag {
                return None;
            }
            found = Some(id);
            level = &self.nodes[id].children;
        }
        found
    }

    pub fn outer_html(&self, id: usize) -> &str {
        &self.source[self.nodes[id].span.clone()]
    }

    pub fn element_children(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].element().is_some())
    }

    /// Text content of a text node.
    pub fn text(&self, id: usize) -> Option<&str> {
        match self.nodes[id].kind {
            NodeKind::Text => Some(&self.source[self.nodes[id].span.clone()]),
            _ => None,
        }
    }

    /// Root element: the first top-level element, if any.
    pub fn root_element(&self) -> Option<usize> {
        self.roots
            .iter()
            .copied()
            .find(|&r| self.nodes[r].element().is_some())
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
    roots: Vec<usize>,
    open: Vec<usize>,
    warnings: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            nodes: Vec::new(),
            roots: Vec::new(),
            open: Vec::new(),
            warnings: 0,
        }
    }

    fn run(mut self) -> Document {
        while self.pos < self.bytes.len() {
            if self.bytes[self.pos] == b'<' {
                self.markup();
            } else {
                let end = memchr(b'<', self.bytes, self.pos).unwrap_or(self.bytes.len());
                self.push_text(self.pos..end);
                self.pos = end;
            }
        }
        let len = self.src.len();
        while let Some(id) = self.open.pop() {
            self.nodes[id].span.end = len;
        }
        Document {
            source: self.src.to_owned(),
            nodes: self.nodes,
            roots: self.roots,
            warnings: self.warnings,
        }
    }

    fn markup(&mut self) {
        let rest = &self.bytes[self.pos..];
        if rest.starts_with(b"<!--") {
            let end = find_seq(self.bytes, self.pos + 4, b"-->").map(|i| i + 3);
            let end = end.unwrap_or_else(|| {
                self.warnings += 1;
                self.bytes.len()
            });
            self.push_leaf(NodeKind::Comment, self.pos..end);
            self.pos = end;
        } else if rest.starts_with(b"<!") || rest.starts_with(b"<?") {
            let end = memchr(b'>', self.bytes, self.pos).map(|i| i + 1).unwrap_or_else(|| {
                self.warnings += 1;
                self.bytes.len()
            });
            self.push_leaf(NodeKind::Comment, self.pos..end);
            self.pos = end;
        } else if rest.len() > 2 && rest[1] == b'/' && rest[2].is_ascii_alphabetic() {
            self.end_tag();
        } else if rest.len() > 1 && rest[1].is_ascii_alphabetic() {
            self.start_tag();
        } else {
            // A lone '<' is text.
            let end = memchr(b'<', self.bytes, self.pos + 1).unwrap_or(self.bytes.len());
            self.push_text(self.pos..end);
            self.pos = end;
        }
    }

    fn end_tag(&mut self) {
        let start = self.pos;
        let name_start = start + 2;
        let name_end = scan_name(self.bytes, name_start);
        let name = self.src[name_start..name_end].to_ascii_lowercase();
        let Some(close) = memchr(b'>', self.bytes, name_end) else {
            self.warnings += 1;
            self.push_text(start..self.bytes.len());
            self.pos = self.bytes.len();
            return;
        };
        let end = close + 1;
        self.pos = end;
        match self.open.iter().rposition(|&id| self.tag_of(id) == name) {
            Some(depth) => {
                while self.open.len() > depth + 1 {
                    let id = self.open.pop().expect("non-empty");
                    self.nodes[id].span.end = start;
                }
                let id = self.open.pop().expect("matched element");
                self.nodes[id].span.end = end;
            }
            None => self.warnings += 1,
        }
    }

    fn start_tag(&mut self) {
        let start = self.pos;
        let name_end = scan_name(self.bytes, start + 1);
        let tag = self.src[start + 1..name_end].to_ascii_lowercase();
        let mut attrs = Vec::new();
        let mut i = name_end;
        let mut self_closing = false;
        loop {
            while i < self.bytes.len() && self.bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i >= self.bytes.len() {
                // Unterminated start tag: treat the remainder as text.
                self.warnings += 1;
                self.push_text(start..self.bytes.len());
                self.pos = self.bytes.len();
                return;
            }
            match self.bytes[i] {
                b'>' => {
                    i += 1;
                    break;
                }
                b'/' => {
                    if self.bytes.get(i + 1) == Some(&b'>') {
                        self_closing = true;
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                _ => {
                    let (attr, next) = self.attribute(i);
                    if !attrs.iter().any(|a: &Attribute| a.name == attr.name) {
                        attrs.push(attr);
                    }
                    i = next;
                }
            }
        }
        self.pos = i;
        self.implied_end_tags(&tag, start);

        let parent = self.open.last().copied();
        let index = self.sibling_element_count(parent);
        let path = match parent {
            Some(p) => self.path_of(p).child(&tag, index),
            None => ElementPath::default().child(&tag, index),
        };
        let element = Element {
            tag: tag.clone(),
            attrs,
            path,
            start_tag: start..i,
        };
        let id = self.push_node(NodeKind::Element(element), start..i);

        if is_void(&tag) || self_closing {
            return;
        }
        if RAW_TEXT_ELEMENTS.contains(&tag.as_str()) {
            let closing = format!("</{tag}");
            let body_end = find_ci(self.bytes, i, closing.as_bytes()).unwrap_or(self.bytes.len());
            if body_end > i {
                self.nodes.push(Node {
                    kind: NodeKind::Text,
                    parent: Some(id),
                    children: Vec::new(),
                    span: i..body_end,
                });
                let text_id = self.nodes.len() - 1;
                self.nodes[id].children.push(text_id);
            }
            let end = if body_end < self.bytes.len() {
                memchr(b'>', self.bytes, body_end).map(|c| c + 1).unwrap_or(self.bytes.len())
            } else {
                self.bytes.len()
            };
            self.nodes[id].span.end = end;
            self.pos = end;
            return;
        }
        self.open.push(id);
    }

    fn attribute(&self, start: usize) -> (Attribute, usize) {
        let b = self.bytes;
        let mut i = start;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        if i == start {
            // Stray '=' or similar; consume one byte.
            i += 1;
        }
        let name = self.src[start..i].to_ascii_lowercase();
        let mut j = i;
        while j < b.len() && b[j].is_ascii_whitespace() {
            j += 1;
        }
        if j >= b.len() || b[j] != b'=' {
            return (
                Attribute {
                    name,
                    raw_value: None,
                    value_span: None,
                },
                i,
            );
        }
        j += 1;
        while j < b.len() && b[j].is_ascii_whitespace() {
            j += 1;
        }
        let (span, next) = match b.get(j) {
            Some(&q @ (b'"' | b'\'')) => {
                let close = memchr(q, b, j + 1).unwrap_or(b.len());
                (j + 1..close, (close + 1).min(b.len()))
            }
            _ => {
                let mut k = j;
                while k < b.len() && !b[k].is_ascii_whitespace() && b[k] != b'>' {
                    k += 1;
                }
                (j..k, k)
            }
        };
        (
            Attribute {
                name,
                raw_value: Some(self.src[span.clone()].to_owned()),
                value_span: Some(span),
            },
            next,
        )
    }

    fn implied_end_tags(&mut self, tag: &str, at: usize) {
        let closes: &[&str] = match tag {
            "li" => &["li"],
            "dt" | "dd" => &["dt", "dd"],
            "tr" => &["tr", "td", "th"],
            "td" | "th" => &["td", "th"],
            "option" => &["option"],
            _ => &[],
        };
        let boundary: &[&str] = match tag {
            "li" => &["ul", "ol", "menu"],
            "dt" | "dd" => &["dl"],
            "tr" | "td" | "th" => &["table", "tbody", "thead", "tfoot"],
            "option" => &["select", "datalist"],
            _ => &[],
        };
        if !closes.is_empty() {
            self.close_in_scope(closes, boundary, at);
        }
        if CLOSES_P.contains(&tag) {
            self.close_in_scope(&["p"], &["button", "table", "td", "th", "html"], at);
        }
    }

    /// Closes the nearest open element named in `targets` unless a boundary
    /// element is found first.
    fn close_in_scope(&mut self, targets: &[&str], boundary: &[&str], at: usize) {
        for depth in (0..self.open.len()).rev() {
            let tag = self.tag_of(self.open[depth]);
            if targets.contains(&tag) {
                while self.open.len() > depth {
                    let id = self.open.pop().expect("non-empty");
                    self.nodes[id].span.end = at;
                }
                return;
            }
            if boundary.contains(&tag) {
                return;
            }
        }
    }

    fn tag_of(&self, id: usize) -> &str {
        self.nodes[id].element().map(|e| e.tag.as_str()).unwrap_or("")
    }

    fn path_of(&self, id: usize) -> &ElementPath {
        &self.nodes[id].element().expect("open nodes are elements").path
    }

    fn sibling_element_count(&self, parent: Option<usize>) -> usize {
        let siblings = match parent {
            Some(p) => &self.nodes[p].children,
            None => &self.roots,
        };
        siblings
            .iter()
            .filter(|&&c| self.nodes[c].element().is_some())
            .count()
    }

    fn push_text(&mut self, span: Range<usize>) {
        if span.is_empty() {
            return;
        }
        self.push_leaf(NodeKind::Text, span);
    }

    fn push_leaf(&mut self, kind: NodeKind, span: Range<usize>) {
        self.push_node(kind, span);
    }

    fn push_node(&mut self, kind: NodeKind, span: Range<usize>) -> usize {
        let parent = self.open.last().copied();
        self.nodes.push(Node {
            kind,
            parent,
            children: Vec::new(),
            span,
        });
        let id = self.nodes.len() - 1;
        match parent {
            Some(p) => self.nodes[p].children.push(id),
            None => self.roots.push(id),
        }
        id
    }
}

fn scan_name(bytes: &[u8], from: usize) -> usize {
    let mut i = from;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'>' | b'/') {
        i += 1;
    }
    i
}

fn memchr(needle: u8, hay: &[u8], from: usize) -> Option<usize> {
    hay.get(from..)?.iter().position(|&b| b == needle).map(|i| i + from)
}

fn find_seq(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    hay.get(from..)?
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|i| i + from)
}

fn find_ci(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    hay.get(from..)?
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
        .map(|i| i + from)
}

/// Decodes the handful of character references that show up in attribute values.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_owned();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let entity = &rest[1..semi];
            let ch = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
