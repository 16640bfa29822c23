use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dom::Document;
use super::images_in;
use crate::error::{Error, Result};
use crate::hash::ContentHash;

/// Attributes that may load or link a resource.
const URL_ATTRIBUTES: &[&str] = &[
    "src", "href", "srcset", "poster", "action", "formaction", "data", "background", "cite",
    "xlink:href", "manifest", "icon", "longdesc",
];

pub const ENTRY_FILE: &str = "index.html";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibraryKind {
    Script,
    Stylesheet,
}

/// A vendored library file that replaces CDN references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryPin {
    pub name: String,
    pub version: String,
    pub kind: LibraryKind,
    /// Path under the staging root.
    pub file_name: String,
    /// URL substrings identifying references to this library.
    pub url_patterns: Vec<String>,
    /// Local copy of the library; a marker file is written when absent.
    #[serde(default)]
    pub source: Option<PathBuf>,
}

impl LibraryPin {
    /// Tailwind and Font Awesome, the two libraries the generation prompt allows.
    pub fn defaults() -> Vec<LibraryPin> {
        vec![
            LibraryPin {
                name: "tailwindcss".into(),
                version: "3.4.1".into(),
                kind: LibraryKind::Script,
                file_name: "lib/tailwindcss-3.4.1.js".into(),
                url_patterns: vec!["cdn.tailwindcss.com".into(), "tailwindcss".into()],
                source: None,
            },
            LibraryPin {
                name: "font-awesome".into(),
                version: "6.5.1".into(),
                kind: LibraryKind::Stylesheet,
                file_name: "lib/font-awesome-6.5.1/all.min.css".into(),
                url_patterns: vec!["font-awesome".into(), "fontawesome".into()],
                source: None,
            },
        ]
    }

    fn matches(&self, url: &str) -> bool {
        let lower = url.to_ascii_lowercase();
        self.url_patterns.iter().any(|p| lower.contains(&p.to_ascii_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedFile {
    pub path: String,
    pub content_hash: ContentHash,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl StagedFile {
    fn new(path: String, bytes: Vec<u8>) -> Self {
        StagedFile {
            path,
            content_hash: ContentHash::of(&bytes),
            bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedLibrary {
    pub path: String,
    pub name: String,
    pub version: String,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

/// Everything a renderer needs to load one UI without network access.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagingManifest {
    pub entry: StagedFile,
    pub assets: Vec<StagedFile>,
    pub libraries: Vec<StagedLibrary>,
}

impl StagingManifest {
    pub fn html(&self) -> &str {
        std::str::from_utf8(&self.entry.bytes).expect("entry is staged from a str")
    }

    /// Every path under the staging root, entry first.
    pub fn files(&self) -> Vec<&str> {
        std::iter::once(self.entry.path.as_str())
            .chain(self.assets.iter().map(|a| a.path.as_str()))
            .chain(self.libraries.iter().map(|l| l.path.as_str()))
            .collect()
    }

    pub fn asset(&self, path: &str) -> Option<&StagedFile> {
        self.assets.iter().find(|a| a.path == path)
    }

    /// Writes the staged tree under `root`.
    pub fn materialize(&self, root: &Path) -> Result<()> {
        let write = |rel: &str, bytes: &[u8]| -> Result<()> {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        write(&self.entry.path, &self.entry.bytes)?;
        for asset in &self.assets {
            write(&asset.path, &asset.bytes)?;
        }
        for lib in &self.libraries {
            let bytes = match &lib.source {
                Some(src) => std::fs::read(src).map_err(|e| Error::io(src, e))?,
                None => format!("/* {} {} (vendored placeholder) */\n", lib.name, lib.version).into_bytes(),
            };
            write(&lib.path, &bytes)?;
        }
        Ok(())
    }
}

fn asset_path(prompt: &str) -> String {
    format!("assets/{}.png", &ContentHash::of(prompt.as_bytes()).as_str()[..16])
}

/// References that load nothing from outside the document.
fn is_inert(url: &str) -> bool {
    let u = url.trim().to_ascii_lowercase();
    u.is_empty()
        || u.starts_with('#')
        || u.starts_with("data:")
        || u.starts_with("mailto:")
        || u.starts_with("tel:")
        || u.starts_with("javascript:")
}

/// Stages `html` for offline rendering: image sources point at synthesized
/// placeholders, library CDN links at pinned local copies, and any other
/// external reference is neutralized to `#`.
pub fn stage_assets(
    html: &str,
    placeholders: &BTreeMap<String, Vec<u8>>,
    libraries: &[LibraryPin],
) -> Result<StagingManifest> {
    let doc = Document::parse(html);
    let images = images_in(&doc);

    let mut seen = std::collections::HashSet::new();
    let missing: Vec<String> = images
        .iter()
        .map(|i| i.placeholder_prompt.clone())
        .filter(|p| !p.is_empty() && !placeholders.contains_key(p) && seen.insert(p.clone()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPlaceholders(missing));
    }

    let mut edits: Vec<(Range<usize>, String)> = Vec::new();
    let mut assets: BTreeMap<String, StagedFile> = BTreeMap::new();
    let mut img_iter = images.iter();

    for (node_id, el) in doc.elements() {
        let image = if el.tag == "img" { img_iter.next() } else { None };
        for attr in &el.attrs {
            let Some(span) = attr.value_span.clone() else { continue };
            if attr.name == "style" {
                let raw = attr.raw_value.as_deref().unwrap_or_default();
                if let Some(rewritten) = rewrite_css_urls(raw, libraries) {
                    edits.push((span, rewritten));
                }
                continue;
            }
            if !URL_ATTRIBUTES.contains(&attr.name.as_str()) {
                continue;
            }
            let value = attr.value().unwrap_or_default();
            let replacement = match (image, attr.name.as_str()) {
                (Some(img), "src" | "srcset") if !img.placeholder_prompt.is_empty() => {
                    let path = asset_path(&img.placeholder_prompt);
                    assets.entry(path.clone()).or_insert_with(|| {
                        StagedFile::new(path.clone(), placeholders[&img.placeholder_prompt].clone())
                    });
                    Some(path)
                }
                _ => rewrite_url(&value, libraries),
            };
            if let Some(new_value) = replacement {
                if new_value != attr.raw_value.as_deref().unwrap_or_default() {
                    edits.push((span, new_value));
                }
            }
        }
        if el.tag == "style" {
            for &child in &doc.node(node_id).children {
                if let Some(text) = doc.text(child) {
                    if let Some(rewritten) = rewrite_css_urls(text, libraries) {
                        edits.push((doc.node(child).span.clone(), rewritten));
                    }
                }
            }
        }
    }

    edits.sort_by_key(|(r, _)| r.start);
    let mut out = String::with_capacity(html.len());
    let mut cursor = 0;
    for (range, text) in edits {
        out.push_str(&html[cursor..range.start]);
        out.push_str(&text);
        cursor = range.end;
    }
    out.push_str(&html[cursor..]);

    Ok(StagingManifest {
        entry: StagedFile::new(ENTRY_FILE.into(), out.into_bytes()),
        assets: assets.into_values().collect(),
        libraries: libraries
            .iter()
            .map(|l| StagedLibrary {
                path: l.file_name.clone(),
                name: l.name.clone(),
                version: l.version.clone(),
                source: l.source.clone(),
            })
            .collect(),
    })
}

/// `None` keeps the value unchanged.
fn rewrite_url(value: &str, libraries: &[LibraryPin]) -> Option<String> {
    if is_inert(value) {
        return None;
    }
    if let Some(lib) = libraries.iter().find(|l| l.matches(value)) {
        return Some(lib.file_name.clone());
    }
    Some("#".into())
}

fn rewrite_css_urls(css: &str, libraries: &[LibraryPin]) -> Option<String> {
    let lower = css.to_ascii_lowercase();
    if !lower.contains("url(") && !lower.contains("@import") {
        return None;
    }
    let mut out = String::with_capacity(css.len());
    let mut changed = false;
    let mut cursor = 0;
    while let Some(rel) = lower[cursor..].find("url(") {
        let open = cursor + rel + 4;
        let Some(close_rel) = css[open..].find(')') else { break };
        let close = open + close_rel;
        let inner = css[open..close].trim().trim_matches(|c| c == '"' || c == '\'');
        out.push_str(&css[cursor..open]);
        match rewrite_url(inner, libraries) {
            Some(new) => {
                out.push_str(&new);
                changed = true;
            }
            None => out.push_str(&css[open..close]),
        }
        cursor = close;
    }
    out.push_str(&css[cursor..]);
    // `@import "x.css"` without url(): drop the target.
    let mut result = String::with_capacity(out.len());
    let mut rest = out.as_str();
    while let Some(pos) = rest.to_ascii_lowercase().find("@import") {
        let after = pos + "@import".len();
        result.push_str(&rest[..after]);
        rest = &rest[after..];
        let trimmed = rest.trim_start();
        if let Some(q @ ('"' | '\'')) = trimmed.chars().next() {
            let lead = rest.len() - trimmed.len();
            if let Some(end) = trimmed[1..].find(q) {
                let target = &trimmed[1..1 + end];
                let new = rewrite_url(target, libraries).unwrap_or_else(|| target.to_owned());
                changed |= new != target;
                result.push_str(&rest[..lead]);
                result.push(q);
                result.push_str(&new);
                result.push(q);
                rest = &trimmed[end + 2..];
            }
        }
    }
    result.push_str(rest);
    changed.then_some(result)
}
