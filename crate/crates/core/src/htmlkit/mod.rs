//! HTML analysis: image extraction, asset staging, layout geometry and
//! grounding of sketch annotations to document elements.

mod dom;
mod geometry;
mod staging;

pub use dom::{decode_entities, is_void, Attribute, Document, Element, ElementPath, Node, NodeKind, PathStep};
pub use geometry::{iou, match_annotation, ElementBox, GeometryMap, Rect, Region, Viewport};
pub use staging::{stage_assets, LibraryKind, LibraryPin, StagedFile, StagedLibrary, StagingManifest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Ordinal among `img` elements in document order.
    pub element_index: usize,
    pub alt_text: Option<String>,
    pub src: String,
    /// Prompt for placeholder synthesis: the alt text when present, else `src`.
    pub placeholder_prompt: String,
}

/// One [`ImageRef`] per `img` element, in document order.
pub fn extract_images(html: &str) -> Vec<ImageRef> {
    images_in(&Document::parse(html))
}

pub(crate) fn images_in(doc: &Document) -> Vec<ImageRef> {
    doc.elements()
        .filter(|(_, e)| e.tag == "img")
        .enumerate()
        .map(|(element_index, (_, e))| {
            let alt_text = e.attr("alt").and_then(Attribute::value);
            let src = e.attr("src").and_then(Attribute::value).unwrap_or_default();
            let placeholder_prompt = match alt_text.as_deref().map(str::trim) {
                Some(alt) if !alt.is_empty() => alt.to_owned(),
                _ => src.clone(),
            };
            ImageRef {
                element_index,
                alt_text,
                src,
                placeholder_prompt,
            }
        })
        .collect()
}

/// Outer markup of the element at `element.element_path`.
pub fn snippet(element: &ElementBox, html: &str) -> Result<String> {
    snippet_at(&element.element_path, html)
}

pub fn snippet_at(path: &ElementPath, html: &str) -> Result<String> {
    let doc = Document::parse(html);
    let id = doc.find(path).ok_or_else(|| Error::StaleGeometry {
        path: path.to_string(),
    })?;
    Ok(doc.outer_html(id).to_owned())
}
