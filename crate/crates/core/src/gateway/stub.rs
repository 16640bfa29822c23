//! Deterministic offline backends. Outputs depend only on inputs and the
//! configured seed, so pipeline runs are reproducible without network
//! access.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompts::{DESCRIPTIONS_PREFIX, EDIT_PREFIX, GENERATION_MARKER, REGION_MARKER};
use super::raster::{self, Color};
use super::{EmbedKind, Embedder, ImageSynth, Llm, LlmRequest, RenderResult, Renderer, SketchConverter};
use crate::error::{Error, Result};
use crate::hash::{seed_from_parts, ContentHash};
use crate::htmlkit::{Document, ElementBox, ElementPath, GeometryMap, Rect, StagingManifest, Viewport};

const SCREENS: &[&str] = &[
    "login", "checkout", "profile", "settings", "recipe detail", "weather", "music player", "chat", "calendar",
    "workout tracker", "news feed", "onboarding", "photo gallery", "banking dashboard", "map search",
];
const FEATURES: &[&str] = &[
    "a search bar at the top",
    "a bottom tab bar",
    "a large hero image",
    "a list of cards with thumbnails",
    "a floating action button",
    "a segmented control",
    "a progress ring",
    "toggle switches",
];
const PALETTE: &[&str] = &["#0f172a", "#1d4ed8", "#059669", "#b45309", "#be123c", "#7c3aed", "#f1f5f9", "#fde68a"];

pub(crate) fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Bodies of every ```` ```html ```` fence in `text`, in order.
fn html_fences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```html\n") {
        let body = &rest[open + 8..];
        let Some(close) = body.find("\n```") else { break };
        out.push(&body[..close]);
        rest = &body[close + 4..];
    }
    out
}

/// Scripted language model.
///
/// * description prompts yield ten numbered texts;
/// * generation prompts yield a page echoing the description, with layout
///   varied by the request seed;
/// * comment edits insert a marker element before `</body>`;
/// * region edits tag the start of each grounded snippet with
///   `data-revised="k"` and add a visible marker before `</body>`.
#[derive(Debug, Clone)]
pub struct StubLlm {
    seed: u64,
    /// Caps how many distinct descriptions can ever be produced.
    pub distinct_capacity: Option<u64>,
}

impl StubLlm {
    pub fn new(seed: u64) -> Self {
        StubLlm {
            seed,
            distinct_capacity: None,
        }
    }

    pub fn with_capacity(seed: u64, capacity: u64) -> Self {
        StubLlm {
            seed,
            distinct_capacity: Some(capacity),
        }
    }

    fn rng(&self, req: &LlmRequest) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed_from_parts(&[
            &self.seed.to_le_bytes(),
            &req.seed.to_le_bytes(),
            req.prompt.as_bytes(),
        ]))
    }

    fn descriptions(&self, req: &LlmRequest) -> String {
        let base = req.seed.wrapping_add(self.seed);
        (0..10u64)
            .map(|i| {
                let mut n = base.wrapping_mul(10).wrapping_add(i);
                if let Some(cap) = self.distinct_capacity {
                    n %= cap.max(1);
                }
                let screen = SCREENS[(n % SCREENS.len() as u64) as usize];
                let feature = FEATURES[((n / 7) % FEATURES.len() as u64) as usize];
                format!("{}. a {screen} screen with {feature}, variant {n}", i + 1)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn page(&self, req: &LlmRequest, description: &str) -> String {
        let mut rng = self.rng(req);
        let desc = escape_html(description.trim());
        let bg = PALETTE[rng.random_range(0..PALETTE.len())];
        let accent = PALETTE[rng.random_range(0..PALETTE.len())];
        let cards = rng.random_range(1..=4);
        let hero_h = rng.random_range(80..=240);
        let mut body = format!(
            "  <header class=\"p-4\" style=\"background:{accent}\">\n    <h1 class=\"text-xl font-bold\">{desc}</h1>\n  </header>\n  \
             <img src=\"https://images.example.com/hero.jpg\" alt=\"illustration for {desc}\" height=\"{hero_h}\">\n"
        );
        for i in 0..cards {
            let shade = PALETTE[rng.random_range(0..PALETTE.len())];
            body.push_str(&format!(
                "  <section class=\"m-2 p-3 rounded-lg\" style=\"background:{shade}\">\n    \
                 <p>item {} <i class=\"fa-solid fa-star\"></i></p>\n  </section>\n",
                i + 1
            ));
        }
        if rng.random_bool(0.5) {
            body.push_str("  <button class=\"w-full p-3\">continue</button>\n");
        }
        format!(
            "here is the page:\n```html\n<!DOCTYPE html>\n<html>\n<head>\n  <script src=\"https://cdn.tailwindcss.com\"></script>\n  \
             <link rel=\"stylesheet\" href=\"https://cdnjs.cloudflare.com/ajax/libs/font-awesome/6.5.1/css/all.min.css\">\n\
             </head>\n<body style=\"background:{bg}\">\n{body}</body>\n</html>\n```"
        )
    }

    fn comment_edit(&self, prompt: &str) -> Result<String> {
        let doc = html_fences(prompt)
            .into_iter()
            .next()
            .ok_or_else(|| Error::MalformedEdit("edit prompt has no document".into()))?;
        let comments = prompt
            .split_once("feedback:\n\"")
            .and_then(|(_, rest)| rest.rsplit_once("\"\n\nincorporate"))
            .map(|(c, _)| c)
            .unwrap_or("");
        let count = comments.lines().filter(|l| l.starts_with("- ")).count();
        let marker = format!("<div data-feedback-applied=\"{count}\">{}</div>\n", escape_html(comments));
        let revised = match doc.rfind("</body>") {
            Some(i) => format!("{}{marker}{}", &doc[..i], &doc[i..]),
            None => format!("{doc}\n{marker}"),
        };
        Ok(format!("```html\n{revised}\n```"))
    }

    fn region_edit(&self, prompt: &str) -> Result<String> {
        let fences = html_fences(prompt);
        let (doc, snippets) = fences
            .split_first()
            .ok_or_else(|| Error::MalformedEdit("edit prompt has no document".into()))?;
        let mut inserts: Vec<(usize, String)> = Vec::new();
        for (k, snippet) in snippets.iter().enumerate() {
            let Some(at) = doc.find(snippet) else {
                log::debug!("stub: snippet {} not found in document", k + 1);
                continue;
            };
            let parsed = Document::parse(snippet);
            let Some((_, el)) = parsed.elements().next() else { continue };
            let tag_end = el.start_tag.end;
            // Insert before `>` or `/>`.
            let mut pos = tag_end - 1;
            if snippet[..pos].ends_with('/') {
                pos -= 1;
            }
            inserts.push((at + pos, format!(" data-revised=\"{}\"", k + 1)));
        }
        inserts.sort_by_key(|x| std::cmp::Reverse(x.0));
        let applied = inserts.len();
        let mut revised = doc.to_string();
        for (pos, text) in inserts {
            revised.insert_str(pos, &text);
        }
        // A visible marker, so the revision renders differently.
        let marker = format!("<div data-regions-revised=\"{applied}\">revised {applied} regions</div>\n");
        if let Some(i) = revised.rfind("</body>") {
            revised.insert_str(i, &marker);
        } else {
            revised.push_str(&marker);
        }
        Ok(format!("```html\n{revised}\n```"))
    }
}

impl Llm for StubLlm {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let p = &req.prompt;
        if p.starts_with(DESCRIPTIONS_PREFIX) {
            Ok(self.descriptions(req))
        } else if p.starts_with(EDIT_PREFIX) {
            if p.contains(REGION_MARKER) {
                self.region_edit(p)
            } else {
                self.comment_edit(p)
            }
        } else if let Some(i) = p.rfind(GENERATION_MARKER) {
            Ok(self.page(req, &p[i + GENERATION_MARKER.len()..]))
        } else {
            Ok(format!("```html\n<html><body><p>{}</p></body></html>\n```", escape_html(p)))
        }
    }
}

const SKIPPED: &[&str] = &["head", "script", "style", "meta", "link", "title", "template", "noscript", "base"];
const LINE_HEIGHT: f64 = 20.0;
const CHAR_WIDTH: f64 = 8.0;
const PADDING: f64 = 4.0;

/// Block-flow layout engine: every element stacks vertically inside its
/// parent, text wraps at a fixed character width, images take their
/// `height` attribute (default 120px).
#[derive(Debug, Clone, Copy, Default)]
pub struct StubRenderer;

struct Layout<'a> {
    doc: &'a Document,
    manifest: &'a StagingManifest,
    boxes: Vec<ElementBox>,
    paint: Vec<(Rect, Color)>,
}

impl Layout<'_> {
    fn own_text_len(&self, id: usize) -> usize {
        self.doc.node(id)
            .children
            .iter()
            .filter_map(|&c| self.doc.text(c))
            .map(|t| t.split_whitespace().map(|w| w.chars().count() + 1).sum::<usize>())
            .sum()
    }

    fn fill_of(&self, id: usize) -> Option<Color> {
        let el = self.doc.node(id).element()?;
        if el.tag == "img" {
            let src = el.attr("src").and_then(|a| a.value())?;
            let bytes = &self.manifest.asset(&src)?.bytes;
            return raster::decode(bytes).ok().map(|img| img.get_pixel(0, 0).0);
        }
        let style = el.attr("style").and_then(|a| a.value()).unwrap_or_default();
        let from_style = style.split(';').find_map(|decl| {
            let (k, v) = decl.split_once(':')?;
            matches!(k.trim(), "background" | "background-color").then(|| raster::parse_hex_color(v))?
        });
        from_style.or_else(|| {
            let class = el.attr("class").and_then(|a| a.value())?;
            let token = class.split_whitespace().find(|t| t.starts_with("bg-"))?;
            let d = Sha256::digest(token.as_bytes());
            Some([d[0], d[1], d[2]])
        })
    }

    /// Lays out element `id` with its top-left at (x, y); returns its height.
    fn place(&mut self, id: usize, path: &ElementPath, x: f64, y: f64, w: f64, depth: usize) -> f64 {
        let el = self.doc.node(id).element().expect("element");
        let pad = if depth < 2 { 0.0 } else { PADDING };
        let slot = self.boxes.len();
        let paint_start = self.paint.len();
        self.boxes.push(ElementBox {
            element_path: path.clone(),
            bbox: Rect::new(x, y, w, 0.0),
        });
        let inner_w = (w - 2.0 * pad).max(0.0);
        let mut cursor = y + pad;
        let text = self.own_text_len(id);
        if text > 0 {
            let per_line = (inner_w / CHAR_WIDTH).floor().max(1.0) as usize;
            let lines = text.div_ceil(per_line);
            let h = lines as f64 * LINE_HEIGHT;
            self.paint.push((Rect::new(x + pad, cursor + 6.0, (text.min(per_line) as f64 * CHAR_WIDTH).min(inner_w), h - 12.0), [96, 96, 96]));
            cursor += h;
        }
        let tag = el.tag.clone();
        match tag.as_str() {
            "img" => {
                let h = el
                    .attr("height")
                    .and_then(|a| a.value())
                    .and_then(|v| v.trim_end_matches("px").parse::<f64>().ok())
                    .filter(|h| h.is_finite() && *h >= 0.0)
                    .unwrap_or(120.0);
                cursor += h;
            }
            "input" | "select" | "textarea" | "button" if cursor - (y + pad) < 36.0 => cursor = y + pad + 36.0,
            "hr" => cursor += 1.0,
            _ => {}
        }
        let children: Vec<(usize, String)> = self
            .doc
            .element_children(id)
            .map(|c| (c, self.doc.node(c).element().expect("element").tag.clone()))
            .collect();
        for (index, (c, ctag)) in children.into_iter().enumerate() {
            let child_path = path.child(&ctag, index);
            if SKIPPED.contains(&ctag.as_str()) {
                continue;
            }
            cursor += self.place(c, &child_path, x + pad, cursor, inner_w, depth + 1);
        }
        let h = cursor + pad - y;
        self.boxes[slot].bbox.h = h;
        if let Some(color) = self.fill_of(id) {
            // Behind everything the descendants painted.
            self.paint.insert(paint_start, (Rect::new(x, y, w, h), color));
        }
        h
    }
}

impl Renderer for StubRenderer {
    fn render(&self, manifest: &StagingManifest, viewport: Viewport) -> Result<RenderResult> {
        let doc = Document::parse(manifest.html());
        let mut layout = Layout {
            doc: &doc,
            manifest,
            boxes: Vec::new(),
            paint: Vec::new(),
        };
        let width = viewport.width as f64;
        let mut y = 0.0;
        let mut index = 0;
        for &root in doc.roots() {
            let Some(el) = doc.node(root).element() else { continue };
            let path = ElementPath::default().child(&el.tag, index);
            index += 1;
            if SKIPPED.contains(&el.tag.as_str()) {
                continue;
            }
            y += layout.place(root, &path, 0.0, y, width, 0);
        }
        let content_height = y;
        let Layout { mut boxes, paint, .. } = layout;
        // The root fills the viewport even when the content is short.
        if let Some(first) = boxes.first_mut() {
            if first.element_path.depth() == 1 {
                first.bbox.h = first.bbox.h.max(viewport.height as f64);
            }
        }
        let mut img = image::RgbImage::from_pixel(viewport.width, viewport.height, image::Rgb([255, 255, 255]));
        for (rect, color) in &paint {
            raster::fill_rect(&mut img, rect, *color);
        }
        Ok(RenderResult {
            screenshot: raster::encode(&img)?,
            geometry: GeometryMap::new(viewport, boxes)?,
            truncated: content_height > viewport.height as f64,
        })
    }
}

/// 64×64 solid image whose color is the first three bytes of the prompt digest.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubImageSynth;

impl StubImageSynth {
    pub fn color_for(prompt: &str) -> Color {
        let d = Sha256::digest(prompt.as_bytes());
        [d[0], d[1], d[2]]
    }
}

impl ImageSynth for StubImageSynth {
    fn synthesize(&self, prompt: &str) -> Result<Vec<u8>> {
        raster::solid(64, 64, Self::color_for(prompt))
    }
}

pub const SKETCH_FORMAT: &str = "uifeedback-sketch";
const MAX_ARTBOARD: u32 = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchDocument {
    pub format: String,
    pub version: u32,
    pub source_hash: ContentHash,
    pub artboard: Viewport,
    pub layers: Vec<SketchLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchLayer {
    /// Element path the layer was created from.
    pub name: String,
    pub tag: String,
    pub frame: Rect,
    pub fill: String,
}

/// Converts layout boxes into a flat JSON layer document.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSketchConverter;

impl SketchConverter for StubSketchConverter {
    fn to_sketch(&self, html: &str, geometry: &GeometryMap) -> Result<Vec<u8>> {
        let layers = geometry
            .boxes
            .iter()
            .map(|b| {
                let d = Sha256::digest(b.element_path.to_string().as_bytes());
                SketchLayer {
                    name: b.element_path.to_string(),
                    tag: b.element_path.tag().unwrap_or_default().to_owned(),
                    frame: b.bbox,
                    fill: format!("#{}", hex::encode(&d[..3])),
                }
            })
            .collect();
        let doc = SketchDocument {
            format: SKETCH_FORMAT.into(),
            version: 1,
            source_hash: ContentHash::of(html.as_bytes()),
            artboard: geometry.viewport,
            layers,
        };
        Ok(serde_json::to_vec_pretty(&doc)?)
    }

    fn preview(&self, document: &[u8]) -> Result<Vec<u8>> {
        let doc: SketchDocument =
            serde_json::from_slice(document).map_err(|e| Error::InvalidInput(format!("not a sketch document: {e}")))?;
        if doc.format != SKETCH_FORMAT || doc.version != 1 {
            return Err(Error::InvalidInput(format!("unsupported sketch format {} v{}", doc.format, doc.version)));
        }
        let Viewport { width, height } = doc.artboard;
        if width == 0 || height == 0 || width > MAX_ARTBOARD || height > MAX_ARTBOARD {
            return Err(Error::InvalidInput(format!("artboard {width}x{height} out of range")));
        }
        let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
        for layer in &doc.layers {
            let color = raster::parse_hex_color(&layer.fill).unwrap_or([200, 200, 200]);
            raster::fill_rect(&mut img, &layer.frame, color);
        }
        raster::encode(&img)
    }
}

/// Pseudo-embeddings: a seeded Gaussian vector per payload, unit length.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dimension: usize,
    seed: u64,
}

impl StubEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        StubEmbedder { dimension, seed }
    }
}

impl Embedder for StubEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, kind: EmbedKind, payload: &[u8]) -> Result<Vec<f64>> {
        let tag: &[u8] = match kind {
            EmbedKind::Image => b"image",
            EmbedKind::Text => b"text",
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from_parts(&[&self.seed.to_le_bytes(), tag, payload]));
        let mut v: Vec<f64> = (0..self.dimension).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}
