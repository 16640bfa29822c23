//! Clients for the external capabilities the pipeline relies on: text
//! generation, code editing, headless rendering, placeholder images,
//! design-document conversion and embeddings.
//!
//! Each capability is a trait with a deterministic stub (see [`stub`]) and
//! an HTTP or subprocess client (see [`http`]). The free functions in this
//! module wrap a backend with prompt construction, response hygiene and the
//! retry budget.

pub mod http;
pub mod prompts;
pub mod raster;
pub mod stub;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{dedup_merge, DescriptionSet, Store};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ids::CandidateId;
use crate::htmlkit::{Document, GeometryMap, LibraryPin, StagingManifest, Viewport};

pub const DEFAULT_EMBEDDING_DIM: usize = 512;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;
pub const DESCRIPTIONS_PER_CALL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: u64,
}

pub trait Llm: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    /// PNG bytes, exactly viewport-sized.
    pub screenshot: Vec<u8>,
    pub geometry: GeometryMap,
    /// Set when the page is taller than the viewport.
    pub truncated: bool,
}

pub trait Renderer: Send + Sync {
    fn render(&self, manifest: &StagingManifest, viewport: Viewport) -> Result<RenderResult>;
}

pub trait ImageSynth: Send + Sync {
    fn synthesize(&self, prompt: &str) -> Result<Vec<u8>>;
}

pub trait SketchConverter: Send + Sync {
    fn to_sketch(&self, html: &str, geometry: &GeometryMap) -> Result<Vec<u8>>;
    fn preview(&self, document: &[u8]) -> Result<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    Image,
    Text,
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, kind: EmbedKind, payload: &[u8]) -> Result<Vec<f64>>;
}

/// Where each backend lives. `None` endpoints use the deterministic stub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendProfile {
    pub renderer_url: Option<String>,
    pub llm_url: Option<String>,
    pub llm_model: String,
    pub image_synth_url: Option<String>,
    pub sketch_command: Option<Vec<String>>,
    pub embedding_url: Option<String>,
    pub embedding_dimension: usize,
    pub timeout_secs: f64,
    pub retry_budget: u32,
    pub max_in_flight: usize,
    pub max_output_tokens: u32,
    pub viewport: Viewport,
    /// Directory shared with an external renderer for staged pages.
    pub staging_dir: Option<std::path::PathBuf>,
    pub stub_seed: u64,
    pub libraries: Vec<LibraryPin>,
}

impl Default for BackendProfile {
    fn default() -> Self {
        BackendProfile {
            renderer_url: None,
            llm_url: None,
            llm_model: "qwen2.5-coder:32b-instruct-fp16".into(),
            image_synth_url: None,
            sketch_command: None,
            embedding_url: None,
            embedding_dimension: DEFAULT_EMBEDDING_DIM,
            timeout_secs: 120.0,
            retry_budget: 2,
            max_in_flight: 4,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            viewport: Viewport::PHONE,
            staging_dir: None,
            stub_seed: 0,
            libraries: LibraryPin::defaults(),
        }
    }
}

impl BackendProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.embedding_dimension == 0 {
            return Err(Error::Config("embedding_dimension must be positive".into()));
        }
        if self.viewport.width == 0 || self.viewport.height == 0 {
            return Err(Error::Config("viewport dimensions must be positive".into()));
        }
        if matches!(&self.sketch_command, Some(cmd) if cmd.is_empty()) {
            return Err(Error::Config("sketch_command must name a program".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// The full set of backends one pipeline run uses.
#[derive(Clone)]
pub struct Backends {
    pub profile: BackendProfile,
    pub llm: Arc<dyn Llm>,
    pub renderer: Arc<dyn Renderer>,
    pub images: Arc<dyn ImageSynth>,
    pub sketch: Arc<dyn SketchConverter>,
    pub embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends").field("profile", &self.profile).finish_non_exhaustive()
    }
}

impl Backends {
    /// All-stub backends; no network access.
    pub fn stub(seed: u64) -> Self {
        Self::from_profile(BackendProfile {
            stub_seed: seed,
            ..BackendProfile::default()
        })
        .expect("default profile is valid")
    }

    pub fn from_profile(profile: BackendProfile) -> Result<Self> {
        profile.validate()?;
        let limiter = Limiter::new(profile.max_in_flight);
        let timeout = profile.timeout();
        let llm: Arc<dyn Llm> = match &profile.llm_url {
            Some(url) => Arc::new(http::HttpLlm::new(url, timeout, limiter.clone())?),
            None => Arc::new(stub::StubLlm::new(profile.stub_seed)),
        };
        let renderer: Arc<dyn Renderer> = match &profile.renderer_url {
            Some(url) => {
                let staging = profile
                    .staging_dir
                    .clone()
                    .ok_or_else(|| Error::Config("renderer_url requires staging_dir".into()))?;
                Arc::new(http::HttpRenderer::new(url, staging, timeout, limiter.clone())?)
            }
            None => Arc::new(stub::StubRenderer),
        };
        let images: Arc<dyn ImageSynth> = match &profile.image_synth_url {
            Some(url) => Arc::new(http::HttpImageSynth::new(url, timeout, limiter.clone())?),
            None => Arc::new(stub::StubImageSynth),
        };
        let sketch: Arc<dyn SketchConverter> = match &profile.sketch_command {
            Some(cmd) => Arc::new(http::CommandSketchConverter::new(cmd.clone())),
            None => Arc::new(stub::StubSketchConverter),
        };
        let embedder: Arc<dyn Embedder> = match &profile.embedding_url {
            Some(url) => Arc::new(http::HttpEmbedder::new(url, profile.embedding_dimension, timeout, limiter)?),
            None => Arc::new(stub::StubEmbedder::new(profile.embedding_dimension, profile.stub_seed)),
        };
        Ok(Backends {
            profile,
            llm,
            renderer,
            images,
            sketch,
            embedder,
        })
    }
}

/// Bounds the number of in-flight requests shared by a set of clients.
#[derive(Debug, Clone)]
pub struct Limiter {
    inner: Arc<(Mutex<usize>, Condvar)>,
    limit: usize,
}

pub struct Permit {
    inner: Arc<(Mutex<usize>, Condvar)>,
}

impl Limiter {
    pub fn new(limit: usize) -> Self {
        Limiter {
            inner: Arc::new((Mutex::new(0), Condvar::new())),
            limit: limit.max(1),
        }
    }

    pub fn acquire(&self) -> Permit {
        let (lock, cvar) = &*self.inner;
        let mut in_flight = lock.lock().expect("limiter lock");
        while *in_flight >= self.limit {
            in_flight = cvar.wait(in_flight).expect("limiter lock");
        }
        *in_flight += 1;
        Permit {
            inner: self.inner.clone(),
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.inner.0.lock().expect("limiter lock")
    }
}

impl Drop for Permit {
    fn drop(&mut self) {
        let (lock, cvar) = &*self.inner;
        *lock.lock().expect("limiter lock") -= 1;
        cvar.notify_one();
    }
}

fn is_transient(err: &Error) -> bool {
    matches!(err, Error::Backend { .. } | Error::Render { .. })
}

/// Runs `op` until it succeeds, retrying transient backend failures up to
/// `budget` extra times. `op` receives the attempt number.
pub fn with_retry<T>(budget: u32, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Err(e) if is_transient(&e) && attempt < budget => {
                log::warn!("attempt {attempt} failed, retrying: {e}");
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Payload of an LLM response: the first fenced code block if there is
/// one, otherwise the whole response.
pub fn extract_markup(response: &str) -> &str {
    if let Some(open) = response.find("```") {
        let after = &response[open + 3..];
        // Skip the info string (e.g. `html`) up to the end of the line.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        if let Some(close) = body.find("```") {
            return body[..close].trim();
        }
        return body.trim();
    }
    response.trim()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRequest {
    pub target_n: usize,
    pub seed_examples: Vec<String>,
    pub temperature: f64,
    pub rng_seed: u64,
    /// Consecutive calls adding nothing before giving up.
    pub max_stalled_calls: usize,
}

impl DescriptionRequest {
    pub fn new(target_n: usize, seed_examples: Vec<String>, temperature: f64, rng_seed: u64) -> Self {
        DescriptionRequest {
            target_n,
            seed_examples,
            temperature,
            rng_seed,
            max_stalled_calls: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptionRun {
    pub texts: Vec<String>,
    pub calls: usize,
}

fn parse_description_lines(response: &str) -> Vec<String> {
    response
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            // Drop "12." / "12)" enumeration.
            let digits = l.bytes().take_while(u8::is_ascii_digit).count();
            let l = if digits > 0 && matches!(l.as_bytes().get(digits), Some(b'.' | b')')) {
                &l[digits + 1..]
            } else {
                l
            };
            l.trim().trim_matches('"').trim().to_owned()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Repeatedly asks for ten more descriptions and merges them until
/// `target_n` unique texts exist; returns exactly `target_n`.
pub fn generate_descriptions(llm: &dyn Llm, profile: &BackendProfile, req: &DescriptionRequest) -> Result<DescriptionRun> {
    if req.target_n == 0 {
        return Err(Error::validation("target_n", "must be positive"));
    }
    if req.seed_examples.iter().all(|e| e.trim().is_empty()) {
        return Err(Error::validation("seed_examples", "at least one example is required"));
    }
    let mut set = DescriptionSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let prompt = prompts::descriptions_prompt(&req.seed_examples);
    let mut calls = 0;
    let mut stalled = 0;
    while set.len() < req.target_n {
        let request = LlmRequest {
            model: profile.llm_model.clone(),
            prompt: prompt.clone(),
            temperature: req.temperature,
            max_output_tokens: profile.max_output_tokens,
            seed: rng.random(),
        };
        calls += 1;
        let response = match with_retry(profile.retry_budget, |_| llm.complete(&request)) {
            Ok(r) => r,
            Err(e) => {
                return Err(Error::PartialResult {
                    collected: set.into_texts(),
                    reason: e.to_string(),
                })
            }
        };
        let added = dedup_merge(&mut set, parse_description_lines(&response).into_iter().take(DESCRIPTIONS_PER_CALL));
        stalled = if added == 0 { stalled + 1 } else { 0 };
        if stalled >= req.max_stalled_calls {
            return Err(Error::PartialResult {
                collected: set.into_texts(),
                reason: format!("{stalled} consecutive calls produced no new descriptions"),
            });
        }
    }
    let mut texts = set.into_texts();
    texts.truncate(req.target_n);
    Ok(DescriptionRun { texts, calls })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub htmls: Vec<String>,
    /// `(request index, error)` for candidates that could not be obtained.
    pub failures: Vec<(usize, String)>,
}

/// Samples `n` pages for one description with the generation prompt.
pub fn generate_candidates(
    llm: &dyn Llm,
    profile: &BackendProfile,
    description: &str,
    n: usize,
    temperature: f64,
    rng_seed: u64,
) -> Result<CandidateSet> {
    if n == 0 {
        return Err(Error::validation("n", "must be at least 1"));
    }
    let prompt = prompts::generation_prompt(description);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = CandidateSet::default();
    for i in 0..n {
        let request = LlmRequest {
            model: profile.llm_model.clone(),
            prompt: prompt.clone(),
            temperature,
            max_output_tokens: profile.max_output_tokens,
            seed: rng.random(),
        };
        match with_retry(profile.retry_budget, |_| llm.complete(&request)) {
            Ok(resp) => {
                let markup = extract_markup(&resp);
                if markup.is_empty() {
                    out.failures.push((i, "empty response".into()));
                } else {
                    out.htmls.push(markup.to_owned());
                }
            }
            Err(e) => out.failures.push((i, e.to_string())),
        }
    }
    if out.htmls.is_empty() {
        return Err(Error::backend("llm", format!("no candidates obtained for `{description}`")));
    }
    Ok(out)
}

/// A revision must be a whole document, not a diff or a fragment.
fn check_complete(original: &str, revised: &str) -> Result<()> {
    let doc = Document::parse(revised);
    if doc.elements().next().is_none() {
        return Err(Error::MalformedEdit("response contains no markup".into()));
    }
    let has_html = |s: &str| s.to_ascii_lowercase().contains("<html");
    if has_html(original) && !revised.to_ascii_lowercase().contains("</html>") {
        return Err(Error::MalformedEdit("response is not a complete document".into()));
    }
    Ok(())
}

fn edit(llm: &dyn Llm, profile: &BackendProfile, original: &str, prompt: String, seed: u64) -> Result<String> {
    let request = LlmRequest {
        model: profile.llm_model.clone(),
        prompt,
        temperature: 0.0,
        max_output_tokens: profile.max_output_tokens,
        seed,
    };
    let response = with_retry(profile.retry_budget, |_| llm.complete(&request))?;
    let revised = extract_markup(&response).to_owned();
    check_complete(original, &revised)?;
    Ok(revised)
}

/// Asks the code model to apply a designer's comments; returns the full revised page.
pub fn improve_with_comments<S: AsRef<str>>(
    llm: &dyn Llm,
    profile: &BackendProfile,
    html: &str,
    comments: &[S],
) -> Result<String> {
    if comments.is_empty() {
        return Err(Error::validation("comments", "at least one comment is required"));
    }
    edit(llm, profile, html, prompts::comment_edit_prompt(html, comments), profile.stub_seed)
}

/// Like [`improve_with_comments`], with each comment paired with the
/// markup snippet it was grounded to.
pub fn improve_with_regions<S: AsRef<str>, T: AsRef<str>>(
    llm: &dyn Llm,
    profile: &BackendProfile,
    html: &str,
    grounded: &[(S, T)],
) -> Result<String> {
    if grounded.is_empty() {
        return Err(Error::validation("grounded", "at least one region is required"));
    }
    edit(llm, profile, html, prompts::region_edit_prompt(html, grounded), profile.stub_seed)
}

/// Renders a staged page and checks the screenshot matches the viewport.
pub fn render(renderer: &dyn Renderer, profile: &BackendProfile, manifest: &StagingManifest, viewport: Viewport) -> Result<RenderResult> {
    let result = with_retry(profile.retry_budget, |_| renderer.render(manifest, viewport))?;
    let (w, h) = raster::png_dimensions(&result.screenshot)?;
    if (w, h) != (viewport.width, viewport.height) {
        return Err(Error::Render {
            message: format!("screenshot is {w}x{h}, expected {}x{}", viewport.width, viewport.height),
            log_excerpt: String::new(),
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placeholder {
    pub bytes: Vec<u8>,
    /// The backend failed and the stub image was substituted.
    pub fallback: bool,
}

pub fn synthesize_placeholder(images: &dyn ImageSynth, profile: &BackendProfile, prompt: &str) -> Result<Placeholder> {
    if prompt.trim().is_empty() {
        return Err(Error::validation("prompt", "placeholder prompt is empty"));
    }
    match with_retry(profile.retry_budget, |_| images.synthesize(prompt)) {
        Ok(bytes) => Ok(Placeholder { bytes, fallback: false }),
        Err(e) => {
            log::warn!("image synthesis failed for `{prompt}`, using stub image: {e}");
            Ok(Placeholder {
                bytes: stub::StubImageSynth.synthesize(prompt)?,
                fallback: true,
            })
        }
    }
}

/// Converts a rendered page to a design document after checking that the
/// geometry belongs to this markup.
pub fn to_sketch(converter: &dyn SketchConverter, html: &str, geometry: &GeometryMap) -> Result<Vec<u8>> {
    let doc = Document::parse(html);
    if let Some(stale) = geometry.boxes.iter().find(|b| doc.find(&b.element_path).is_none()) {
        return Err(Error::StaleGeometry {
            path: stale.element_path.to_string(),
        });
    }
    converter.to_sketch(html, geometry)
}

pub fn preview(converter: &dyn SketchConverter, document: &[u8]) -> Result<Vec<u8>> {
    converter.preview(document)
}

/// Unit-normalized embedding of `payload`.
pub fn embed(embedder: &dyn Embedder, kind: EmbedKind, payload: &[u8]) -> Result<Vec<f64>> {
    if payload.is_empty() {
        return Err(Error::validation("payload", "embedding payload is empty"));
    }
    let mut v = embedder.embed(kind, payload)?;
    if v.len() != embedder.dimension() {
        return Err(Error::Config(format!(
            "embedder returned dimension {}, configured {}",
            v.len(),
            embedder.dimension()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Numeric(format!("embedding has norm {norm}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Synthesizes placeholders for every image, stages the page and renders
/// it at the profile's viewport.
pub fn render_page(backends: &Backends, html: &str) -> Result<RenderResult> {
    let mut images = BTreeMap::new();
    for image in crate::htmlkit::extract_images(html) {
        if image.placeholder_prompt.trim().is_empty() || images.contains_key(&image.placeholder_prompt) {
            continue;
        }
        let placeholder = synthesize_placeholder(backends.images.as_ref(), &backends.profile, &image.placeholder_prompt)?;
        images.insert(image.placeholder_prompt, placeholder.bytes);
    }
    let manifest = crate::htmlkit::stage_assets(html, &images, &backends.profile.libraries)?;
    render(backends.renderer.as_ref(), &backends.profile, &manifest, backends.profile.viewport)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedRefs {
    pub screenshot: ContentHash,
    pub geometry: ContentHash,
    pub sketch: Option<ContentHash>,
}

/// Persists a render (and optionally its design document) as artifacts of
/// `candidate_id`.
pub fn store_render(
    store: &Store,
    backends: &Backends,
    candidate_id: &CandidateId,
    html: &str,
    result: &RenderResult,
    with_sketch: bool,
) -> Result<RenderedRefs> {
    let screenshot = store.put_blob(&result.screenshot)?;
    let geometry = store.put_blob(result.geometry.to_text().as_bytes())?;
    let sketch = if with_sketch {
        let doc = to_sketch(backends.sketch.as_ref(), html, &result.geometry)?;
        Some(store.put_blob(&doc)?)
    } else {
        None
    };
    store.attach_artifacts(candidate_id, Some(screenshot.clone()), Some(geometry.clone()), sketch.clone())?;
    Ok(RenderedRefs {
        screenshot,
        geometry,
        sketch,
    })
}

/// Renders a stored candidate and records its artifacts.
pub fn render_candidate(store: &Store, backends: &Backends, candidate_id: &CandidateId, with_sketch: bool) -> Result<RenderedRefs> {
    let html = store.candidate_html(candidate_id)?;
    let result = render_page(backends, &html)?;
    store_render(store, backends, candidate_id, &html, &result, with_sketch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl Llm for Flaky {
        fn complete(&self, _: &LlmRequest) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(Error::backend("flaky", "transient"))
            } else {
                Ok("ok".into())
            }
        }
    }

    fn req() -> LlmRequest {
        LlmRequest {
            model: "m".into(),
            prompt: "p".into(),
            temperature: 1.0,
            max_output_tokens: 16,
            seed: 0,
        }
    }

    #[test]
    fn retry_budget_respected() {
        for r in 0..4 {
            for budget in 0..4 {
                let llm = Flaky {
                    failures: r,
                    calls: AtomicU32::new(0),
                };
                let out = with_retry(budget, |_| llm.complete(&req()));
                assert_eq!(out.is_ok(), budget >= r, "r={r} budget={budget}");
            }
        }
    }

    #[test]
    fn non_transient_errors_not_retried() {
        let calls = AtomicU32::new(0);
        let out: Result<()> = with_retry(5, |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Error::Config("bad".into()))
        });
        assert!(out.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn markup_extraction() {
        assert_eq!(extract_markup("sure!\n```html\n<p>x</p>\n```\nbye"), "<p>x</p>");
        assert_eq!(extract_markup("```\n<p>y</p>\n```"), "<p>y</p>");
        assert_eq!(extract_markup("  <p>z</p> "), "<p>z</p>");
        assert_eq!(extract_markup("```html\n<p>unterminated"), "<p>unterminated");
        assert_eq!(extract_markup("a ```html\n<a></a>``` b ```html\n<b></b>```"), "<a></a>");
    }

    #[test]
    fn description_line_parsing() {
        let lines = parse_description_lines("1. A login screen\n- a cart page\n\n  3) \"settings\"\n* profile");
        assert_eq!(lines, ["A login screen", "a cart page", "settings", "profile"]);
    }

    #[test]
    fn profile_validation() {
        assert!(BackendProfile::default().validate().is_ok());
        let bad = BackendProfile {
            timeout_secs: 0.0,
            ..BackendProfile::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackendProfile {
            max_in_flight: 0,
            ..BackendProfile::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(BackendProfile::default().viewport, Viewport { width: 390, height: 844 });
        assert_eq!(BackendProfile::default().max_output_tokens, 4096);
        assert_eq!(BackendProfile::default().embedding_dimension, 512);
    }

    #[test]
    fn profile_from_toml() {
        let p: BackendProfile = toml_like(r#"{"retry_budget": 5, "viewport": {"width": 1280, "height": 800}}"#);
        assert_eq!(p.retry_budget, 5);
        assert_eq!(p.viewport.width, 1280);
        assert_eq!(p.llm_model, BackendProfile::default().llm_model);
    }

    fn toml_like(json: &str) -> BackendProfile {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Limiter::new(2);
        let peak = Arc::new(Mutex::new(0usize));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limiter = limiter.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limiter.acquire();
                    let now = limiter.in_flight();
                    let mut m = peak.lock().unwrap();
                    *m = (*m).max(now);
                    drop(m);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn incomplete_edit_rejected() {
        assert!(check_complete("<html><body></body></html>", "<div>just a fragment</div>").is_err());
        assert!(check_complete("<div>x</div>", "<div>y</div>").is_ok());
        assert!(check_complete("<html></html>", "no markup at all").is_err());
    }
}
