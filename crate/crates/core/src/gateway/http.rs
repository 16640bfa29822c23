//! Network and subprocess clients.
//!
//! All HTTP backends speak small JSON protocols:
//!
//! | backend  | request body                                   | response body                                   |
//! |----------|------------------------------------------------|-------------------------------------------------|
//! | llm      | [`LlmRequest`]                                 | `{"text": ...}`                                 |
//! | renderer | `{"staging_root", "entry", "viewport"}`        | `{"screenshot_png_base64", "geometry", "truncated"}` |
//! | images   | `{"prompt": ...}`                              | `{"png_base64": ...}`                           |
//! | embedder | `{"kind": "image"\|"text", "payload_base64"}`  | `{"embedding": [...]}`                          |
//!
//! The renderer's `geometry` is the tab-separated geometry text format
//! (see [`GeometryMap::to_text`]).
//!
//! 5xx responses and transport failures are reported as transient backend
//! errors; 4xx responses are not retried.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EmbedKind, Embedder, ImageSynth, Limiter, Llm, LlmRequest, RenderResult, Renderer, SketchConverter};
use crate::error::{Error, Result};
use crate::htmlkit::{GeometryMap, StagingManifest, Viewport};

struct JsonClient {
    name: &'static str,
    url: String,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl JsonClient {
    fn new(name: &'static str, url: &str, timeout: Duration, limiter: Limiter) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("{name} client: {e}")))?;
        Ok(JsonClient {
            name,
            url: url.to_owned(),
            client,
            limiter,
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| Error::backend(self.name, e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::backend(self.name, format!("{status}: {}", excerpt(&text))));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::InvalidInput(format!("{} rejected request ({status}): {}", self.name, excerpt(&text))));
        }
        resp.json()
            .map_err(|e| Error::backend(self.name, format!("malformed response: {e}")))
    }
}

fn excerpt(text: &str) -> String {
    text.chars().take(500).collect()
}

fn decode_b64(name: &str, s: &str) -> Result<Vec<u8>> {
    B64.decode(s.trim())
        .map_err(|e| Error::backend(name, format!("invalid base64: {e}")))
}

pub struct HttpLlm(JsonClient);

impl HttpLlm {
    pub fn new(url: &str, timeout: Duration, limiter: Limiter) -> Result<Self> {
        JsonClient::new("llm", url, timeout, limiter).map(HttpLlm)
    }
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl Llm for HttpLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        self.0.post::<_, TextResponse>(request).map(|r| r.text)
    }
}

/// Writes the staged page into a directory shared with the renderer
/// service, then asks it to load the entry file.
pub struct HttpRenderer {
    client: JsonClient,
    staging_dir: PathBuf,
}

impl HttpRenderer {
    pub fn new(url: &str, staging_dir: PathBuf, timeout: Duration, limiter: Limiter) -> Result<Self> {
        Ok(HttpRenderer {
            client: JsonClient::new("renderer", url, timeout, limiter)?,
            staging_dir,
        })
    }
}

#[derive(Serialize)]
struct RenderRequest {
    staging_root: PathBuf,
    entry: String,
    viewport: Viewport,
}

#[derive(Deserialize)]
struct RenderResponse {
    screenshot_png_base64: Option<String>,
    geometry: Option<String>,
    #[serde(default)]
    truncated: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    log: String,
}

impl Renderer for HttpRenderer {
    fn render(&self, manifest: &StagingManifest, viewport: Viewport) -> Result<RenderResult> {
        let root = self.staging_dir.join(manifest.entry.content_hash.short());
        manifest.materialize(&root)?;
        let resp: RenderResponse = self.client.post(&RenderRequest {
            staging_root: root,
            entry: manifest.entry.path.clone(),
            viewport,
        })?;
        let failed = |message: String| Error::Render {
            message,
            log_excerpt: excerpt(&resp.log),
        };
        if let Some(e) = &resp.error {
            return Err(failed(e.clone()));
        }
        let (Some(shot), Some(geometry)) = (&resp.screenshot_png_base64, &resp.geometry) else {
            return Err(failed("renderer returned no screenshot".into()));
        };
        let geometry = GeometryMap::from_text(geometry)?;
        Ok(RenderResult {
            screenshot: decode_b64("renderer", shot)?,
            geometry,
            truncated: resp.truncated,
        })
    }
}

pub struct HttpImageSynth(JsonClient);

impl HttpImageSynth {
    pub fn new(url: &str, timeout: Duration, limiter: Limiter) -> Result<Self> {
        JsonClient::new("images", url, timeout, limiter).map(HttpImageSynth)
    }
}

#[derive(Serialize)]
struct ImageRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ImageResponse {
    png_base64: String,
}

impl ImageSynth for HttpImageSynth {
    fn synthesize(&self, prompt: &str) -> Result<Vec<u8>> {
        let resp: ImageResponse = self.0.post(&ImageRequest { prompt })?;
        decode_b64("images", &resp.png_base64)
    }
}

pub struct HttpEmbedder {
    client: JsonClient,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(url: &str, dimension: usize, timeout: Duration, limiter: Limiter) -> Result<Self> {
        Ok(HttpEmbedder {
            client: JsonClient::new("embedder", url, timeout, limiter)?,
            dimension,
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest {
    kind: EmbedKind,
    payload_base64: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, kind: EmbedKind, payload: &[u8]) -> Result<Vec<f64>> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest {
            kind,
            payload_base64: B64.encode(payload),
        })?;
        Ok(resp.embedding)
    }
}

/// Runs an external converter: `<cmd> to-sketch` reads `{"html", "geometry"}`
/// on stdin and writes the document; `<cmd> preview` reads the document and
/// writes a PNG.
pub struct CommandSketchConverter {
    command: Vec<String>,
}

impl CommandSketchConverter {
    pub fn new(command: Vec<String>) -> Self {
        CommandSketchConverter { command }
    }

    fn run(&self, verb: &str, input: &[u8]) -> Result<Vec<u8>> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::Config("sketch_command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .arg(verb)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::backend("sketch", format!("cannot start {program}: {e}")))?;
        // Write on another thread so a chatty child cannot deadlock us.
        let mut stdin = child.stdin.take().expect("stdin piped");
        let input = input.to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let out = child
            .wait_with_output()
            .map_err(|e| Error::backend("sketch", e.to_string()))?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(Error::backend(
                "sketch",
                format!("{verb} exited with {}: {}", out.status, excerpt(&String::from_utf8_lossy(&out.stderr))),
            ));
        }
        Ok(out.stdout)
    }
}

impl SketchConverter for CommandSketchConverter {
    fn to_sketch(&self, html: &str, geometry: &GeometryMap) -> Result<Vec<u8>> {
        let input = serde_json::to_vec(&serde_json::json!({ "html": html, "geometry": geometry }))?;
        self.run("to-sketch", &input)
    }

    fn preview(&self, document: &[u8]) -> Result<Vec<u8>> {
        self.run("preview", document)
    }
}
