//! Chat providers: a chat-completions-style HTTP client with inline base64
//! images, and table-driven mocks for offline runs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::parse::format_numbered;
use super::{ChatTurn, GatewayError, Role};
use crate::corpus::CorpusManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Chat-completions HTTP endpoint with role-tagged messages.
    Http,
    /// Answers every question with the expected answer, numbered.
    MockOracle,
    /// Returns an empty string for every request.
    MockEmpty,
    /// Replays canned numbered answers from the `answers` table.
    MockTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable naming the bearer token; never the token itself.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_answer_tokens")]
    pub max_answer_tokens: u32,
    #[serde(default = "default_image_width")]
    pub image_width: u32,
    #[serde(default = "default_image_height")]
    pub image_height: u32,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Canned answers for `mock-table`, keyed by frame id.
    #[serde(default)]
    pub answers: BTreeMap<String, Vec<String>>,
}

fn default_max_answer_tokens() -> u32 {
    512
}
fn default_image_width() -> u32 {
    1920
}
fn default_image_height() -> u32 {
    1080
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let config: ProviderConfig = toml::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(GatewayError::Config("image dimensions must be > 0".into()));
        }
        if self.kind == ProviderKind::Http && self.endpoint.is_none() {
            return Err(GatewayError::Config("http provider needs an endpoint".into()));
        }
        Ok(())
    }

    /// Instantiates the provider. Mocks that answer per frame need the
    /// manifest to resolve image paths back to frames.
    pub fn build(&self, manifest: &CorpusManifest) -> Result<Box<dyn ChatProvider>, GatewayError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Http => Box::new(HttpProvider::new(self.clone())?),
            ProviderKind::MockOracle => Box::new(MockProvider::oracle(self, manifest)),
            ProviderKind::MockEmpty => Box::new(MockProvider::empty(self)),
            ProviderKind::MockTable => {
                Box::new(MockProvider::table(self, manifest, self.answers.clone()))
            }
        })
    }
}

pub trait ChatProvider: Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &str;
    fn ask(&self, turns: &[ChatTurn]) -> Result<String, GatewayError>;
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: Vec<WireMessage>,
}

#[derive(Serialize)]
struct WireMessage {
    role: &'static str,
    content: Vec<WirePart>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart {
    Text { text: String },
    ImageUrl { image_url: WireImage },
}

#[derive(Serialize)]
struct WireImage {
    url: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpProvider { config, client })
    }

    /// Resizes the image to the configured dimensions and inlines it as a
    /// base64 data URL.
    fn encode_image(&self, path: &Path) -> Result<String, GatewayError> {
        let bytes = std::fs::read(path).map_err(|e| GatewayError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let decoded = image::load_from_memory(&bytes).map_err(|e| GatewayError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let resized = decoded.resize_exact(
            self.config.image_width,
            self.config.image_height,
            image::imageops::FilterType::Triangle,
        );
        let mut png = Vec::new();
        resized
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| GatewayError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
        Ok(format!("data:image/png;base64,{b64}"))
    }

    /// Serialized request body. Pure given the turns and config, so repeat
    /// calls produce byte-identical payloads (the cache key relies on this).
    pub fn request_body(&self, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        let mut messages = Vec::with_capacity(turns.len());
        for turn in turns {
            let role = match turn.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let mut content = vec![WirePart::Text {
                text: turn.text.clone(),
            }];
            if let Some(path) = &turn.image {
                content.push(WirePart::ImageUrl {
                    image_url: WireImage {
                        url: self.encode_image(path)?,
                    },
                });
            }
            messages.push(WireMessage { role, content });
        }
        let request = ChatRequest {
            model: &self.config.model,
            temperature: self.config.temperature,
            max_tokens: self.config.max_answer_tokens,
            messages,
        };
        serde_json::to_string(&request).map_err(|e| GatewayError::Config(e.to_string()))
    }

    fn send_once(&self, body: &str) -> Result<String, SendFailure> {
        let mut req = self
            .client
            .post(self.config.endpoint.as_deref().unwrap_or_default())
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var).map_err(|_| {
                SendFailure::Fatal(GatewayError::Auth {
                    provider: self.config.name.clone(),
                    message: format!("auth variable {var} not set"),
                })
            })?;
            req = req.bearer_auth(token);
        }

        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                SendFailure::Retry(RetryReason::Timeout, e.to_string())
            } else {
                SendFailure::Retry(RetryReason::Transport, e.to_string())
            }
        })?;

        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(SendFailure::Fatal(GatewayError::Auth {
                provider: self.config.name.clone(),
                message: format!("HTTP {status}"),
            }));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(SendFailure::Retry(RetryReason::RateLimited, format!("HTTP {status}")));
        }
        if status.is_server_error() {
            return Err(SendFailure::Retry(RetryReason::Transport, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(SendFailure::Fatal(GatewayError::MalformedResponse(format!(
                "HTTP {status}"
            ))));
        }

        let parsed: ChatResponse = resp.json().map_err(|e| {
            SendFailure::Fatal(GatewayError::MalformedResponse(e.to_string()))
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| {
                SendFailure::Fatal(GatewayError::MalformedResponse("no choices in response".into()))
            })
    }
}

enum RetryReason {
    Timeout,
    RateLimited,
    Transport,
}

enum SendFailure {
    Fatal(GatewayError),
    Retry(RetryReason, String),
}

impl ChatProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn ask(&self, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        let body = self.request_body(turns)?;
        let attempts = self.config.max_attempts.max(1);
        let mut last: Option<(RetryReason, String)> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.retry_backoff_ms << (attempt - 1).min(6),
                ));
            }
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(SendFailure::Fatal(err)) => return Err(err),
                Err(SendFailure::Retry(reason, message)) => last = Some((reason, message)),
            }
        }
        let (reason, message) = last.expect("at least one attempt");
        Err(match reason {
            RetryReason::Timeout => GatewayError::Timeout { attempts, message },
            RetryReason::RateLimited => GatewayError::RateLimited { attempts, message },
            RetryReason::Transport => GatewayError::Transport { attempts, message },
        })
    }
}

// ---------------------------------------------------------------------------
// Mock providers
// ---------------------------------------------------------------------------

enum MockBehavior {
    Oracle,
    Empty,
    Table(BTreeMap<String, Vec<String>>),
}

/// Offline provider that resolves the current frame from the image path of
/// the most recent user turn. Records every call for protocol assertions.
pub struct MockProvider {
    name: String,
    model: String,
    behavior: MockBehavior,
    /// image path -> (frame id, expected answers in question order)
    frames: HashMap<PathBuf, (String, Vec<String>)>,
    calls: Mutex<Vec<usize>>,
}

impl MockProvider {
    fn frame_index(manifest: &CorpusManifest) -> HashMap<PathBuf, (String, Vec<String>)> {
        manifest
            .frames
            .iter()
            .map(|f| {
                let answers = f.questions.iter().map(|q| q.expected_answer.clone()).collect();
                (manifest.image_path(f), (f.frame_id.clone(), answers))
            })
            .collect()
    }

    pub fn oracle(config: &ProviderConfig, manifest: &CorpusManifest) -> Self {
        MockProvider {
            name: config.name.clone(),
            model: config.model.clone(),
            behavior: MockBehavior::Oracle,
            frames: Self::frame_index(manifest),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn empty(config: &ProviderConfig) -> Self {
        MockProvider {
            name: config.name.clone(),
            model: config.model.clone(),
            behavior: MockBehavior::Empty,
            frames: HashMap::new(),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn table(
        config: &ProviderConfig,
        manifest: &CorpusManifest,
        answers: BTreeMap<String, Vec<String>>,
    ) -> Self {
        MockProvider {
            name: config.name.clone(),
            model: config.model.clone(),
            behavior: MockBehavior::Table(answers),
            frames: Self::frame_index(manifest),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Turn counts of every request received, in call order.
    pub fn call_turn_counts(&self) -> Vec<usize> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    fn current_frame(&self, turns: &[ChatTurn]) -> Result<&(String, Vec<String>), GatewayError> {
        let image = turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User && t.image.is_some())
            .and_then(|t| t.image.as_ref())
            .ok_or_else(|| GatewayError::MalformedResponse("mock saw no user image turn".into()))?;
        self.frames.get(image).ok_or_else(|| {
            GatewayError::MalformedResponse(format!("mock has no frame for image {}", image.display()))
        })
    }
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn ask(&self, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        self.calls.lock().unwrap().push(turns.len());
        match &self.behavior {
            MockBehavior::Empty => Ok(String::new()),
            MockBehavior::Oracle => {
                let (_, answers) = self.current_frame(turns)?;
                Ok(format_numbered(answers))
            }
            MockBehavior::Table(table) => {
                let (frame_id, _) = self.current_frame(turns)?;
                let answers = table.get(frame_id).ok_or_else(|| {
                    GatewayError::MalformedResponse(format!("no canned answers for frame {frame_id}"))
                })?;
                Ok(format_numbered(answers))
            }
        }
    }
}
