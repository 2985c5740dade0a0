use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::http::{png_data_url, JsonEndpoint, RetryPolicy, TokenBucket};
use super::prompt::{parse_answer, repair_instruction, PromptBundle};
use super::PerceptionError;
use crate::materials::MaterialLibrary;

pub const LMM_TOKEN_ENV: &str = "GSPROP_LMM_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub images: Vec<RgbImage>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            images: Vec::new(),
        }
    }
}

/// Anything that can answer a chat conversation with one reply.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, PerceptionError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmmConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    pub model: String,
    pub timeout_s: f64,
    pub max_tokens: u32,
    /// Parse retries with a repair instruction after the first reply.
    pub retry_max: u32,
    pub transport: RetryPolicy,
    pub requests_per_second: f64,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for LmmConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4-vision-preview".into(),
            timeout_s: 120.0,
            max_tokens: 600,
            retry_max: 2,
            transport: RetryPolicy::default(),
            requests_per_second: 2.0,
            max_in_flight: 4,
            cache_dir: None,
        }
    }
}

/// Chat-completions client: temperature 0, images as base64 PNG data URLs.
pub struct HttpLmm {
    endpoint: JsonEndpoint,
    model: String,
    max_tokens: u32,
}

impl HttpLmm {
    /// Reads the bearer token from `GSPROP_LMM_TOKEN`.
    pub fn from_env(config: &LmmConfig) -> Result<Self, PerceptionError> {
        let token = std::env::var(LMM_TOKEN_ENV)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or(PerceptionError::MissingToken(LMM_TOKEN_ENV))?;
        Ok(Self::with_token(config, Some(token)))
    }

    pub fn with_token(config: &LmmConfig, token: Option<String>) -> Self {
        Self {
            endpoint: JsonEndpoint::new(
                config.url.clone(),
                token,
                Duration::from_secs_f64(config.timeout_s),
                config.transport.clone(),
                TokenBucket::new(config.requests_per_second, config.max_in_flight.max(1) as u32),
                config.cache_dir.clone(),
            ),
            model: config.model.clone(),
            max_tokens: config.max_tokens,
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Result<serde_json::Value, PerceptionError> {
        let mut out = Vec::with_capacity(messages.len());
        for m in messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if m.images.is_empty() {
                out.push(json!({"role": role, "content": m.text}));
            } else {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for img in &m.images {
                    parts.push(json!({"type": "image_url", "image_url": {"url": png_data_url(img)?}}));
                }
                out.push(json!({"role": role, "content": parts}));
            }
        }
        Ok(json!({
            "model": self.model,
            "temperature": 0,
            "max_tokens": self.max_tokens,
            "messages": out,
        }))
    }
}

impl ChatTransport for HttpLmm {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, PerceptionError> {
        let body = self.request_body(messages)?;
        let text = self.endpoint.post(&body)?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PerceptionError::BadResponse(format!("not JSON: {e}")))?;
        let content = &v["choices"][0]["message"]["content"];
        match content {
            serde_json::Value::String(s) => Ok(s.clone()),
            // Some servers return content as a list of text parts.
            serde_json::Value::Array(parts) => Ok(parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("")),
            _ => Err(PerceptionError::BadResponse("missing choices[0].message.content".into())),
        }
    }
}

/// Stored per-segment answers: one file per view, lines
/// `segment_id material_id [confidence]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureStore {
    entries: BTreeMap<(String, u32), (String, f64)>,
}

impl FixtureStore {
    pub fn insert_text(&mut self, view_id: &str, text: &str, source: &Path) -> Result<(), PerceptionError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| PerceptionError::Fixture {
                path: source.to_path_buf(),
                line: n + 1,
                reason: reason.into(),
            };
            let mut it = line.split_whitespace();
            let seg: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad segment id"))?;
            let material = it.next().ok_or_else(|| err("missing material id"))?.to_string();
            let confidence = match it.next() {
                Some(c) => c
                    .parse::<f64>()
                    .ok()
                    .filter(|c| (0.0..=1.0).contains(c))
                    .ok_or_else(|| err("confidence must be in [0, 1]"))?,
                None => 1.0,
            };
            if self.entries.insert((view_id.to_string(), seg), (material, confidence)).is_some() {
                return Err(err("duplicate segment id"));
            }
        }
        Ok(())
    }

    /// Loads `<dir>/<view_id>.txt` for every text file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PerceptionError> {
        let mut store = Self::default();
        let entries = std::fs::read_dir(dir).map_err(|e| PerceptionError::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(view) = p.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&p).map_err(|e| PerceptionError::io(&p, e))?;
            store.insert_text(view, &text, &p)?;
        }
        Ok(store)
    }

    pub fn get(&self, view_id: &str, segment_id: u32) -> Option<(&str, f64)> {
        self.entries
            .get(&(view_id.to_string(), segment_id))
            .map(|(m, c)| (m.as_str(), *c))
    }

    pub fn has_view(&self, view_id: &str) -> bool {
        self.entries.keys().any(|(v, _)| v == view_id)
    }
}

/// Where material answers come from.
pub enum MaterialSource<'a> {
    Fixture(&'a FixtureStore),
    Live { transport: &'a dyn ChatTransport, retry_max: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStatus {
    Resolved,
    /// The answer named something the library does not know.
    NotFound,
    /// No parseable answer after all retries (or no fixture entry).
    NoAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAnnotation {
    pub view_id: String,
    pub segment_id: u32,
    /// Library key; `None` when unresolved.
    pub material_id: Option<String>,
    pub raw_material_text: String,
    /// `(density, youngs_modulus, poisson)` as stated in the answer.
    pub properties_quoted: Option<(f64, f64, f64)>,
    pub confidence: f64,
    pub status: AnnotationStatus,
}

impl SegmentAnnotation {
    fn unresolved(view_id: &str, segment_id: u32, raw: String, status: AnnotationStatus) -> Self {
        Self {
            view_id: view_id.into(),
            segment_id,
            material_id: None,
            raw_material_text: raw,
            properties_quoted: None,
            confidence: 0.0,
            status,
        }
    }
}

/// Asks for the whole-object description used as context for part queries.
pub fn query_description(transport: &dyn ChatTransport, bundle: &PromptBundle) -> Result<String, PerceptionError> {
    let messages = [
        ChatMessage::new(Role::System, bundle.system_text.clone()),
        ChatMessage {
            role: Role::User,
            text: bundle.user_text.clone(),
            images: bundle.images.clone(),
        },
    ];
    Ok(transport.complete(&messages)?.trim().to_string())
}

/// Obtains and resolves the material for one segment. Unparseable replies
/// are retried up to `retry_max` times with a repair instruction appended;
/// live answers parsed after `n` repairs get confidence `1 / (n + 1)`.
/// Transport failures are returned as errors.
pub fn query_material(
    bundle: &PromptBundle,
    source: &MaterialSource<'_>,
    library: &MaterialLibrary,
    view_id: &str,
    segment_id: u32,
) -> Result<SegmentAnnotation, PerceptionError> {
    match source {
        MaterialSource::Fixture(store) => Ok(match store.get(view_id, segment_id) {
            None => SegmentAnnotation::unresolved(view_id, segment_id, String::new(), AnnotationStatus::NoAnswer),
            Some((text, confidence)) => match library.resolve(text) {
                Ok(rec) => SegmentAnnotation {
                    view_id: view_id.into(),
                    segment_id,
                    material_id: Some(rec.id.clone()),
                    raw_material_text: text.into(),
                    properties_quoted: None,
                    confidence,
                    status: AnnotationStatus::Resolved,
                },
                Err(_) => SegmentAnnotation::unresolved(view_id, segment_id, text.into(), AnnotationStatus::NotFound),
            },
        }),
        MaterialSource::Live { transport, retry_max } => {
            let mut messages = vec![
                ChatMessage::new(Role::System, bundle.system_text.clone()),
                ChatMessage {
                    role: Role::User,
                    text: bundle.user_text.clone(),
                    images: bundle.images.clone(),
                },
            ];
            let mut last = String::new();
            for attempt in 0..=*retry_max {
                let reply = transport.complete(&messages)?;
                if let Some(ans) = parse_answer(&reply) {
                    return Ok(match library.resolve(&ans.material) {
                        Ok(rec) => SegmentAnnotation {
                            view_id: view_id.into(),
                            segment_id,
                            material_id: Some(rec.id.clone()),
                            raw_material_text: ans.material.clone(),
                            properties_quoted: ans.quoted(),
                            confidence: 1.0 / (attempt as f64 + 1.0),
                            status: AnnotationStatus::Resolved,
                        },
                        Err(_) => {
                            log::info!("view {view_id} segment {segment_id}: unknown material {:?}", ans.material);
                            let mut a = SegmentAnnotation::unresolved(
                                view_id,
                                segment_id,
                                ans.material.clone(),
                                AnnotationStatus::NotFound,
                            );
                            a.properties_quoted = ans.quoted();
                            a
                        }
                    });
                }
                log::info!("view {view_id} segment {segment_id}: unparseable reply (attempt {})", attempt + 1);
                messages.push(ChatMessage::new(Role::Assistant, reply.clone()));
                messages.push(ChatMessage::new(Role::User, repair_instruction()));
                last = reply;
            }
            Ok(SegmentAnnotation::unresolved(view_id, segment_id, last, AnnotationStatus::NoAnswer))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned replies in order and records what it was sent.
    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<usize>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for Scripted {
        fn complete(&self, messages: &[ChatMessage]) -> Result<String, PerceptionError> {
            self.seen.lock().unwrap().push(messages.len());
            Ok(self.replies.lock().unwrap().pop().unwrap_or_default())
        }
    }

    fn bundle() -> PromptBundle {
        PromptBundle {
            system_text: "s".into(),
            user_text: "u".into(),
            images: vec![],
        }
    }

    #[test]
    fn fixture_passthrough() {
        let lib = MaterialLibrary::seed();
        let mut store = FixtureStore::default();
        store.insert_text("3", "1 pine\n2 steel\n", Path::new("3.txt")).unwrap();
        let a = query_material(&bundle(), &MaterialSource::Fixture(&store), &lib, "3", 2).unwrap();
        assert_eq!(a.material_id.as_deref(), Some("steel"));
        assert_eq!(a.confidence, 1.0);
        let missing = query_material(&bundle(), &MaterialSource::Fixture(&store), &lib, "3", 9).unwrap();
        assert_eq!(missing.status, AnnotationStatus::NoAnswer);
    }

    #[test]
    fn fixture_syntax_errors() {
        let mut store = FixtureStore::default();
        assert!(store.insert_text("v", "x steel", Path::new("v.txt")).is_err());
        assert!(store.insert_text("v", "1 steel 1.5", Path::new("v.txt")).is_err());
        assert!(store.insert_text("v", "1 steel\n1 pine", Path::new("v.txt")).is_err());
    }

    #[test]
    fn live_parse_and_resolve() {
        let lib = MaterialLibrary::seed();
        let t = Scripted::new(&["A leg.\n```\nmaterial: steel; density: 7850; youngs_modulus: 2e11; poisson: 0.3\n```"]);
        let src = MaterialSource::Live {
            transport: &t,
            retry_max: 2,
        };
        let a = query_material(&bundle(), &src, &lib, "v", 1).unwrap();
        assert_eq!(a.material_id.as_deref(), Some("steel"));
        assert_eq!(a.properties_quoted, Some((7850.0, 2e11, 0.3)));
    }

    #[test]
    fn unknown_material_is_flagged() {
        let lib = MaterialLibrary::seed();
        let t = Scripted::new(&["```\nmaterial: shiny stuff; density: 1; youngs_modulus: 1; poisson: 0.1\n```"]);
        let src = MaterialSource::Live {
            transport: &t,
            retry_max: 2,
        };
        let a = query_material(&bundle(), &src, &lib, "v", 1).unwrap();
        assert_eq!(a.status, AnnotationStatus::NotFound);
        assert_eq!(a.material_id, None);
    }

    #[test]
    fn repairs_then_gives_up() {
        let lib = MaterialLibrary::seed();
        let t = Scripted::new(&["no block", "still none", "nope"]);
        let src = MaterialSource::Live {
            transport: &t,
            retry_max: 2,
        };
        let a = query_material(&bundle(), &src, &lib, "v", 1).unwrap();
        assert_eq!(a.status, AnnotationStatus::NoAnswer);
        // Each retry appends the failed reply and a repair instruction.
        assert_eq!(*t.seen.lock().unwrap(), vec![2, 4, 6]);

        let t = Scripted::new(&["no block", "```\nmaterial: oak; density: 1; youngs_modulus: 1; poisson: 0.1\n```"]);
        let src = MaterialSource::Live {
            transport: &t,
            retry_max: 2,
        };
        let a = query_material(&bundle(), &src, &lib, "v", 1).unwrap();
        assert_eq!(a.material_id.as_deref(), Some("oak"));
        assert_eq!(a.confidence, 0.5);
    }
}
