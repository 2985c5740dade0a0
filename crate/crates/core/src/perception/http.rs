//! Blocking JSON-over-HTTP with retry, backoff and client-side rate limiting.

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PerceptionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Attempts after the first for transport failures, 5xx and 429.
    pub max_retries: u32,
    /// First backoff delay; doubles per attempt.
    pub backoff_ms: u64,
    /// Upper bound on any single wait, including server-requested ones.
    pub max_wait_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            backoff_ms: 500,
            max_wait_ms: 60_000,
        }
    }
}

/// Token bucket shared by all requests to one endpoint.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `rate` tokens per second, holding at most `burst`. A non-positive or
    /// non-finite rate disables limiting.
    pub fn new(rate: f64, burst: u32) -> Self {
        let burst = burst.max(1) as f64;
        Self {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(0.0, 1)
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap();
                let now = Instant::now();
                st.0 = (st.0 + now.duration_since(st.1).as_secs_f64() * self.rate).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

pub fn png_data_url(img: &RgbImage) -> Result<String, PerceptionError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    ))
}

pub fn png_base64(img: &RgbImage) -> Result<String, PerceptionError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// A JSON endpoint with bearer auth, retries and an optional on-disk cache of
/// successful responses keyed by the SHA-256 of the request body.
pub struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    retry: RetryPolicy,
    limiter: TokenBucket,
    cache_dir: Option<PathBuf>,
}

impl JsonEndpoint {
    pub fn new(
        url: impl Into<String>,
        token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        limiter: TokenBucket,
        cache_dir: Option<PathBuf>,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            url: url.into(),
            token,
            retry,
            limiter,
            cache_dir,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body` and returns the raw response text of the first 2xx reply.
    pub fn post(&self, body: &serde_json::Value) -> Result<String, PerceptionError> {
        let payload = serde_json::to_string(body).expect("JSON value serializes");
        let cache_path = self.cache_dir.as_ref().map(|d| {
            let key = hex::encode(Sha256::digest(format!("{}\n{}", self.url, payload).as_bytes()));
            d.join(format!("{key}.json"))
        });
        if let Some(p) = &cache_path {
            if let Ok(text) = std::fs::read_to_string(p) {
                log::debug!("cache hit {}", p.display());
                return Ok(text);
            }
        }

        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
            if let Some(t) = &self.token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            let backoff = Duration::from_millis(
                self.retry
                    .backoff_ms
                    .saturating_mul(1u64 << attempt.min(20))
                    .min(self.retry.max_wait_ms),
            );
            let wait = match req.send(payload.as_bytes()) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let retry_after = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok());
                    let text = resp
                        .body_mut()
                        .with_config()
                        .limit(256 * 1024 * 1024)
                        .read_to_string()
                        .map_err(|e| PerceptionError::Transport(e.to_string()))?;
                    match status {
                        200..=299 => {
                            if let Some(p) = &cache_path {
                                if let Some(dir) = p.parent() {
                                    let _ = std::fs::create_dir_all(dir);
                                }
                                let _ = std::fs::write(p, &text);
                            }
                            return Ok(text);
                        }
                        401 | 403 => return Err(PerceptionError::Auth { status }),
                        429 => {
                            if attempt >= self.retry.max_retries {
                                return Err(PerceptionError::RateLimited);
                            }
                            retry_after
                                .map(|s| Duration::from_secs_f64(s.max(0.0)).min(Duration::from_millis(self.retry.max_wait_ms)))
                                .unwrap_or(backoff)
                        }
                        500..=599 if attempt < self.retry.max_retries => backoff,
                        _ => return Err(PerceptionError::Http { status, body: truncate(&text) }),
                    }
                }
                Err(e) => {
                    if attempt >= self.retry.max_retries {
                        return Err(PerceptionError::Transport(e.to_string()));
                    }
                    log::warn!("{}: {e}; retrying in {backoff:?}", self.url);
                    backoff
                }
            };
            attempt += 1;
            std::thread::sleep(wait);
        }
    }
}

fn truncate(s: &str) -> String {
    let mut end = s.len().min(512);
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_spaces_requests() {
        let b = TokenBucket::new(50.0, 1);
        let t = Instant::now();
        for _ in 0..4 {
            b.acquire();
        }
        // First token is free, the next three wait ~20 ms each.
        assert!(t.elapsed() >= Duration::from_millis(55));
    }

    #[test]
    fn unlimited_bucket_never_waits() {
        let b = TokenBucket::unlimited();
        let t = Instant::now();
        for _ in 0..1000 {
            b.acquire();
        }
        assert!(t.elapsed() < Duration::from_millis(50));
    }
}
