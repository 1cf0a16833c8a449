use super::{CompletionBackend, ProviderError, ProviderHandle, RawResponse};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// An attempt's error and the delay the server asked for, if any.
type Failure = (ProviderError, Option<Duration>);

const BASE_BACKOFF: Duration = Duration::from_millis(500);
const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    n: usize,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Spaces request starts at least `interval` apart across threads.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn per_minute(rpm: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / rpm),
            next_slot: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpChatProvider {
    label: String,
    endpoint: String,
    model: String,
    temperature: f64,
    max_retries: u32,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl std::fmt::Debug for HttpChatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatProvider")
            .field("label", &self.label)
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatProvider {
    pub fn new(handle: &ProviderHandle) -> Result<Self, ProviderError> {
        let api_key = match &handle.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ProviderError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(handle.request_timeout_s))
            .build()
            .map_err(|e| ProviderError::Config(format!("{}: {e}", handle.label)))?;
        Ok(HttpChatProvider {
            label: handle.label.clone(),
            endpoint: handle.endpoint.clone().unwrap_or_default(),
            model: handle.model_name.clone().unwrap_or_default(),
            temperature: handle.temperature,
            max_retries: handle.max_retries,
            api_key,
            client,
            limiter: RateLimiter::per_minute(handle.rate_limit_rpm),
        })
    }

    fn scrub(&self, text: &str) -> String {
        let mut s: String = text.chars().take(300).collect();
        if let Some(key) = self.api_key.as_deref().filter(|k| !k.is_empty()) {
            s = s.replace(key, "<redacted>");
        }
        s
    }

    fn attempt(&self, prompt: &str, n: usize) -> Result<(Vec<RawResponse>, Option<Duration>), Failure> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            n,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                ProviderError::Transport {
                    label: self.label.clone(),
                    message: self.scrub(&e.to_string()),
                },
                None,
            )
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        let text = resp.text().map_err(|e| {
            (
                ProviderError::Transport {
                    label: self.label.clone(),
                    message: self.scrub(&e.to_string()),
                },
                None,
            )
        })?;
        if !(200..300).contains(&status) {
            return Err((
                ProviderError::Http {
                    label: self.label.clone(),
                    status,
                    body: self.scrub(&text),
                },
                retry_after,
            ));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            (
                ProviderError::Malformed {
                    label: self.label.clone(),
                    message: e.to_string(),
                },
                None,
            )
        })?;
        let responses = parsed
            .choices
            .into_iter()
            .enumerate()
            .filter_map(|(pos, c)| {
                c.message.content.map(|text| RawResponse {
                    sample_index: c.index.unwrap_or(pos),
                    text,
                })
            })
            .collect();
        Ok((responses, None))
    }
}

/// Exponential backoff with full jitter, capped.
pub(crate) fn backoff_delay(attempt: u32, rng: &mut impl Rng) -> Duration {
    let exp = BASE_BACKOFF.saturating_mul(1u32 << attempt.min(16)).min(MAX_BACKOFF);
    exp.mul_f64(rng.random_range(0.5..=1.0))
}

impl CompletionBackend for HttpChatProvider {
    fn label(&self) -> &str {
        &self.label
    }

    fn complete(&self, _task_id: &str, prompt: &str, n: usize) -> Result<Vec<RawResponse>, ProviderError> {
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            match self.attempt(prompt, n) {
                Ok((responses, _)) => return Ok(responses),
                Err((err, retry_after)) => {
                    if !err.is_retryable() || attempt >= self.max_retries {
                        return Err(err);
                    }
                    let delay = backoff_delay(attempt, &mut rand::rng()).max(retry_after.unwrap_or_default());
                    log::debug!("{}: retrying after {:?} ({err})", self.label, delay);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
