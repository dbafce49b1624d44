//! Narrow interfaces to the external model services (chat completion, image
//! generation, structured extraction), the retry policy wrapped around them,
//! and deterministic mocks.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{sanitize, ExtractedFields, ExtractionBackend, ExtractionError, Turn};
use crate::memory::Emotion;
use crate::text::fnv1a64;

pub const CHAT_KEY_ENV: &str = "PERSODE_CHAT_KEY";
pub const IMAGE_KEY_ENV: &str = "PERSODE_IMAGE_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Timeout or transport failure; worth retrying.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    /// Malformed upstream response.
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("content policy rejection: {0}")]
    Policy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable(_))
    }
}

/// A credential value. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

/// Names the environment variable a credential is read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretRef {
    pub env_var: String,
}

impl SecretRef {
    pub fn env(var: impl Into<String>) -> Self {
        Self { env_var: var.into() }
    }

    pub fn resolve(&self) -> Option<Secret> {
        std::env::var(&self.env_var).ok().filter(|v| !v.is_empty()).map(Secret)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub credential: SecretRef,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_concurrency: usize,
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, credential: SecretRef) -> Self {
        Self {
            endpoint: endpoint.into(),
            credential,
            timeout: Duration::from_secs(30),
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
            max_concurrency: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout.is_zero() {
            return Err(ProviderError::InvalidArgument("timeout must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(ProviderError::InvalidArgument("max_concurrency must be positive".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: self.backoff_base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            backoff_base: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << attempt.min(20))
    }

    /// Sum of all delays if every retry is used.
    pub fn total_backoff(&self) -> Duration {
        (0..self.max_retries).map(|a| self.backoff(a)).sum()
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    slept: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, duration: Duration) {
        self.slept.lock().unwrap().push(duration);
    }
}

/// Runs `op`, retrying retryable failures with exponential backoff.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut op: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < policy.max_retries => {
                log::debug!("provider call failed (attempt {}), retrying: {e}", attempt + 1);
                sleeper.sleep(policy.backoff(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatTask {
    #[default]
    Reply,
    Diary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalledMemory {
    pub event_summary: String,
    pub top_emotion: Option<String>,
    pub age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub task: ChatTask,
    pub style_fragments: Vec<String>,
    pub retrieved_memories: Vec<RecalledMemory>,
    pub dialogue_window: Vec<Turn>,
    pub user_message: String,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait ImageProvider: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Raw prompt-in, text-out completion used for structured extraction.
pub trait CompletionBackend: Send + Sync {
    fn complete_raw(&self, prompt: &str) -> Result<String, ProviderError>;
}

pub fn chat_complete(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<String, ProviderError> {
    if request.user_message.trim().is_empty() {
        return Err(ProviderError::InvalidArgument("user_message must be non-empty".into()));
    }
    let reply = with_retry(policy, sleeper, || provider.complete(request))?;
    if reply.trim().is_empty() {
        return Err(ProviderError::Protocol("empty completion body".into()));
    }
    Ok(reply)
}

pub fn generate_image(
    provider: &dyn ImageProvider,
    prompt: &str,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<String, ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::InvalidArgument("prompt must be non-empty".into()));
    }
    let reference = with_retry(policy, sleeper, || provider.generate(prompt))?;
    if reference.trim().is_empty() {
        return Err(ProviderError::Protocol("empty image reference".into()));
    }
    Ok(reference)
}

/// Schema the extraction model must answer with.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractionReply {
    #[serde(default)]
    event_summary: Option<String>,
    emotions: Vec<ReplyEmotion>,
    people: Vec<String>,
    objects: Vec<String>,
    places: Vec<String>,
    hashtags: Vec<String>,
    salience: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplyEmotion {
    label: String,
    intensity: f64,
}

const EXTRACTION_INSTRUCTIONS: &str = "Extract the episodic event described in the user's journal text below. \
Reply with a single JSON object and nothing else, with exactly these keys: \
\"event_summary\" (one sentence), \"emotions\" (array of {\"label\", \"intensity\" in [0,1]}), \
\"people\", \"objects\", \"places\" (arrays of short strings), \
\"hashtags\" (up to 8 CamelCase tags starting with '#'), \"salience\" (number in [0,1]).";

fn extraction_prompt(text: &str) -> String {
    format!(
        "{EXTRACTION_INSTRUCTIONS}\n<<<{}>>>",
        crate::templater::escape_user_text(text)
    )
}

fn parse_extraction(raw: &str) -> Result<ExtractedFields, String> {
    let trimmed = raw
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim();
    let reply: ExtractionReply = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
    Ok(ExtractedFields {
        event_summary: reply.event_summary,
        emotions: reply
            .emotions
            .into_iter()
            .map(|e| Emotion::new(e.label, e.intensity))
            .collect(),
        people: reply.people,
        objects: reply.objects,
        places: reply.places,
        hashtags: reply.hashtags,
        salience: reply.salience,
    })
}

/// Model-backed extraction. A schema violation earns one reformulated retry;
/// a second violation yields [`ExtractionError::Fallback`].
pub fn llm_extract(
    backend: &dyn CompletionBackend,
    segment_text: &str,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<ExtractedFields, ExtractionError> {
    if segment_text.trim().is_empty() {
        return Err(ExtractionError::Fallback("empty segment text".into()));
    }
    let prompt = extraction_prompt(segment_text);
    let call = |p: &str| {
        with_retry(policy, sleeper, || backend.complete_raw(p))
            .map_err(|e| ExtractionError::Unavailable(e.to_string()))
    };
    let first = call(&prompt)?;
    let parsed = match parse_extraction(&first) {
        Ok(fields) => fields,
        Err(reason) => {
            log::warn!("extraction reply violated schema, reformulating: {reason}");
            let retry_prompt = format!(
                "{prompt}\nYour previous reply did not match the required JSON schema ({reason}). \
Reply again with only the JSON object."
            );
            parse_extraction(&call(&retry_prompt)?)
                .map_err(|reason| ExtractionError::Fallback(format!("schema violation after retry: {reason}")))?
        }
    };
    Ok(sanitize(parsed, segment_text))
}

/// [`ExtractionBackend`] over any completion backend.
pub struct LlmExtractor<B> {
    pub backend: B,
    pub policy: RetryPolicy,
    pub sleeper: Box<dyn Sleeper>,
}

impl<B: CompletionBackend> LlmExtractor<B> {
    pub fn new(backend: B, policy: RetryPolicy) -> Self {
        Self {
            backend,
            policy,
            sleeper: Box::new(ThreadSleeper),
        }
    }
}

impl<B: CompletionBackend> ExtractionBackend for LlmExtractor<B> {
    fn extract(&self, text: &str) -> Result<ExtractedFields, ExtractionError> {
        llm_extract(&self.backend, text, &self.policy, self.sleeper.as_ref())
    }
}

/// Caps in-flight calls to a provider.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.max {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        struct Release<'a>(&'a ConcurrencyLimit);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.in_flight.lock().unwrap() -= 1;
                self.0.freed.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}

/// Wraps a provider with a [`ConcurrencyLimit`].
pub struct Limited<P> {
    inner: P,
    limit: ConcurrencyLimit,
}

impl<P> Limited<P> {
    pub fn new(inner: P, max_concurrency: usize) -> Self {
        Self {
            inner,
            limit: ConcurrencyLimit::new(max_concurrency),
        }
    }
}

impl<P: ChatProvider> ChatProvider for Limited<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.limit.run(|| self.inner.complete(request))
    }
}

impl<P: ImageProvider> ImageProvider for Limited<P> {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        self.limit.run(|| self.inner.generate(prompt))
    }
}

impl<P: CompletionBackend> CompletionBackend for Limited<P> {
    fn complete_raw(&self, prompt: &str) -> Result<String, ProviderError> {
        self.limit.run(|| self.inner.complete_raw(prompt))
    }
}

/// Deterministic chat model. Replies echo the first recalled memory; diary
/// requests are stitched from the event lines of the prompt.
#[derive(Debug, Default)]
pub struct MockChat {
    failures_left: AtomicUsize,
}

impl MockChat {
    /// Fails with a retryable error for the first `n` calls.
    pub fn failing_first(n: usize) -> Self {
        Self {
            failures_left: AtomicUsize::new(n),
        }
    }
}

fn mock_diary(prompt: &str) -> String {
    let events: Vec<String> = prompt
        .lines()
        .filter_map(|l| l.strip_prefix("- <<<"))
        .filter_map(|l| l.split_once(">>>"))
        .map(|(summary, rest)| {
            let feeling = rest
                .split("top emotion: ")
                .nth(1)
                .map(|s| s.split([';', ')']).next().unwrap_or("").trim().to_string());
            match feeling {
                Some(f) if !f.is_empty() => format!("{} I felt a lot of {f}.", summary.trim()),
                _ => format!("{}.", summary.trim().trim_end_matches('.')),
            }
        })
        .collect();
    format!(
        "Dear diary, today was one to remember. {} Writing it down helps me see it more clearly.",
        events.join(" ")
    )
}

impl ChatProvider for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(ProviderError::Unavailable("mock transient failure".into()));
        }
        Ok(match request.task {
            ChatTask::Diary => mock_diary(&request.user_message),
            ChatTask::Reply => match request.retrieved_memories.first() {
                Some(m) => format!(
                    "That reminds me of when you told me about {} ({} days ago). How does this compare?",
                    m.event_summary,
                    m.age_days.floor()
                ),
                None => "Thank you for sharing that with me. How did it make you feel?".to_string(),
            },
        })
    }
}

/// Returns a fixed sequence of results, then repeats the last one.
#[derive(Debug)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<Result<String, ProviderError>>>,
}

impl ScriptedChat {
    pub fn new(replies: Vec<Result<String, ProviderError>>) -> Self {
        assert!(!replies.is_empty());
        Self {
            replies: Mutex::new(replies.into()),
        }
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, _request: &ChatRequest) -> Result<String, ProviderError> {
        let mut q = self.replies.lock().unwrap();
        if q.len() > 1 {
            q.pop_front().unwrap()
        } else {
            q.front().cloned().unwrap()
        }
    }
}

/// `"img-"` followed by the 16 hex digits of the prompt's FNV-1a hash.
pub fn mock_image_ref(prompt: &str) -> String {
    format!("img-{:016x}", fnv1a64(prompt.as_bytes()))
}

#[derive(Debug, Default, Clone)]
pub struct MockImage {
    /// Prompts containing this word are rejected as a policy violation.
    pub reject_containing: Option<String>,
    pub always_unavailable: bool,
}

impl ImageProvider for MockImage {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        if self.always_unavailable {
            return Err(ProviderError::Unavailable("mock image service down".into()));
        }
        if let Some(word) = &self.reject_containing {
            if prompt.contains(word.as_str()) {
                return Err(ProviderError::Policy(format!("prompt mentions `{word}`")));
            }
        }
        Ok(mock_image_ref(prompt))
    }
}

/// Raw completions from a fixed queue; the last one repeats.
#[derive(Debug)]
pub struct ScriptedCompletion {
    replies: Mutex<VecDeque<Result<String, ProviderError>>>,
    pub calls: AtomicUsize,
}

impl ScriptedCompletion {
    pub fn new(replies: Vec<Result<String, ProviderError>>) -> Self {
        assert!(!replies.is_empty());
        Self {
            replies: Mutex::new(replies.into()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn always(reply: &str) -> Self {
        Self::new(vec![Ok(reply.to_string())])
    }
}

impl CompletionBackend for ScriptedCompletion {
    fn complete_raw(&self, _prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut q = self.replies.lock().unwrap();
        if q.len() > 1 {
            q.pop_front().unwrap()
        } else {
            q.front().cloned().unwrap()
        }
    }
}
