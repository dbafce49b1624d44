//! Adapters for OpenAI-compatible chat and image endpoints.

use journal_core::analyzer::Speaker;
use journal_core::providers::{
    ChatProvider, ChatRequest, CompletionBackend, ImageProvider, ProviderConfig, ProviderError, Secret,
};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

const BODY_SNIPPET: usize = 200;

fn client(config: &ProviderConfig) -> Result<Client, ProviderError> {
    Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ProviderError::InvalidArgument(format!("http client: {e}")))
}

fn credential(config: &ProviderConfig) -> Result<Secret, ProviderError> {
    config.credential.resolve().ok_or_else(|| {
        ProviderError::InvalidArgument(format!("credential variable {} is not set", config.credential.env_var))
    })
}

fn snippet(body: &str) -> String {
    body.chars().take(BODY_SNIPPET).collect()
}

/// Posts `body` and maps transport and status failures onto [`ProviderError`].
fn post_json(client: &Client, config: &ProviderConfig, body: &Value) -> Result<Value, ProviderError> {
    let key = credential(config)?;
    let response = client
        .post(&config.endpoint)
        .bearer_auth(key.expose())
        .json(body)
        .send()
        .map_err(|e| ProviderError::Unavailable(e.without_url().to_string()))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| ProviderError::Unavailable(e.without_url().to_string()))?;
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        return Err(ProviderError::Unavailable(format!("status {status}: {}", snippet(&text))));
    }
    if !status.is_success() {
        let lowered = text.to_ascii_lowercase();
        if lowered.contains("content_policy") || lowered.contains("safety") {
            return Err(ProviderError::Policy(snippet(&text)));
        }
        return Err(ProviderError::Protocol(format!("status {status}: {}", snippet(&text))));
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Protocol(format!("invalid JSON body: {e}")))
}

fn message_content(reply: &Value) -> Result<String, ProviderError> {
    reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Protocol("reply has no choices[0].message.content".into()))
}

/// The message list sent for a chat request.
pub fn chat_messages(request: &ChatRequest) -> Vec<Value> {
    let mut system = request.style_fragments.join("\n");
    if !request.retrieved_memories.is_empty() {
        system.push_str("\nRelevant memories from earlier conversations:");
        for m in &request.retrieved_memories {
            let feeling = m.top_emotion.as_deref().unwrap_or("neutral");
            system.push_str(&format!(
                "\n- {} (felt {feeling}, {:.0} days ago)",
                m.event_summary, m.age_days
            ));
        }
    }
    let mut messages = vec![json!({"role": "system", "content": system})];
    for turn in &request.dialogue_window {
        let role = match turn.speaker {
            Speaker::User => "user",
            Speaker::Agent => "assistant",
        };
        messages.push(json!({"role": role, "content": turn.text}));
    }
    messages.push(json!({"role": "user", "content": request.user_message}));
    messages
}

pub struct HttpChat {
    config: ProviderConfig,
    model: String,
    client: Client,
}

impl HttpChat {
    pub fn new(config: ProviderConfig, model: impl Into<String>) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            client: client(&config)?,
            config,
            model: model.into(),
        })
    }
}

impl std::fmt::Debug for HttpChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChat")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl ChatProvider for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({"model": self.model, "messages": chat_messages(request)});
        message_content(&post_json(&self.client, &self.config, &body)?)
    }
}

impl CompletionBackend for HttpChat {
    fn complete_raw(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        message_content(&post_json(&self.client, &self.config, &body)?)
    }
}

pub struct HttpImage {
    config: ProviderConfig,
    model: String,
    client: Client,
}

impl HttpImage {
    pub fn new(config: ProviderConfig, model: impl Into<String>) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            client: client(&config)?,
            config,
            model: model.into(),
        })
    }
}

impl std::fmt::Debug for HttpImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpImage")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl ImageProvider for HttpImage {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({"model": self.model, "prompt": prompt, "n": 1, "size": "1024x1024"});
        let reply = post_json(&self.client, &self.config, &body)?;
        if let Some(url) = reply.pointer("/data/0/url").and_then(Value::as_str) {
            return Ok(url.to_string());
        }
        if let Some(b64) = reply.pointer("/data/0/b64_json").and_then(Value::as_str) {
            return Ok(format!("data:image/png;base64,{b64}"));
        }
        Err(ProviderError::Protocol("reply has no data[0].url".into()))
    }
}
