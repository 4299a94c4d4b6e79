//! OpenAI-compatible chat-completion and embedding backends.

use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{CompletionBackend, Embedding, EmbeddingBackend, GatewayError};

fn build_client(timeout: Duration) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::Config(e.to_string()))
}

fn read_api_key(env_var: &str) -> Option<String> {
    std::env::var(env_var).ok().filter(|k| !k.is_empty())
}

fn post_json(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, GatewayError> {
    let mut request = client.post(url).json(body);
    if let Some(key) = api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().map_err(|e| {
        if e.is_timeout() {
            GatewayError::Timeout
        } else {
            GatewayError::Transport(e.to_string())
        }
    })?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| GatewayError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(GatewayError::Http {
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string()))
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path)
}

/// `POST {base_url}/chat/completions` with a single user message and
/// temperature 0 (greedy decoding).
pub struct HttpCompletion {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpCompletion {
    pub fn new(base_url: &str, model: &str, api_key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: build_client(timeout)?,
            url: endpoint(base_url, "chat/completions"),
            model: model.to_owned(),
            api_key: read_api_key(api_key_env),
        })
    }
}

impl CompletionBackend for HttpCompletion {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let value = post_json(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::Decode("missing choices[0].message.content".into()))
    }
}

/// `POST {base_url}/embeddings`.
pub struct HttpEmbedding {
    client: Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEmbedding {
    pub fn new(base_url: &str, model: &str, api_key_env: &str, timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: build_client(timeout)?,
            url: endpoint(base_url, "embeddings"),
            model: model.to_owned(),
            api_key: read_api_key(api_key_env),
        })
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn embed(&self, text: &str) -> Result<Embedding, GatewayError> {
        let body = json!({"model": self.model, "input": text});
        let value = post_json(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        let data = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Decode("missing data[0].embedding".into()))?;
        data.iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| GatewayError::Decode("non-numeric embedding component".into()))
            })
            .collect()
    }
}
