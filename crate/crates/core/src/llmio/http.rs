use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, ChatRequest, Embedder, LlmError};

const EXCERPT: usize = 200;

fn url(endpoint: &str, path: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    let base = base.strip_suffix("/v1").unwrap_or(base);
    format!("{base}/v1/{path}")
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, LlmError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| LlmError::Config(format!("http client: {e}")))
}

fn post(
    http: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, LlmError> {
    let mut rb = http.post(url).json(body);
    if let Some(k) = api_key {
        rb = rb.bearer_auth(k);
    }
    let resp = rb.send().map_err(|e| LlmError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| LlmError::Transport(e.to_string()))?;
    if !status.is_success() {
        let body: String = text.chars().take(EXCERPT).collect();
        return Err(LlmError::Status {
            status: status.as_u16(),
            body,
        });
    }
    serde_json::from_str(&text)
        .map_err(|e| LlmError::Protocol(format!("invalid JSON response: {e}")))
}

/// `POST /v1/chat/completions` backend.
pub struct HttpChat {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChat {
    pub fn new(endpoint: &str, api_key: Option<String>) -> Result<Self, LlmError> {
        Ok(HttpChat {
            endpoint: url(endpoint, "chat/completions"),
            api_key,
            http: client(Duration::from_secs(120))?,
        })
    }
}

impl Backend for HttpChat {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let body = serde_json::to_value(req).expect("request serializes");
        let v = post(&self.http, &self.endpoint, self.api_key.as_deref(), &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("response lacks choices[0].message.content".into()))
    }
}

/// `POST /v1/embeddings` client; vectors are L2-normalized on receipt.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, LlmError> {
        Ok(HttpEmbedder {
            endpoint: url(endpoint, "embeddings"),
            model: model.to_string(),
            api_key,
            http: client(Duration::from_secs(60))?,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let body = json!({ "model": self.model, "input": text });
        let v = post(&self.http, &self.endpoint, self.api_key.as_deref(), &body)?;
        let raw = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Protocol("response lacks data[0].embedding".into()))?;
        let mut out = raw
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| LlmError::Protocol("non-numeric embedding".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        super::embed::normalize(&mut out);
        Ok(out)
    }
}
