//! Chat-completions-compatible HTTP backend.
//!
//! Chat goes to `POST {base}/v1/chat/completions`, embeddings to
//! `POST {base}/v1/embeddings`, and scoring uses the legacy completions
//! endpoint in echo mode (`max_tokens: 0, echo: true, logprobs: 0`).

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, GatewayError, Request, Response, TokenLogprob};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub embedding_model: Option<String>,
    pub embedding_dim: Option<usize>,
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    learned_dim: OnceLock<usize>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            learned_dim: OnceLock::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/{path}")
    }

    fn post(&self, path: &str, body: &Value) -> Result<(u16, String), GatewayError> {
        let mut req = self
            .agent
            .post(&self.url(path))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(map_transport)?;
        Ok((status, text))
    }

    fn post_ok(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let (status, text) = self.post(path, body)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedResponse {
            message: e.to_string(),
            body: text,
        })
    }

    fn chat(&self, request: &Request) -> Result<Response, GatewayError> {
        let Request::Chat { messages, params } = request else {
            unreachable!()
        };
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        if let Some(stop) = &params.stop {
            body["stop"] = json!(stop);
        }
        let value = self.post_ok("chat/completions", &body)?;
        let choice = &value["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| malformed("missing choices[0].message.content", &value))?;
        let finish_reason = choice["finish_reason"].as_str().unwrap_or("unknown");
        Ok(Response::Completion {
            text: text.to_string(),
            finish_reason: finish_reason.to_string(),
        })
    }

    fn score(&self, text: &str) -> Result<Response, GatewayError> {
        let body = json!({
            "model": self.config.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let (status, raw) = self.post("completions", &body)?;
        if matches!(status, 400 | 404 | 405 | 501) {
            return Err(self.no_logprobs(&format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http { status, body: raw });
        }
        let value: Value = serde_json::from_str(&raw).map_err(|e| GatewayError::MalformedResponse {
            message: e.to_string(),
            body: raw.clone(),
        })?;
        let lp = &value["choices"][0]["logprobs"];
        let (Some(tokens), Some(values)) = (lp["tokens"].as_array(), lp["token_logprobs"].as_array())
        else {
            return Err(self.no_logprobs("response carries no token logprobs"));
        };
        // The first echoed token has no conditional probability and is dropped.
        let tokens = tokens
            .iter()
            .zip(values)
            .filter_map(|(t, v)| {
                Some(TokenLogprob {
                    token_text: t.as_str()?.to_string(),
                    logprob: v.as_f64()?,
                })
            })
            .collect();
        Ok(Response::Logprobs { tokens })
    }

    fn embed(&self, text: &str) -> Result<Response, GatewayError> {
        let model = self
            .config
            .embedding_model
            .clone()
            .unwrap_or_else(|| self.config.model.clone());
        let body = json!({ "model": model, "input": text });
        let (status, raw) = self.post("embeddings", &body)?;
        if matches!(status, 404 | 405 | 501) {
            return Err(GatewayError::Capability {
                backend: self.id(),
                capability: "embeddings".into(),
                hint: "configure an embedding-capable endpoint or use a mock script".into(),
            });
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http { status, body: raw });
        }
        let value: Value = serde_json::from_str(&raw).map_err(|e| GatewayError::MalformedResponse {
            message: e.to_string(),
            body: raw.clone(),
        })?;
        let vector: Vec<f64> = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| malformed("missing data[0].embedding", &value))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| malformed("non-numeric embedding", &value)))
            .collect::<Result<_, _>>()?;
        let expected = self
            .config
            .embedding_dim
            .unwrap_or_else(|| *self.learned_dim.get_or_init(|| vector.len()));
        if vector.len() != expected {
            return Err(GatewayError::MalformedResponse {
                message: format!("embedding dimension changed from {expected} to {}", vector.len()),
                body: String::new(),
            });
        }
        Ok(Response::Embedding { vector })
    }

    fn no_logprobs(&self, why: &str) -> GatewayError {
        GatewayError::Capability {
            backend: self.id(),
            capability: "token logprobs".into(),
            hint: format!("{why}; use a mock script with logprob tables or a scoring-capable server"),
        }
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.config.base_url, self.config.model)
    }

    fn embedding_dim(&self) -> Option<usize> {
        self.config
            .embedding_dim
            .or_else(|| self.learned_dim.get().copied())
    }

    fn execute(&self, request: &Request) -> Result<Response, GatewayError> {
        match request {
            Request::Chat { .. } => self.chat(request),
            Request::Score { text } => self.score(text),
            Request::Embed { text } => self.embed(text),
        }
    }
}

fn malformed(message: &str, body: &Value) -> GatewayError {
    GatewayError::MalformedResponse {
        message: message.to_string(),
        body: body.to_string(),
    }
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(t) => GatewayError::Timeout {
            message: t.to_string(),
            attempts: 1,
        },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout {
            message: io.to_string(),
            attempts: 1,
        },
        other => GatewayError::Transport {
            message: other.to_string(),
            attempts: 1,
        },
    }
}
