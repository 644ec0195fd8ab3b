//! Deterministic backends for tests and offline runs.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenize::tokenize;
use super::{
    Backend, BackendExchange, GatewayError, Request, Response, TokenLogprob,
    DEFAULT_EMBEDDING_DIM,
};
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingSpec {
    Vector(Vec<f64>),
    /// `"hash"`: derive the vector from the text.
    Mode(String),
}

/// One scripted answer. `match` is `*`, `sha256:<hex>` of the request's match
/// text, or a substring of it. Exactly one of `reply`, `logprobs`, `embedding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    /// One value (applied to every token) or one value per token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingSpec>,
}

impl MockRule {
    pub fn reply(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: Some(reply.into()),
            finish_reason: None,
            logprobs: None,
            embedding: None,
        }
    }

    pub fn logprobs(pattern: impl Into<String>, table: Vec<f64>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: None,
            finish_reason: None,
            logprobs: Some(table),
            embedding: None,
        }
    }

    pub fn hash_embedding(pattern: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            reply: None,
            finish_reason: None,
            logprobs: None,
            embedding: Some(EmbeddingSpec::Mode("hash".into())),
        }
    }

    fn answers(&self, request: &Request) -> bool {
        match request {
            Request::Chat { .. } => self.reply.is_some(),
            Request::Score { .. } => self.logprobs.is_some(),
            Request::Embed { .. } => self.embedding.is_some(),
        }
    }

    fn matches(&self, text: &str) -> bool {
        if self.pattern == "*" {
            return true;
        }
        if let Some(h) = self.pattern.strip_prefix("sha256:") {
            return sha256_hex(text).eq_ignore_ascii_case(h.trim());
        }
        text.contains(&self.pattern)
    }

    fn validate(&self, index: usize) -> Result<(), GatewayError> {
        let kinds = [
            self.reply.is_some(),
            self.logprobs.is_some(),
            self.embedding.is_some(),
        ]
        .iter()
        .filter(|k| **k)
        .count();
        if kinds != 1 {
            return Err(GatewayError::Config(format!(
                "mock rule {index} ({:?}) needs exactly one of reply/logprobs/embedding",
                self.pattern
            )));
        }
        if let Some(table) = &self.logprobs {
            if table.is_empty() || table.iter().any(|v| v.is_nan() || *v > 0.0) {
                return Err(GatewayError::Config(format!(
                    "mock rule {index}: logprobs must be non-empty and <= 0"
                )));
            }
        }
        if let Some(EmbeddingSpec::Mode(m)) = &self.embedding {
            if m != "hash" {
                return Err(GatewayError::Config(format!(
                    "mock rule {index}: unknown embedding mode {m:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Scripted backend: first matching rule wins, unmatched requests fail loudly.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    rules: Vec<MockRule>,
    dim: usize,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        for (i, r) in rules.iter().enumerate() {
            r.validate(i)?;
        }
        Ok(Self {
            id: "mock".into(),
            rules,
            dim: DEFAULT_EMBEDDING_DIM,
        })
    }

    pub fn from_yaml_str(script: &str) -> Result<Self, GatewayError> {
        let rules: Vec<MockRule> = serde_yaml::from_str(script)
            .map_err(|e| GatewayError::Config(format!("mock script: {e}")))?;
        Self::new(rules)
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut mock = Self::from_yaml_str(&text)?;
        mock.id = format!("mock:{}", path.display());
        Ok(mock)
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn embedding_dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn execute(&self, request: &Request) -> Result<Response, GatewayError> {
        let text = request.match_text();
        let rule = self
            .rules
            .iter()
            .find(|r| r.answers(request) && r.matches(&text))
            .ok_or_else(|| GatewayError::NoScriptMatch {
                kind: request.kind().into(),
                preview: text.chars().take(160).collect(),
            })?;
        match request {
            Request::Chat { .. } => Ok(Response::Completion {
                text: rule.reply.clone().unwrap_or_default(),
                finish_reason: rule.finish_reason.clone().unwrap_or_else(|| "stop".into()),
            }),
            Request::Score { text } => {
                let table = rule.logprobs.as_deref().unwrap_or_default();
                let pieces = tokenize(text);
                let values: Vec<f64> = if table.len() == 1 {
                    vec![table[0]; pieces.len()]
                } else if table.len() == pieces.len() {
                    table.to_vec()
                } else {
                    return Err(GatewayError::InvalidRequest(format!(
                        "logprob table has {} entries but text has {} tokens",
                        table.len(),
                        pieces.len()
                    )));
                };
                Ok(Response::Logprobs {
                    tokens: pieces
                        .into_iter()
                        .zip(values)
                        .map(|(t, logprob)| TokenLogprob {
                            token_text: t.to_string(),
                            logprob,
                        })
                        .collect(),
                })
            }
            Request::Embed { text } => {
                let vector = match rule.embedding.as_ref().expect("checked by answers") {
                    EmbeddingSpec::Vector(v) => {
                        if v.len() != self.dim {
                            return Err(GatewayError::Config(format!(
                                "scripted embedding has {} dims, backend is {}",
                                v.len(),
                                self.dim
                            )));
                        }
                        v.clone()
                    }
                    EmbeddingSpec::Mode(_) => hash_embedding(text, self.dim),
                };
                Ok(Response::Embedding { vector })
            }
        }
    }
}

/// Unit-norm vector derived from SHA-256 of the text; identical text gives identical vectors.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut block = 0u64;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(block.to_le_bytes());
        h.update(text.as_bytes());
        for chunk in h.finalize().chunks(2) {
            if out.len() == dim {
                break;
            }
            let v = u16::from_le_bytes([chunk[0], chunk[1]]) as f64 / u16::MAX as f64;
            out.push(2.0 * v - 1.0);
        }
        block += 1;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

type Responder = dyn Fn(&Request) -> Result<Response, GatewayError> + Send + Sync;

/// Backend computed by a closure; handy for rule-based mocks that read the prompt.
pub struct FnBackend {
    id: String,
    dim: Option<usize>,
    responder: Box<Responder>,
}

impl FnBackend {
    pub fn new(
        id: impl Into<String>,
        responder: impl Fn(&Request) -> Result<Response, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            dim: None,
            responder: Box::new(responder),
        }
    }

    /// Chat-only backend answering from the concatenated prompt text.
    pub fn chat(
        id: impl Into<String>,
        reply: impl Fn(&str) -> String + Send + Sync + 'static,
    ) -> Self {
        Self::new(id, move |req| match req {
            Request::Chat { .. } => Ok(Response::Completion {
                text: reply(&req.match_text()),
                finish_reason: "stop".into(),
            }),
            other => Err(GatewayError::Capability {
                backend: "fn".into(),
                capability: other.kind().into(),
                hint: "use a mock script for scoring/embedding".into(),
            }),
        })
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }
}

impl Backend for FnBackend {
    fn id(&self) -> String {
        self.id.clone()
    }
    fn execute(&self, request: &Request) -> Result<Response, GatewayError> {
        (self.responder)(request)
    }
    fn embedding_dim(&self) -> Option<usize> {
        self.dim
    }
}

/// Answers from a recorded exchange log, keyed by request hash.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    id: String,
    answers: HashMap<String, Response>,
}

impl ReplayBackend {
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = BackendExchange>) -> Self {
        let mut answers = HashMap::new();
        for ex in exchanges {
            answers.entry(ex.request_hash).or_insert(ex.response);
        }
        Self {
            id: "replay".into(),
            answers,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let exchanges: Vec<BackendExchange> = crate::util::read_jsonl(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut replay = Self::from_exchanges(exchanges);
        replay.id = format!("replay:{}", path.display());
        Ok(replay)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        self.id.clone()
    }
    fn execute(&self, request: &Request) -> Result<Response, GatewayError> {
        self.answers
            .get(&request.hash())
            .cloned()
            .ok_or_else(|| GatewayError::NoScriptMatch {
                kind: request.kind().into(),
                preview: request.match_text().chars().take(160).collect(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{prompt_hash, ChatMessage, GenParams, Gateway};

    #[test]
    fn hash_rule_maps_prompt_to_reply() {
        let msgs = [ChatMessage::user("analyze this week")];
        let script = format!(
            "- match: \"sha256:{}\"\n  reply: \"Outcome: 1\"\n",
            prompt_hash(&msgs)
        );
        let g = Gateway::new(MockBackend::from_yaml_str(&script).unwrap());
        assert_eq!(g.chat(&msgs, &GenParams::default()).unwrap().text, "Outcome: 1");
    }

    #[test]
    fn first_match_wins_and_unmatched_fails() {
        let g = Gateway::new(
            MockBackend::new(vec![
                MockRule::reply("week", "first"),
                MockRule::reply("week", "second"),
            ])
            .unwrap(),
        );
        let out = g
            .chat(&[ChatMessage::user("this week")], &GenParams::default())
            .unwrap();
        assert_eq!(out.text, "first");
        let err = g
            .chat(&[ChatMessage::user("nothing")], &GenParams::default())
            .unwrap_err();
        assert_eq!(err.kind(), "no_script_match");
    }

    #[test]
    fn uniform_logprob_table() {
        let g = Gateway::new(
            MockBackend::new(vec![MockRule::logprobs("*", vec![0.5f64.ln()])]).unwrap(),
        );
        let toks = g.score_logprobs("one two three four").unwrap();
        assert_eq!(toks.len(), 4);
        assert!(toks.iter().all(|t| t.logprob == 0.5f64.ln()));
        assert_eq!(
            toks.iter().map(|t| t.token_text.as_str()).collect::<String>(),
            "one two three four"
        );
    }

    #[test]
    fn per_token_table_and_mismatch() {
        let g = Gateway::new(
            MockBackend::new(vec![MockRule::logprobs("*", vec![-1.0, -2.0, -3.0])]).unwrap(),
        );
        let toks = g.score_logprobs("a b c").unwrap();
        assert_eq!(
            toks.iter().map(|t| t.logprob).collect::<Vec<_>>(),
            vec![-1.0, -2.0, -3.0]
        );
        assert!(g.score_logprobs("a b").is_err());
        assert!(g.score_logprobs("").unwrap().is_empty());
    }

    #[test]
    fn hash_embeddings_are_deterministic_and_distinct() {
        let g = Gateway::new(MockBackend::new(vec![MockRule::hash_embedding("*")]).unwrap());
        let a = g.embed("first text").unwrap();
        let b = g.embed("first text").unwrap();
        let c = g.embed("second text").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 384);
        assert_eq!(g.embedding_dim(), Some(384));
    }

    #[test]
    fn script_validation() {
        assert!(MockBackend::from_yaml_str("- match: x\n").is_err());
        assert!(MockBackend::from_yaml_str("- match: x\n  reply: a\n  logprobs: [-1]\n").is_err());
        assert!(MockBackend::from_yaml_str("- match: x\n  logprobs: [0.5]\n").is_err());
        assert!(MockBackend::from_yaml_str("- match: x\n  embedding: fancy\n").is_err());
        let m = MockBackend::from_yaml_str(
            "- match: x\n  reply: a\n- match: y\n  embedding: [0.0, 1.0]\n",
        )
        .unwrap()
        .with_dim(2);
        assert_eq!(m.rules().len(), 2);
    }

    #[test]
    fn replay_reproduces_answers() {
        let tmp = tempfile::tempdir().unwrap();
        let log = tmp.path().join("ex.jsonl");
        let msgs = [ChatMessage::user("hello there")];
        {
            let g = Gateway::new(MockBackend::new(vec![MockRule::reply("*", "hi")]).unwrap())
                .with_exchange_log(&log)
                .unwrap();
            g.chat(&msgs, &GenParams::default()).unwrap();
        }
        let g = Gateway::new(ReplayBackend::from_path(&log).unwrap());
        assert_eq!(g.chat(&msgs, &GenParams::default()).unwrap().text, "hi");
        assert!(g
            .chat(&[ChatMessage::user("other")], &GenParams::default())
            .is_err());
    }
}
