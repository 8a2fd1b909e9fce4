use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatMessage, ScoreBackend, ScoreRequest, TokenLogProbs};
use crate::error::{PirError, Result};

/// HTTP scoring backend speaking the native wire protocol:
/// POST {model, context, continuation} -> {tokens[], logprobs[]}.
/// See the README for fronting a completions-style API with this shape.
pub struct HttpScoreBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    model: &'a str,
    context: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct ScoreReply {
    tokens: Option<Vec<String>>,
    logprobs: Option<Vec<f64>>,
}

impl HttpScoreBackend {
    pub fn new(endpoint: String, model: String) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| PirError::Config(format!("http client: {e}")))?;
        Ok(Self { client, endpoint, model })
    }
}

impl ScoreBackend for HttpScoreBackend {
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogProbs> {
        let body = ScoreBody {
            model: &self.model,
            context: &req.context,
            continuation: &req.continuation,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| PirError::Backend(format!("score request: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(PirError::Backend(format!("score server returned {status}")));
        }
        if !status.is_success() {
            return Err(PirError::Protocol(format!("score server returned {status}")));
        }
        let reply: ScoreReply = resp
            .json()
            .map_err(|e| PirError::Protocol(format!("score response body: {e}")))?;
        match (reply.tokens, reply.logprobs) {
            (Some(tokens), Some(logprobs)) => Ok(TokenLogProbs { tokens, logprobs }),
            _ => Err(PirError::Protocol("score response missing tokens or logprobs".into())),
        }
    }

    fn identity(&self) -> String {
        format!("http:{}:{}", self.endpoint, self.model)
    }
}

/// HTTP chat backend: POST {model, messages[], temperature: 0} ->
/// {content}. Temperature is pinned to 0 for reproducibility.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl HttpChatBackend {
    pub fn new(endpoint: String, model: String) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| PirError::Config(format!("http client: {e}")))?;
        Ok(Self { client, endpoint, model })
    }
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = ChatBody { model: &self.model, messages, temperature: 0.0 };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| PirError::Backend(format!("chat request: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(PirError::Backend(format!("chat server returned {status}")));
        }
        if !status.is_success() {
            return Err(PirError::Protocol(format!("chat server returned {status}")));
        }
        let reply: ChatReply = resp
            .json()
            .map_err(|e| PirError::Protocol(format!("chat response body: {e}")))?;
        reply
            .content
            .ok_or_else(|| PirError::Protocol("chat response missing content".into()))
    }
}
