//! Stub and record/replay backends for exercising gateway clients
//! without a live model service.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{hex_encode, ChatBackend, ChatMessage, ScoreBackend, ScoreRequest, TokenLogProbs};
use crate::error::{PirError, Result};

/// Chat stub that plays a fixed list of replies in order; the last reply
/// repeats once the script runs out.
pub struct ScriptedChat {
    replies: Mutex<Vec<String>>,
    cursor: AtomicU64,
    calls: AtomicU64,
}

impl ScriptedChat {
    pub fn new(replies: Vec<String>) -> Self {
        Self { replies: Mutex::new(replies), cursor: AtomicU64::new(0), calls: AtomicU64::new(0) }
    }

    pub fn single(reply: impl Into<String>) -> Self {
        Self::new(vec![reply.into()])
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, _messages: &[ChatMessage]) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let replies = self.replies.lock().unwrap();
        if replies.is_empty() {
            return Err(PirError::Backend("scripted chat has no replies".into()));
        }
        let i = self.cursor.fetch_add(1, Ordering::SeqCst) as usize;
        Ok(replies[i.min(replies.len() - 1)].clone())
    }
}

/// Chat stub that echoes the last user message back.
pub struct EchoChat;

impl ChatBackend for EchoChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.clone())
            .ok_or_else(|| PirError::Backend("no user message to echo".into()))
    }
}

/// Chat stub that fails the first `fail_times` attempts with a backend
/// error, then succeeds with a fixed reply.
pub struct FlakyChat {
    fail_times: u64,
    reply: String,
    attempts: AtomicU64,
}

impl FlakyChat {
    pub fn failing_times(fail_times: u64, reply: impl Into<String>) -> Self {
        Self { fail_times, reply: reply.into(), attempts: AtomicU64::new(0) }
    }

    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FlakyChat {
    fn chat(&self, _messages: &[ChatMessage]) -> Result<String> {
        let n = self.attempts.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_times {
            Err(PirError::Backend("simulated transport failure".into()))
        } else {
            Ok(self.reply.clone())
        }
    }
}

/// Score stub returning a fixed response regardless of the request.
pub struct FixedScore {
    response: TokenLogProbs,
}

impl FixedScore {
    pub fn new(response: TokenLogProbs) -> Self {
        Self { response }
    }
}

impl ScoreBackend for FixedScore {
    fn score(&self, _req: &ScoreRequest) -> Result<TokenLogProbs> {
        Ok(self.response.clone())
    }

    fn identity(&self) -> String {
        "stub:fixed".into()
    }
}

/// Score stub that always fails with a backend error; counts attempts.
pub struct FlakyScore {
    attempts: AtomicU64,
}

impl FlakyScore {
    pub fn always_failing() -> Self {
        Self { attempts: AtomicU64::new(0) }
    }

    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl ScoreBackend for FlakyScore {
    fn score(&self, _req: &ScoreRequest) -> Result<TokenLogProbs> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(PirError::Backend("simulated transport failure".into()))
    }

    fn identity(&self) -> String {
        "stub:flaky".into()
    }
}

/// Wrapper that counts calls into an inner score backend.
pub struct CountingScore<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B: ScoreBackend> CountingScore<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ScoreBackend> ScoreBackend for CountingScore<B> {
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogProbs> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

fn messages_key(messages: &[ChatMessage]) -> String {
    let body = serde_json::to_string(messages).expect("serializable");
    hex_encode(&Sha256::digest(body.as_bytes()))
}

/// Records replies from an inner chat backend, keyed by a digest of the
/// message list, and can save them for later replay.
pub struct RecordingChat<B> {
    inner: B,
    recorded: Mutex<HashMap<String, String>>,
}

impl<B: ChatBackend> RecordingChat<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, recorded: Mutex::new(HashMap::new()) }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let recorded = self.recorded.lock().unwrap();
        let body = serde_json::to_string_pretty(&*recorded).expect("serializable");
        fs::write(path, body)?;
        Ok(())
    }
}

impl<B: ChatBackend> ChatBackend for RecordingChat<B> {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        let reply = self.inner.chat(messages)?;
        self.recorded.lock().unwrap().insert(messages_key(messages), reply.clone());
        Ok(reply)
    }
}

/// Replays responses recorded by [`RecordingChat`]; unknown requests are
/// a backend error naming the tape file.
pub struct ReplayChat {
    tape: HashMap<String, String>,
    path: PathBuf,
}

impl ReplayChat {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref())?;
        let tape = serde_json::from_str(&body)
            .map_err(|e| PirError::Config(format!("replay tape: {e}")))?;
        Ok(Self { tape, path: path.as_ref().to_path_buf() })
    }
}

impl ChatBackend for ReplayChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String> {
        self.tape.get(&messages_key(messages)).cloned().ok_or_else(|| {
            PirError::Backend(format!("no recorded reply in {}", self.path.display()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_last_user_message() {
        let chat = EchoChat;
        let reply = chat
            .chat(&[ChatMessage::user("first"), ChatMessage::user("second")])
            .unwrap();
        assert_eq!(reply, "second");
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("tape.json");
        let rec = RecordingChat::new(ScriptedChat::single("verification"));
        let messages = [ChatMessage::user("classify this")];
        assert_eq!(rec.chat(&messages).unwrap(), "verification");
        rec.save(&tape).unwrap();

        let replay = ReplayChat::load(&tape).unwrap();
        assert_eq!(replay.chat(&messages).unwrap(), "verification");
        assert!(replay.chat(&[ChatMessage::user("other")]).is_err());
    }
}
