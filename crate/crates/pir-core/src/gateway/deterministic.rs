use sha2::{Digest, Sha256};

use super::{ScoreBackend, ScoreRequest, TokenLogProbs};
use crate::error::Result;

/// Offline scoring backend. Tokenizes the continuation on whitespace
/// (each token keeps its trailing whitespace, leading whitespace sticks
/// to the first token) and assigns each token a reproducible logprob:
///
///   lp(t, j) = -(1 + (h mod 1000) / 1000) * ln 2
///
/// where h is the first 8 bytes (big-endian) of
/// SHA-256(seed_le || sha256(context) || token_bytes || j_le).
///
/// Pure, order-sensitive, and stable across platforms and runs.
pub struct DeterministicBackend {
    seed: u64,
}

impl DeterministicBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn tokenize(continuation: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        let mut seen_non_ws = false;
        for ch in continuation.chars() {
            if ch.is_whitespace() {
                current.push(ch);
            } else {
                // a non-whitespace char after trailing whitespace starts a new token
                if seen_non_ws && current.chars().last().is_some_and(char::is_whitespace) {
                    tokens.push(std::mem::take(&mut current));
                }
                current.push(ch);
                seen_non_ws = true;
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }

    pub fn token_logprob(&self, context_digest: &[u8], token: &str, position: usize) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(context_digest);
        hasher.update(token.as_bytes());
        hasher.update((position as u64).to_le_bytes());
        let digest = hasher.finalize();
        let h = u64::from_be_bytes(digest[..8].try_into().unwrap());
        -(1.0 + (h % 1000) as f64 / 1000.0) * std::f64::consts::LN_2
    }
}

impl ScoreBackend for DeterministicBackend {
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogProbs> {
        let context_digest = Sha256::digest(req.context.as_bytes());
        let tokens = Self::tokenize(&req.continuation);
        let logprobs = tokens
            .iter()
            .enumerate()
            .map(|(j, t)| self.token_logprob(&context_digest, t, j))
            .collect();
        Ok(TokenLogProbs { tokens, logprobs })
    }

    fn identity(&self) -> String {
        format!("deterministic:{}", self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_partitions_the_continuation() {
        for s in ["a b  c", "  leading", "trailing  ", "one", "a\nb\t c "] {
            assert_eq!(DeterministicBackend::tokenize(s).concat(), s);
        }
        assert_eq!(DeterministicBackend::tokenize("a b  c"), vec!["a ", "b  ", "c"]);
    }

    #[test]
    fn logprobs_are_reproducible_and_bounded() {
        let b = DeterministicBackend::new(42);
        let req = ScoreRequest { context: "q".into(), continuation: "x y z".into() };
        let a = b.score(&req).unwrap();
        let c = b.score(&req).unwrap();
        assert_eq!(a, c);
        let ln2 = std::f64::consts::LN_2;
        for &lp in &a.logprobs {
            assert!(lp <= -ln2 && lp >= -2.0 * ln2);
        }
    }

    #[test]
    fn logprob_depends_on_context_and_position() {
        let b = DeterministicBackend::new(0);
        let d1 = Sha256::digest(b"ctx1");
        let d2 = Sha256::digest(b"ctx2");
        assert_ne!(b.token_logprob(&d1, "t", 0), b.token_logprob(&d2, "t", 0));
        assert_ne!(b.token_logprob(&d1, "t", 0), b.token_logprob(&d1, "t", 1));
    }
}
