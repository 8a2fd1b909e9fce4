//! Splits a reasoning chain into ordered logical steps, either through a
//! chat backend or a deterministic blank-line fallback. Both paths
//! guarantee the partition invariant: step text plus trailing separator,
//! concatenated in order, reproduces the source byte-exactly.

use serde::{Deserialize, Serialize};

use crate::corpus::ReasoningSample;
use crate::error::{PirError, Result};
use crate::gateway::{chat_with_retries, ChatBackend, ChatMessage};

pub const SEGMENT_PROMPT: &str = include_str!("../resources/segment_prompt.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
    pub separator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedChain {
    pub steps: Vec<Step>,
}

impl SegmentedChain {
    pub fn reassemble(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&step.text);
            out.push_str(&step.separator);
        }
        out
    }

    pub fn check_partition(&self, source: &str) -> Result<()> {
        if self.steps.iter().any(|s| s.text.is_empty()) {
            return Err(PirError::Validation("empty step text".into()));
        }
        if self.reassemble() != source {
            return Err(PirError::Validation(
                "steps do not reassemble to the source text".into(),
            ));
        }
        Ok(())
    }
}

/// Splits a span into (text, trailing whitespace separator).
fn split_trailing_ws(span: &str) -> (String, String) {
    let text_end = span.trim_end().len();
    (span[..text_end].to_string(), span[text_end..].to_string())
}

fn count_sentences(text: &str) -> usize {
    let mut count = 0;
    let mut chars = text.chars().peekable();
    while let Some(ch) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            match chars.peek() {
                None => count += 1,
                Some(next) if next.is_whitespace() => count += 1,
                _ => {}
            }
        }
    }
    count
}

/// Deterministic fallback segmenter: split on blank lines, then merge
/// paragraphs shorter than two sentences into the following paragraph
/// (the last one merges backward).
pub fn segment_deterministic(reasoning: &str) -> Result<SegmentedChain> {
    if reasoning.trim().is_empty() {
        return Err(PirError::Validation("reasoning text is empty".into()));
    }

    // Paragraph boundaries are maximal whitespace runs containing at
    // least two newlines; the run is the preceding step's separator.
    let bytes = reasoning.as_bytes();
    let mut spans: Vec<(String, String)> = Vec::new(); // (text, separator)
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            let run_start = i;
            let mut newlines = 0;
            while i < bytes.len() && reasoning[i..].starts_with(|c: char| c.is_whitespace()) {
                if bytes[i] == b'\n' {
                    newlines += 1;
                }
                i += 1;
            }
            if newlines >= 2 && run_start > start {
                spans.push((
                    reasoning[start..run_start].to_string(),
                    reasoning[run_start..i].to_string(),
                ));
                start = i;
            }
        } else {
            i += 1;
        }
    }
    if start < reasoning.len() {
        let (text, sep) = split_trailing_ws(&reasoning[start..]);
        if text.is_empty() {
            // trailing whitespace-only remainder joins the previous separator
            if let Some(last) = spans.last_mut() {
                last.1.push_str(&reasoning[start..]);
            }
        } else {
            spans.push((text, sep));
        }
    }

    // Merge short paragraphs forward.
    let mut merged: Vec<(String, String)> = Vec::new();
    let mut pending: Option<(String, String)> = None;
    for (text, sep) in spans {
        let (text, sep) = match pending.take() {
            Some((ptext, psep)) => (format!("{ptext}{psep}{text}"), sep),
            None => (text, sep),
        };
        if count_sentences(&text) < 2 {
            pending = Some((text, sep));
        } else {
            merged.push((text, sep));
        }
    }
    if let Some((ptext, psep)) = pending {
        match merged.last_mut() {
            Some(last) => {
                last.0 = format!("{}{}{ptext}", last.0, last.1);
                last.1 = psep;
            }
            None => merged.push((ptext, psep)),
        }
    }

    let steps = merged
        .into_iter()
        .enumerate()
        .map(|(index, (text, separator))| Step { index, text, separator })
        .collect();
    let chain = SegmentedChain { steps };
    chain.check_partition(reasoning)?;
    Ok(chain)
}

fn strip_enumeration(line: &str) -> &str {
    let line = line.trim();
    let without_bullet = line
        .strip_prefix("- ")
        .or_else(|| line.strip_prefix("* "))
        .unwrap_or(line);
    let digits = without_bullet.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &without_bullet[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    without_bullet
}

/// Parses a snippet-per-line reply and materializes steps by in-order
/// exact substring search. Any snippet that cannot be located verbatim
/// is an alignment error; the caller falls back to
/// [`segment_deterministic`].
pub fn align_snippets(reasoning: &str, reply: &str) -> Result<SegmentedChain> {
    let snippets: Vec<&str> = reply
        .lines()
        .map(strip_enumeration)
        .filter(|l| !l.is_empty())
        .collect();
    if snippets.is_empty() {
        return Err(PirError::Alignment("backend returned no snippets".into()));
    }

    let mut anchors = Vec::with_capacity(snippets.len());
    let mut search_from = 0;
    for snippet in &snippets {
        match reasoning[search_from..].find(snippet) {
            Some(offset) => {
                anchors.push(search_from + offset);
                search_from += offset + snippet.len();
            }
            None => {
                return Err(PirError::Alignment(format!(
                    "snippet not found in source: {snippet:?}"
                )))
            }
        }
    }

    // Text before the first anchor belongs to the first step.
    let mut boundaries = anchors;
    boundaries[0] = 0;
    boundaries.push(reasoning.len());

    let mut steps = Vec::with_capacity(boundaries.len() - 1);
    for (index, window) in boundaries.windows(2).enumerate() {
        let span = &reasoning[window[0]..window[1]];
        let (text, separator) = split_trailing_ws(span);
        if text.is_empty() {
            return Err(PirError::Alignment(format!("step {index} has empty text")));
        }
        steps.push(Step { index, text, separator });
    }
    let chain = SegmentedChain { steps };
    chain.check_partition(reasoning)?;
    Ok(chain)
}

pub fn segment_prompt(reasoning: &str) -> String {
    SEGMENT_PROMPT.replace("{reasoning}", reasoning)
}

/// LLM segmentation: ask the backend for verbatim opening snippets, then
/// anchor them in the source text.
pub fn segment_llm(
    sample: &ReasoningSample,
    chat: &dyn ChatBackend,
    retry_budget: u32,
) -> Result<SegmentedChain> {
    if sample.reasoning.trim().is_empty() {
        return Err(PirError::Validation("reasoning text is empty".into()));
    }
    let prompt = segment_prompt(&sample.reasoning);
    let reply = chat_with_retries(chat, &[ChatMessage::user(prompt)], retry_budget)?;
    align_snippets(&sample.reasoning, &reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::stub::ScriptedChat;
    use proptest::prelude::*;

    fn sample(reasoning: &str) -> ReasoningSample {
        ReasoningSample {
            id: "t".into(),
            question: "q".into(),
            reasoning: reasoning.into(),
            answer: "a".into(),
        }
    }

    #[test]
    fn blank_line_rule() {
        let chain = segment_deterministic("A.\n\nB.").unwrap();
        let texts: Vec<_> = chain.steps.iter().map(|s| s.text.as_str()).collect();
        let seps: Vec<_> = chain.steps.iter().map(|s| s.separator.as_str()).collect();
        assert_eq!(texts, ["A.", "B."]);
        assert_eq!(seps, ["\n\n", ""]);
    }

    #[test]
    fn single_sentence_is_one_step() {
        let chain = segment_deterministic("Just one sentence.").unwrap();
        assert_eq!(chain.steps.len(), 1);
    }

    #[test]
    fn ten_paragraphs_reassemble() {
        let text = (0..10)
            .map(|i| format!("Paragraph {i} begins. It has two sentences."))
            .collect::<Vec<_>>()
            .join("\n\n");
        let chain = segment_deterministic(&text).unwrap();
        assert_eq!(chain.steps.len(), 10);
        assert_eq!(chain.reassemble(), text);
    }

    #[test]
    fn short_paragraphs_merge_forward() {
        let text = "Short one.\n\nNow a longer paragraph. It really has two sentences.";
        let chain = segment_deterministic(text).unwrap();
        assert_eq!(chain.steps.len(), 1);
        assert_eq!(chain.reassemble(), text);
    }

    #[test]
    fn llm_alignment_produces_partition() {
        let text = "We start with the premise. It gives us x.\n\nNext we square both sides. The result is y.";
        let chat = ScriptedChat::single("We start with the premise\nNext we square both sides");
        let chain = segment_llm(&sample(text), &chat, 0).unwrap();
        assert_eq!(chain.steps.len(), 2);
        assert_eq!(chain.reassemble(), text);
    }

    #[test]
    fn unknown_snippet_is_alignment_error() {
        let chat = ScriptedChat::single("this snippet is nowhere");
        let err = segment_llm(&sample("Some reasoning text."), &chat, 0).unwrap_err();
        assert!(matches!(err, PirError::Alignment(_)));
    }

    #[test]
    fn six_sentences_grouped_into_three() {
        let text = "S1 a. S2 b.\n\nS3 c. S4 d.\n\nS5 e. S6 f.";
        let chat = ScriptedChat::single("1. S1 a.\n2. S3 c.\n3. S5 e.");
        let chain = segment_llm(&sample(text), &chat, 0).unwrap();
        assert_eq!(chain.steps.len(), 3);
        assert_eq!(chain.reassemble(), text);
    }

    proptest! {
        #[test]
        fn deterministic_segmenter_partitions(text in "[ -~\n]{1,400}") {
            prop_assume!(!text.trim().is_empty());
            let chain = segment_deterministic(&text).unwrap();
            prop_assert_eq!(chain.reassemble(), text.clone());
            prop_assert!(!chain.steps.is_empty());
            // pure function
            let again = segment_deterministic(&text).unwrap();
            prop_assert_eq!(chain, again);
        }
    }
}
