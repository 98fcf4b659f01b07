//! Deterministic in-process backends.
//!
//! `blind` always repeats the ACT verb, ignoring polarity. `perfect` repeats
//! it only when the text carries an even number of negation markers. Both
//! report every word as a single token.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MaskedLm, Prediction};
use crate::error::{Error, Result};
use crate::patterns::MASK_PLACEHOLDER;

pub const MOCK_MASK_TOKEN: &str = "[MASK]";

/// Answer when the text has no "to <verb>" besides the mask.
pub const NO_ACT_ANSWER: &str = "dance";

/// What `perfect` predicts when negation rules ACT out.
pub const NEGATED_ANSWER: &str = "rest";
const NEGATED_FALLBACK: &str = "wait";

/// Lower-ranked fillers after the top-1.
const FILLERS: [&str; 12] = [
    "rest", "wait", "dance", "sing", "read", "swim", "work", "travel", "cook", "play", "write",
    "paint",
];

const NEGATION_MARKERS: [&str; 4] = ["doesn't", "isn't", "doesn’t", "isn’t"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockKind {
    Perfect,
    Blind,
}

impl MockKind {
    pub fn backend_id(self) -> &'static str {
        match self {
            MockKind::Perfect => "mock:perfect",
            MockKind::Blind => "mock:blind",
        }
    }
}

impl fmt::Display for MockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.backend_id())
    }
}

impl FromStr for MockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("mock:").unwrap_or(s) {
            "perfect" => Ok(MockKind::Perfect),
            "blind" => Ok(MockKind::Blind),
            other => Err(Error::InvalidInput(format!("unknown mock backend {other:?}"))),
        }
    }
}

/// The last word following "to " that is not the mask placeholder.
pub fn last_infinitive(text: &str) -> Option<&str> {
    let mut found = None;
    for (i, _) in text.match_indices("to ") {
        if i > 0 && !text[..i].ends_with(' ') {
            continue;
        }
        let rest = &text[i + 3..];
        if rest.starts_with(MASK_PLACEHOLDER) {
            continue;
        }
        let word = rest
            .split(|c: char| !(c.is_alphabetic() || c == '\'' || c == '-'))
            .next()
            .unwrap_or("");
        if !word.is_empty() {
            found = Some(word);
        }
    }
    found
}

pub fn count_negations(text: &str) -> usize {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c == '.' || c == ','))
        .filter(|w| NEGATION_MARKERS.contains(w))
        .count()
}

/// Builds a ranked list with `top1` first, then fillers.
fn ranked(top1: &str, top_k: usize) -> Vec<Prediction> {
    std::iter::once(top1)
        .chain(FILLERS.iter().copied().filter(|f| *f != top1))
        .take(top_k)
        .enumerate()
        .map(|(rank, tok)| Prediction::new(tok, 1.0 / (rank as f64 + 1.0)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    kind: MockKind,
}

impl MockBackend {
    pub fn new(kind: MockKind) -> Self {
        MockBackend { kind }
    }

    pub fn kind(&self) -> MockKind {
        self.kind
    }

    pub fn top1(&self, text: &str) -> String {
        let act = last_infinitive(text);
        match self.kind {
            MockKind::Blind => act.unwrap_or(NO_ACT_ANSWER).to_string(),
            MockKind::Perfect => {
                if count_negations(text).is_multiple_of(2) {
                    act.unwrap_or(NO_ACT_ANSWER).to_string()
                } else if act == Some(NEGATED_ANSWER) {
                    NEGATED_FALLBACK.to_string()
                } else {
                    NEGATED_ANSWER.to_string()
                }
            }
        }
    }
}

impl MaskedLm for MockBackend {
    fn backend_id(&self) -> &str {
        self.kind.backend_id()
    }

    fn mask_token(&self) -> Option<String> {
        Some(MOCK_MASK_TOKEN.to_string())
    }

    fn fill_mask_batch(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        Ok(texts.iter().map(|t| ranked(&self.top1(t), top_k)).collect())
    }

    fn single_token_batch(&self, words: &[String]) -> Result<Vec<bool>> {
        Ok(vec![true; words.len()])
    }
}

type TopFn = dyn Fn(&str) -> String + Send + Sync;
type SingleFn = dyn Fn(&str) -> bool + Send + Sync;

/// Backend driven by closures, for scripted test scenarios.
pub struct FnBackend {
    id: String,
    top1: Box<TopFn>,
    single: Box<SingleFn>,
}

impl FnBackend {
    pub fn new(id: impl Into<String>, top1: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        FnBackend {
            id: id.into(),
            top1: Box::new(top1),
            single: Box::new(|_| true),
        }
    }

    pub fn with_single_token(mut self, f: impl Fn(&str) -> bool + Send + Sync + 'static) -> Self {
        self.single = Box::new(f);
        self
    }
}

impl MaskedLm for FnBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn mask_token(&self) -> Option<String> {
        Some(MOCK_MASK_TOKEN.to_string())
    }

    fn fill_mask_batch(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        Ok(texts
            .iter()
            .map(|t| ranked(&(self.top1)(t), top_k))
            .collect())
    }

    fn single_token_batch(&self, words: &[String]) -> Result<Vec<bool>> {
        Ok(words.iter().map(|w| (self.single)(w)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{Gender, NameEntry, Profession};
    use crate::patterns::{render_scnt, CorefMode, ScntPattern, TargetFamily, Triplet};

    fn texts(verb: &str) -> Vec<(ScntPattern, String)> {
        let t = Triplet::new(
            NameEntry::new("Jessica", Gender::Feminine).unwrap(),
            Profession::new("dancer", None).unwrap(),
            verb,
        );
        ScntPattern::ALL
            .into_iter()
            .map(|p| {
                let ex = render_scnt(&t, p, &CorefMode::PRONOUN, TargetFamily::Happy).unwrap();
                (p, ex.text)
            })
            .collect()
    }

    #[test]
    fn rule_table_over_patterns() {
        let perfect = MockBackend::new(MockKind::Perfect);
        let blind = MockBackend::new(MockKind::Blind);
        for (p, text) in texts("smoke") {
            assert_eq!(blind.top1(&text), "smoke", "{p}");
            let expected = match p {
                ScntPattern::CpTn | ScntPattern::CnTp => "rest",
                _ => "smoke",
            };
            assert_eq!(perfect.top1(&text), expected, "{p}");
        }
    }

    #[test]
    fn negated_answer_never_equals_act() {
        let perfect = MockBackend::new(MockKind::Perfect);
        for (p, text) in texts("rest") {
            let top = perfect.top1(&text);
            match p {
                ScntPattern::CpTn | ScntPattern::CnTp => assert_eq!(top, "wait"),
                _ => assert_eq!(top, "rest"),
            }
        }
    }

    #[test]
    fn infinitive_scan() {
        assert_eq!(
            last_infinitive("Maria is a doctor who tries to pad as often as possible. She likes to ⟨MASK⟩."),
            Some("pad")
        );
        assert_eq!(last_infinitive("Jessica is an architect and she likes to ⟨MASK⟩."), None);
        assert_eq!(last_infinitive("Ann went into town to ⟨MASK⟩."), None);
        assert_eq!(count_negations("He doesn't like to x. He isn't happy to ⟨MASK⟩."), 2);
    }

    #[test]
    fn ranked_lists_are_capped_and_descending() {
        let preds = MockBackend::new(MockKind::Blind)
            .fill_mask_batch(&["She likes to run. He is happy to ⟨MASK⟩.".into()], 20)
            .unwrap()
            .remove(0);
        assert_eq!(preds[0].token, "run");
        assert_eq!(preds.len(), FILLERS.len() + 1);
        assert!(preds.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
