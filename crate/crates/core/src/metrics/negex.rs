//! NegEx-style affirmation tagging.
//!
//! Trigger phrases are matched over the token stream left to right, longest
//! phrase first, skipping tokens that belong to a concept mention. A
//! pseudo-negation match consumes its tokens without acting as a trigger.
//! A mention is negated when, inside its own sentence,
//!
//! * a `pre` trigger ends fewer than `scope_window` tokens before the mention
//!   starts, or
//! * a `post` trigger starts fewer than `scope_window` tokens after the
//!   mention ends,
//!
//! and no `term` phrase lies between the trigger and the mention.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lexicon::{ConceptLexicon, Mention};
use super::tokenize::{tokenize_sentences, Token};
use super::RulesError;

const BUILTIN_RULES: &str = include_str!("../../data/negex_rules.tsv");

pub const DEFAULT_SCOPE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerKind {
    Pre,
    Post,
    Pseudo,
    Term,
}

impl TriggerKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "pre" => Some(Self::Pre),
            "post" => Some(Self::Post),
            "pseudo" => Some(Self::Pseudo),
            "term" => Some(Self::Term),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NegexRules {
    phrases: HashMap<Vec<String>, TriggerKind>,
    max_len: usize,
    scope_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affirmation {
    Affirmed,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMention {
    pub concept: String,
    pub affirmation: Affirmation,
    /// Token offsets, end exclusive.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Occurrence {
    kind: TriggerKind,
    start: usize,
    end: usize,
    sentence: usize,
}

impl NegexRules {
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_RULES).expect("builtin negex rules are valid")
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path).map_err(|e| RulesError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_tsv(&text)
    }

    /// `category<TAB>phrase` lines, categories `pre`, `post`, `pseudo`, `term`.
    pub fn from_tsv(text: &str) -> Result<Self, RulesError> {
        let mut phrases = HashMap::new();
        let mut max_len = 0;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (cat, phrase) = line
                .split_once('\t')
                .ok_or_else(|| RulesError::at(n + 1, "expected category<TAB>phrase"))?;
            let kind = TriggerKind::parse(cat.trim())
                .ok_or_else(|| RulesError::at(n + 1, format!("unknown category {cat:?}")))?;
            let toks: Vec<String> = tokenize_sentences(phrase).into_iter().map(|t| t.text).collect();
            if toks.is_empty() {
                return Err(RulesError::at(n + 1, format!("phrase {phrase:?} has no tokens")));
            }
            max_len = max_len.max(toks.len());
            match phrases.insert(toks, kind) {
                Some(prev) if prev != kind => {
                    return Err(RulesError::at(
                        n + 1,
                        format!("phrase {phrase:?} listed under two categories"),
                    ))
                }
                _ => {}
            }
        }
        Ok(Self {
            phrases,
            max_len,
            scope_window: DEFAULT_SCOPE_WINDOW,
        })
    }

    pub fn with_scope_window(mut self, window: usize) -> Result<Self, RulesError> {
        if window == 0 {
            return Err(RulesError::Invalid("scope_window must be at least 1".into()));
        }
        self.scope_window = window;
        Ok(self)
    }

    pub fn scope_window(&self) -> usize {
        self.scope_window
    }

    fn occurrences(&self, tokens: &[Token], mentions: &[Mention]) -> Vec<Occurrence> {
        let mut in_mention = vec![false; tokens.len()];
        for m in mentions {
            for flag in &mut in_mention[m.start..m.end] {
                *flag = true;
            }
        }
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if in_mention[i] {
                i += 1;
                continue;
            }
            let sentence = tokens[i].sentence;
            let mut avail = 0;
            while i + avail < tokens.len()
                && avail < self.max_len
                && !in_mention[i + avail]
                && tokens[i + avail].sentence == sentence
            {
                avail += 1;
            }
            let hit = (1..=avail).rev().find_map(|len| {
                let key: Vec<String> = tokens[i..i + len].iter().map(|t| t.text.clone()).collect();
                self.phrases.get(&key).map(|&k| (len, k))
            });
            match hit {
                Some((len, kind)) => {
                    out.push(Occurrence {
                        kind,
                        start: i,
                        end: i + len,
                        sentence,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Assign a status to every mention. Output order follows `mentions`.
    pub fn tag(&self, tokens: &[Token], mentions: &[Mention]) -> Vec<ConceptMention> {
        let occ = self.occurrences(tokens, mentions);
        let terminated = |from: usize, to: usize| {
            occ.iter()
                .any(|o| o.kind == TriggerKind::Term && o.start >= from && o.end <= to)
        };
        mentions
            .iter()
            .map(|m| {
                let sentence = tokens[m.start].sentence;
                let negated = occ.iter().any(|o| {
                    if o.sentence != sentence {
                        return false;
                    }
                    match o.kind {
                        TriggerKind::Pre => {
                            o.end <= m.start
                                && m.start - o.end < self.scope_window
                                && !terminated(o.end, m.start)
                        }
                        TriggerKind::Post => {
                            o.start >= m.end
                                && o.start - m.end < self.scope_window
                                && !terminated(m.end, o.start)
                        }
                        TriggerKind::Pseudo | TriggerKind::Term => false,
                    }
                });
                ConceptMention {
                    concept: m.concept.clone(),
                    affirmation: if negated {
                        Affirmation::Negated
                    } else {
                        Affirmation::Affirmed
                    },
                    span: (m.start, m.end),
                }
            })
            .collect()
    }
}

/// Extract concept mentions from `text` and tag each as affirmed or negated.
pub fn tag_affirmations(
    text: &str,
    lexicon: &ConceptLexicon,
    rules: &NegexRules,
) -> Vec<ConceptMention> {
    let tokens = tokenize_sentences(text);
    let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let mentions = lexicon.find_mentions(&words);
    rules.tag(&tokens, &mentions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status(text: &str) -> Vec<(String, Affirmation)> {
        let lex = ConceptLexicon::from_tsv("fever\ncough\nnausea\nrash\n").unwrap();
        tag_affirmations(text, &lex, &NegexRules::builtin())
            .into_iter()
            .map(|m| (m.concept, m.affirmation))
            .collect()
    }

    use Affirmation::*;

    #[test]
    fn pre_trigger() {
        assert_eq!(status("denies fever"), [("fever".into(), Negated)]);
        assert_eq!(status("has fever"), [("fever".into(), Affirmed)]);
    }

    #[test]
    fn termination_blocks_scope() {
        assert_eq!(
            status("no cough but fever"),
            [("cough".into(), Negated), ("fever".into(), Affirmed)]
        );
    }

    #[test]
    fn window_is_exclusive_bound() {
        // "no" then 4 filler tokens: mention starts 4 tokens after trigger end.
        assert_eq!(status("no a b c d fever"), [("fever".into(), Negated)]);
        assert_eq!(status("no a b c d e fever"), [("fever".into(), Affirmed)]);
    }

    #[test]
    fn sentence_boundary_blocks_scope() {
        assert_eq!(
            status("denies fever. has cough"),
            [("fever".into(), Negated), ("cough".into(), Affirmed)]
        );
    }

    #[test]
    fn rejects_bad_files() {
        assert!(NegexRules::from_tsv("pre\tno\npost\tno\n").is_err());
        assert!(NegexRules::from_tsv("sideways\tno\n").is_err());
        assert!(NegexRules::from_tsv("no tab here\n").is_err());
        assert!(NegexRules::builtin().with_scope_window(0).is_err());
    }
}
