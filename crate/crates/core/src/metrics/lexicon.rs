//! Dictionary concept extractor: longest-match, non-overlapping,
//! whole-token scan over the shared tokenizer's output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use super::tokenize::tokenize;
use super::RulesError;

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub concept: String,
    /// Token offsets, end exclusive.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct ConceptLexicon {
    forms: HashMap<Vec<String>, usize>,
    concepts: Vec<String>,
    max_len: usize,
}

impl ConceptLexicon {
    /// Shipped demo lexicon of common symptoms and conditions.
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path).map_err(|e| RulesError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_tsv(&text)
    }

    /// `canonical<TAB>surface<TAB>surface…`, `#` starts a comment line. A line
    /// with only a canonical name uses that name as its single surface form.
    pub fn from_tsv(text: &str) -> Result<Self, RulesError> {
        let mut entries: Vec<(usize, (String, Vec<String>))> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t').map(str::trim);
            let canonical = cols.next().unwrap_or_default().to_string();
            if canonical.is_empty() {
                return Err(RulesError::at(n + 1, "empty canonical concept"));
            }
            let mut surfaces: Vec<String> =
                cols.filter(|c| !c.is_empty()).map(str::to_string).collect();
            if surfaces.is_empty() {
                surfaces.push(canonical.clone());
            }
            for s in &surfaces {
                if tokenize(s).is_empty() {
                    return Err(RulesError::at(n + 1, format!("surface form {s:?} has no tokens")));
                }
            }
            entries.push((n + 1, (canonical, surfaces)));
        }
        Self::from_entries_with_lines(entries)
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self, RulesError>
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        Self::from_entries_with_lines(entries.into_iter().enumerate().map(|(i, (c, fs))| {
            (i + 1, (c.into(), fs.into_iter().map(Into::into).collect()))
        }))
    }

    fn from_entries_with_lines<I>(entries: I) -> Result<Self, RulesError>
    where
        I: IntoIterator<Item = (usize, (String, Vec<String>))>,
    {
        let mut concepts: Vec<String> = Vec::new();
        let mut concept_ids: HashMap<String, usize> = HashMap::new();
        let mut forms: HashMap<Vec<String>, usize> = HashMap::new();
        let mut max_len = 0;
        for (line, (canonical, surfaces)) in entries {
            let cid = *concept_ids.entry(canonical.clone()).or_insert_with(|| {
                concepts.push(canonical.clone());
                concepts.len() - 1
            });
            for surface in surfaces {
                let toks = tokenize(&surface);
                if toks.is_empty() {
                    return Err(RulesError::at(line, format!("surface form {surface:?} has no tokens")));
                }
                max_len = max_len.max(toks.len());
                if let Some(&other) = forms.get(&toks) {
                    if other != cid {
                        return Err(RulesError::at(
                            line,
                            format!(
                                "surface form {surface:?} maps to both {:?} and {canonical:?}",
                                concepts[other]
                            ),
                        ));
                    }
                }
                forms.insert(toks, cid);
            }
        }
        Ok(Self {
            forms,
            concepts,
            max_len,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// canonical → surface forms (as normalized token strings).
    pub fn entries(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in &self.concepts {
            out.entry(c.clone()).or_default();
        }
        for (toks, &cid) in &self.forms {
            out.get_mut(&self.concepts[cid]).unwrap().insert(toks.join(" "));
        }
        out
    }

    /// Longest match at each position, scanning left to right; a match
    /// consumes its tokens.
    pub fn find_mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_len.min(tokens.len() - i))
                .rev()
                .find_map(|len| self.forms.get(&tokens[i..i + len]).map(|&cid| (len, cid)));
            match longest {
                Some((len, cid)) => {
                    out.push(Mention {
                        concept: self.concepts[cid].clone(),
                        start: i,
                        end: i + len,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// The deduplicated set of canonical concepts mentioned in `text`.
pub fn extract_concepts(text: &str, lexicon: &ConceptLexicon) -> BTreeSet<String> {
    lexicon
        .find_mentions(&tokenize(text))
        .into_iter()
        .map(|m| m.concept)
        .collect()
}
