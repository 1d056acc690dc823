//! Registry of source cases and their competing translation candidates.
//!
//! A candidate's *slot* is the comparison column it fills across cases. It is
//! the candidate id, unless the candidate stands in for a missing version, in
//! which case the slot is the `substituted_for` target.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate case id `{0}`")]
    DuplicateCase(String),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("case file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    LlmBaseline,
    LlmAdjusted,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Human => "human",
            Origin::LlmBaseline => "llm_baseline",
            Origin::LlmAdjusted => "llm_adjusted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationCandidate {
    pub id: String,
    pub origin: Origin,
    pub translator_label: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substituted_for: Option<String>,
}

impl TranslationCandidate {
    pub fn slot(&self) -> &str {
        self.substituted_for.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceCase {
    pub id: String,
    pub title: String,
    pub source_text: String,
    pub context_note: String,
    pub translation_focus: String,
    pub candidates: Vec<TranslationCandidate>,
}

impl SourceCase {
    pub fn candidate(&self, id: &str) -> Option<&TranslationCandidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn candidate_for_slot(&self, slot: &str) -> Option<&TranslationCandidate> {
        self.candidates.iter().find(|c| c.slot() == slot)
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub case_id: String,
    pub candidate_id: Option<String>,
    pub message: String,
}

/// Ordered case registry; iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    cases: Vec<SourceCase>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_case(&mut self, case: SourceCase) -> Result<(), CorpusError> {
        if self.get(&case.id).is_some() {
            return Err(CorpusError::DuplicateCase(case.id));
        }
        self.cases.push(case);
        Ok(())
    }

    /// Inserts or replaces a case with the same id, keeping its position.
    pub fn upsert_case(&mut self, case: SourceCase) {
        match self.cases.iter_mut().find(|c| c.id == case.id) {
            Some(slot) => *slot = case,
            None => self.cases.push(case),
        }
    }

    pub fn get(&self, id: &str) -> Option<&SourceCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut SourceCase> {
        self.cases.iter_mut().find(|c| c.id == id)
    }

    pub fn cases(&self) -> &[SourceCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn candidate_count(&self) -> usize {
        self.cases.iter().map(SourceCase::k).sum()
    }

    /// Every invariant violation across the registry; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen_cases = BTreeSet::new();
        for case in &self.cases {
            if !seen_cases.insert(case.id.as_str()) {
                out.push(violation(case, None, "duplicate case id"));
            }
            validate_case(case, &mut out);
        }
        out
    }

    /// Writes one `<id>.json` per case into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for case in &self.cases {
            save_case(dir, case)?;
        }
        Ok(())
    }

    /// Loads every `*.json` file in `dir`, ordered by file name.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut corpus = Corpus::new();
        for path in paths {
            corpus.add_case(load_case(&path)?)?;
        }
        Ok(corpus)
    }
}

pub fn save_case(dir: &Path, case: &SourceCase) -> Result<(), CorpusError> {
    let path = dir.join(format!("{}.json", case.id));
    let mut text = serde_json::to_string_pretty(case).expect("case serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn load_case(path: &Path) -> Result<SourceCase, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn violation(case: &SourceCase, candidate: Option<&str>, message: impl Into<String>) -> Violation {
    Violation {
        case_id: case.id.clone(),
        candidate_id: candidate.map(str::to_string),
        message: message.into(),
    }
}

fn validate_case(case: &SourceCase, out: &mut Vec<Violation>) {
    if case.source_text.trim().is_empty() {
        out.push(violation(case, None, "source_text is empty"));
    }
    if case.candidates.len() < 2 {
        out.push(violation(
            case,
            None,
            format!("needs at least 2 candidates, has {}", case.candidates.len()),
        ));
    }

    let mut ids = BTreeSet::new();
    let mut per_origin: BTreeMap<Origin, usize> = BTreeMap::new();
    for cand in &case.candidates {
        if !ids.insert(cand.id.as_str()) {
            out.push(violation(case, Some(&cand.id), "duplicate candidate id"));
        }
        if cand.text.trim().is_empty() {
            out.push(violation(case, Some(&cand.id), "candidate text is empty"));
        }
        *per_origin.entry(cand.origin).or_default() += 1;
    }
    for origin in [Origin::LlmBaseline, Origin::LlmAdjusted] {
        let count = per_origin.get(&origin).copied().unwrap_or(0);
        if count > 1 {
            out.push(violation(
                case,
                None,
                format!("{count} candidates with origin {}; at most one allowed", origin.as_str()),
            ));
        }
    }

    let mut substituted = BTreeSet::new();
    for cand in &case.candidates {
        let Some(target) = cand.substituted_for.as_deref() else {
            continue;
        };
        if ids.contains(target) {
            out.push(violation(
                case,
                Some(&cand.id),
                format!("substituted_for `{target}` names a slot already present in the case"),
            ));
        } else if !substituted.insert(target) {
            out.push(violation(
                case,
                Some(&cand.id),
                format!("slot `{target}` substituted more than once"),
            ));
        }
    }
}
