//! Staged prompt-refinement sessions that produce a case's adjusted candidate.
//!
//! Stages run `Baseline → Diagnose → [InjectKnowledge] → [IdentifyFigures] → Polish → Finalized`.
//! The human records the diagnosis and supplies every piece of domain material;
//! the session only templates prompts, sends them, and logs the exchange.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Origin, SourceCase, TranslationCandidate};
use crate::provider::{Client, Message, ProviderError, TranscriptStore};

pub const TRANSLATOR_SYSTEM: &str =
    "You are a translator of classical Chinese medical texts into English for clinical readers.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    Diagnose,
    InjectKnowledge,
    IdentifyFigures,
    Polish,
    Finalized,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Diagnose => "diagnose",
            Stage::InjectKnowledge => "inject_knowledge",
            Stage::IdentifyFigures => "identify_figures",
            Stage::Polish => "polish",
            Stage::Finalized => "finalized",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    KnowledgeGap,
    FigureRecognitionGap,
    LinguisticGap,
}

impl std::str::FromStr for FailureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "knowledge_gap" | "knowledge" => Ok(FailureMode::KnowledgeGap),
            "figure_recognition_gap" | "figure" | "figures" => Ok(FailureMode::FigureRecognitionGap),
            "linguistic_gap" | "linguistic" => Ok(FailureMode::LinguisticGap),
            other => Err(format!("unknown failure mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub adequate_rationale: bool,
    #[serde(default)]
    pub failure_modes: BTreeSet<FailureMode>,
    #[serde(default)]
    pub notes: String,
}

impl Diagnosis {
    pub fn adequate() -> Self {
        Self { adequate_rationale: true, failure_modes: BTreeSet::new(), notes: String::new() }
    }

    pub fn failing(modes: impl IntoIterator<Item = FailureMode>) -> Self {
        Self { adequate_rationale: false, failure_modes: modes.into_iter().collect(), notes: String::new() }
    }

    pub fn validate(&self) -> Result<(), ScaffoldError> {
        if self.adequate_rationale && !self.failure_modes.is_empty() {
            return Err(ScaffoldError::InvalidDiagnosis("an adequate rationale cannot list failure modes".into()));
        }
        if !self.adequate_rationale && self.failure_modes.is_empty() {
            return Err(ScaffoldError::InvalidDiagnosis("an inadequate rationale needs at least one failure mode".into()));
        }
        Ok(())
    }

    /// First stage after diagnosis.
    pub fn route(&self) -> Stage {
        if self.failure_modes.contains(&FailureMode::KnowledgeGap) {
            Stage::InjectKnowledge
        } else if self.failure_modes.contains(&FailureMode::FigureRecognitionGap) {
            Stage::IdentifyFigures
        } else {
            Stage::Polish
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub stage_at_send: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplement: Option<String>,
    pub prompt_text: String,
    pub response_text: String,
    pub timestamp: String,
    pub provider_call_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ScaffoldError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("session `{0}` not found")]
    UnknownSession(String),
    #[error("`{op}` is not allowed at stage {stage}")]
    Stage { op: &'static str, stage: Stage },
    #[error("invalid diagnosis: {0}")]
    InvalidDiagnosis(String),
    #[error("stage {0} needs a non-empty supplement")]
    EmptySupplement(Stage),
    #[error("finalize needs at least one polish turn")]
    NoPolishTurn,
    #[error("chosen text is empty")]
    EmptyText,
    #[error("session is finalized and can no longer change")]
    Immutable,
    #[error("empty response from the translation model")]
    EmptyResponse,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldSession {
    pub session_id: String,
    pub case_id: String,
    pub translation_model: String,
    pub stage: Stage,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_text: Option<String>,
}

/// Prompt for one turn. Pure in its inputs so stored prompts can be replayed.
pub fn render_stage_prompt(stage: Stage, case: &SourceCase, supplement: Option<&str>) -> String {
    let supplement = supplement.map(str::trim).filter(|s| !s.is_empty());
    match stage {
        Stage::Baseline => format!(
            "Translate the following classical Chinese medical passage into English.\n\n\
             Source text:\n{}\n\n\
             Give your translation first, under the heading \"Translation:\". Then, under the heading \
             \"Reasoning:\", explain the medical rationale you understood and how it shaped your wording.",
            case.source_text.trim()
        ),
        Stage::InjectKnowledge => format!(
            "Background material from primary texts and classical commentaries:\n\n{}\n\n\
             Using this background, explain the medical theory the passage relies on, then revise your \
             translation so that theory is recoverable by an English-speaking clinician. Answer with \
             \"Translation:\" followed by \"Reasoning:\".",
            supplement.unwrap_or_default()
        ),
        Stage::IdentifyFigures => format!(
            "Imagery and figurative referents in the passage:\n\n{}\n\n\
             Explain how these figures carry the diagnostic and therapeutic logic, then revise your \
             translation so the logic is explicit rather than left inside the image. Answer with \
             \"Translation:\" followed by \"Reasoning:\".",
            supplement.unwrap_or_default()
        ),
        Stage::Polish => {
            let mut p = String::from(
                "Polish your latest translation.\n\
                 1. Preserve the source text's structural ordering while improving readability and concision.\n\
                 2. Where the text describes qi or other processes through imagery, render that meaning with dynamic verbs instead of static ones.\n",
            );
            if let Some(s) = supplement {
                p.push_str(&format!("\nAdditional notes:\n{s}\n"));
            }
            p.push_str("\nReturn the polished text under \"Translation:\".");
            p
        }
        Stage::Diagnose | Stage::Finalized => String::new(),
    }
}

impl ScaffoldSession {
    pub fn dir(sessions_dir: &Path, session_id: &str) -> PathBuf {
        sessions_dir.join(session_id)
    }

    /// Per-session transcript store (one file per turn).
    pub fn transcript_store(sessions_dir: &Path, session_id: &str) -> TranscriptStore {
        TranscriptStore::new(Self::dir(sessions_dir, session_id).join("transcripts"))
    }

    pub fn save(&self, sessions_dir: &Path) -> Result<(), ScaffoldError> {
        let dir = Self::dir(sessions_dir, &self.session_id);
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let path = dir.join("session.json");
        let mut text = serde_json::to_string_pretty(self).expect("session serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io(&path, e))
    }

    pub fn load(sessions_dir: &Path, session_id: &str) -> Result<Self, ScaffoldError> {
        let path = Self::dir(sessions_dir, session_id).join("session.json");
        if !path.exists() {
            return Err(ScaffoldError::UnknownSession(session_id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| ScaffoldError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    /// Session ids under `sessions_dir`, sorted.
    pub fn list(sessions_dir: &Path) -> Result<Vec<String>, ScaffoldError> {
        if !sessions_dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(sessions_dir)
            .map_err(|e| io(sessions_dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("session.json").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn ensure_mutable(&self) -> Result<(), ScaffoldError> {
        if self.stage == Stage::Finalized {
            Err(ScaffoldError::Immutable)
        } else {
            Ok(())
        }
    }

    fn history(&self) -> Vec<Message> {
        let mut msgs = vec![Message::system(TRANSLATOR_SYSTEM)];
        for t in &self.turns {
            msgs.push(Message::user(t.prompt_text.clone()));
            msgs.push(Message::assistant(t.response_text.clone()));
        }
        msgs
    }

    fn send(
        &mut self,
        stage: Stage,
        case: &SourceCase,
        supplement: Option<&str>,
        client: &Client,
    ) -> Result<&Turn, ScaffoldError> {
        let prompt = render_stage_prompt(stage, case, supplement);
        let mut msgs = self.history();
        msgs.push(Message::user(prompt.clone()));
        let tag = format!("scaffold/{}/turn{}", self.session_id, self.turns.len() + 1);
        let done = client.complete(&msgs, &tag)?;
        if done.text.trim().is_empty() {
            return Err(ScaffoldError::EmptyResponse);
        }
        self.turns.push(Turn {
            stage_at_send: stage,
            supplement: supplement.map(str::to_string),
            prompt_text: prompt,
            response_text: done.text,
            timestamp: done.transcript.timestamp,
            provider_call_id: done.transcript.call_id,
        });
        Ok(self.turns.last().unwrap())
    }
}

/// Creates and persists a new session at stage `Baseline` with no turns.
/// Session ids are `<case>-<n>` with `n` the next free integer.
pub fn start_session(
    corpus: &Corpus,
    case_id: &str,
    model: &str,
    sessions_dir: &Path,
) -> Result<ScaffoldSession, ScaffoldError> {
    if corpus.get(case_id).is_none() {
        return Err(ScaffoldError::UnknownCase(case_id.to_string()));
    }
    let mut n = 1;
    while ScaffoldSession::dir(sessions_dir, &format!("{case_id}-{n}")).exists() {
        n += 1;
    }
    let session = ScaffoldSession {
        session_id: format!("{case_id}-{n}"),
        case_id: case_id.to_string(),
        translation_model: model.to_string(),
        stage: Stage::Baseline,
        turns: Vec::new(),
        diagnosis: None,
        final_text: None,
    };
    session.save(sessions_dir)?;
    Ok(session)
}

/// Sends the baseline prompt and moves to `Diagnose`.
pub fn send_baseline<'s>(
    session: &'s mut ScaffoldSession,
    case: &SourceCase,
    client: &Client,
) -> Result<&'s Turn, ScaffoldError> {
    session.ensure_mutable()?;
    if session.stage != Stage::Baseline {
        return Err(ScaffoldError::Stage { op: "baseline", stage: session.stage });
    }
    session.send(Stage::Baseline, case, None, client)?;
    session.stage = Stage::Diagnose;
    Ok(session.turns.last().unwrap())
}

pub fn record_diagnosis(session: &mut ScaffoldSession, diagnosis: Diagnosis) -> Result<Stage, ScaffoldError> {
    session.ensure_mutable()?;
    if session.stage != Stage::Diagnose || !session.turns.iter().any(|t| t.stage_at_send == Stage::Baseline) {
        return Err(ScaffoldError::Stage { op: "diagnose", stage: session.stage });
    }
    diagnosis.validate()?;
    session.stage = diagnosis.route();
    session.diagnosis = Some(diagnosis);
    Ok(session.stage)
}

fn check_send_stage(session: &ScaffoldSession, op: &'static str, supplement: &str) -> Result<(), ScaffoldError> {
    session.ensure_mutable()?;
    match session.stage {
        Stage::InjectKnowledge | Stage::IdentifyFigures if supplement.trim().is_empty() => {
            Err(ScaffoldError::EmptySupplement(session.stage))
        }
        Stage::InjectKnowledge | Stage::IdentifyFigures | Stage::Polish => Ok(()),
        stage => Err(ScaffoldError::Stage { op, stage }),
    }
}

/// Sends another prompt in the current stage without moving on.
pub fn iterate<'s>(
    session: &'s mut ScaffoldSession,
    case: &SourceCase,
    supplement: &str,
    client: &Client,
) -> Result<&'s Turn, ScaffoldError> {
    check_send_stage(session, "iterate", supplement)?;
    let stage = session.stage;
    session.send(stage, case, Some(supplement).filter(|s| !s.trim().is_empty()), client)
}

/// Sends the current stage's prompt and moves to the next permitted stage.
/// `Polish` is terminal until `finalize`.
pub fn advance<'s>(
    session: &'s mut ScaffoldSession,
    case: &SourceCase,
    supplement: &str,
    client: &Client,
) -> Result<&'s Turn, ScaffoldError> {
    check_send_stage(session, "advance", supplement)?;
    let stage = session.stage;
    session.send(stage, case, Some(supplement).filter(|s| !s.trim().is_empty()), client)?;
    let figures = session
        .diagnosis
        .as_ref()
        .is_some_and(|d| d.failure_modes.contains(&FailureMode::FigureRecognitionGap));
    session.stage = match stage {
        Stage::InjectKnowledge if figures => Stage::IdentifyFigures,
        _ => Stage::Polish,
    };
    Ok(session.turns.last().unwrap())
}

/// Freezes the session and registers `chosen_text` as the case's adjusted candidate.
pub fn finalize(session: &mut ScaffoldSession, corpus: &mut Corpus, chosen_text: &str) -> Result<(), ScaffoldError> {
    session.ensure_mutable()?;
    if !session.turns.iter().any(|t| t.stage_at_send == Stage::Polish) {
        return Err(ScaffoldError::NoPolishTurn);
    }
    if chosen_text.trim().is_empty() {
        return Err(ScaffoldError::EmptyText);
    }
    let case = corpus
        .get_mut(&session.case_id)
        .ok_or_else(|| ScaffoldError::UnknownCase(session.case_id.clone()))?;
    match case.candidates.iter_mut().find(|c| c.origin == Origin::LlmAdjusted) {
        Some(c) => c.text = chosen_text.to_string(),
        None => case.candidates.push(TranslationCandidate {
            id: "final".into(),
            origin: Origin::LlmAdjusted,
            translator_label: format!("{} final", session.translation_model),
            text: chosen_text.to_string(),
            substituted_for: None,
        }),
    }
    session.final_text = Some(chosen_text.to_string());
    session.stage = Stage::Finalized;
    Ok(())
}

/// Indices of turns whose stored prompt no longer matches a fresh render.
pub fn replay_mismatches(session: &ScaffoldSession, case: &SourceCase) -> Vec<usize> {
    session
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| render_stage_prompt(t.stage_at_send, case, t.supplement.as_deref()) != t.prompt_text)
        .map(|(i, _)| i)
        .collect()
}

fn io(path: &Path, e: std::io::Error) -> ScaffoldError {
    ScaffoldError::Io { path: path.display().to_string(), message: e.to_string() }
}
