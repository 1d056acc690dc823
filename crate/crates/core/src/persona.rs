//! Reader roles and deterministic rendering of the evaluation questionnaire.
//!
//! Templates are plain text with `{{slot}}` placeholders. Numbered lines
//! `1. ` .. `6. ` open question blocks; a line `@rating <Dimension>` directly
//! under a heading marks the block as rating-bearing and is dropped from the
//! rendered text. Anchor sets are read from `(1 2 3 4 5: a – b – c – d – e)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blinding::BlindPlan;
use crate::corpus::{Corpus, Origin, SourceCase};
use crate::dimension::Dimension;

pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/templates/questionnaire.default");

/// Heading of the appended machine-readable section; the mock provider keys on it.
pub const OUTPUT_CONTRACT_HEADING: &str = "Machine-readable scores";

pub const CANDIDATES_END: &str = "[End of translations]";

const SYSTEM_TEXT: &str = "You are taking part in a reading study of English translations. \
Stay in the assigned reader role for the whole answer and answer every numbered section.";

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("template: {0}")]
    Template(String),
    #[error("plan for `{plan_case}` does not belong to case `{case}`")]
    PlanMismatch { plan_case: String, case: String },
    #[error("role `{0}` has an empty persona")]
    EmptyPersona(String),
    #[error("duplicate role id `{0}`")]
    DuplicateRole(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("blinding leak: rendered prompt contains provenance string `{0}`")]
    Leak(String),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderRole {
    pub id: String,
    pub persona_text: String,
    pub evaluation_focus: String,
}

/// The six question blocks, in questionnaire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockId {
    Understanding,
    Restatement,
    CognitiveLoad,
    Confidence,
    Preference,
    Transferability,
}

impl BlockId {
    pub const ALL: [BlockId; 6] = [
        BlockId::Understanding,
        BlockId::Restatement,
        BlockId::CognitiveLoad,
        BlockId::Confidence,
        BlockId::Preference,
        BlockId::Transferability,
    ];

    pub fn number(self) -> usize {
        BlockId::ALL.iter().position(|b| *b == self).unwrap() + 1
    }

    /// Heading text of the block in the default questionnaire.
    pub fn title(self) -> &'static str {
        match self {
            BlockId::Understanding => "Degree of understanding and points of confusion",
            BlockId::Restatement => "Concept restatement and meaning construction",
            BlockId::CognitiveLoad => "Cognitive load",
            BlockId::Confidence => "Confidence in understanding",
            BlockId::Preference => "Translation preference",
            BlockId::Transferability => "Transferability of theory to clinical practice",
        }
    }

    /// Dimension rated in this block under the default questionnaire.
    pub fn dimension(self) -> Option<Dimension> {
        match self {
            BlockId::Understanding => Some(Dimension::Clarity),
            BlockId::Restatement => None,
            BlockId::CognitiveLoad => Some(Dimension::CognitiveLoad),
            BlockId::Confidence => Some(Dimension::Confidence),
            BlockId::Preference => Some(Dimension::Preference),
            BlockId::Transferability => Some(Dimension::Transferability),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockId::Understanding => "understanding",
            BlockId::Restatement => "restatement",
            BlockId::CognitiveLoad => "cognitive_load",
            BlockId::Confidence => "confidence",
            BlockId::Preference => "preference",
            BlockId::Transferability => "transferability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionBlock {
    pub id: BlockId,
    pub heading: String,
    /// Body lines with the directive removed; may hold placeholders.
    pub body: String,
    pub dimension: Option<Dimension>,
    pub anchors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionnaireTemplate {
    source: String,
    preamble: String,
    pub blocks: Vec<QuestionBlock>,
    trailer: String,
}

impl QuestionnaireTemplate {
    pub fn default_template() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }

    pub fn parse(source: &str) -> Result<Self, PersonaError> {
        let heading_re = regex::Regex::new(r"^([1-9])\.\s+\S").unwrap();
        let mut preamble = Vec::new();
        let mut trailer = Vec::new();
        let mut raw_blocks: Vec<(String, Vec<&str>)> = Vec::new();
        let mut in_trailer = false;
        for line in source.lines() {
            if line.contains("{{output_contract}}") {
                in_trailer = true;
            }
            if in_trailer {
                trailer.push(line);
            } else if heading_re.is_match(line) {
                raw_blocks.push((line.to_string(), Vec::new()));
            } else if let Some((_, body)) = raw_blocks.last_mut() {
                body.push(line);
            } else {
                preamble.push(line);
            }
        }
        if raw_blocks.len() != BlockId::ALL.len() {
            return Err(PersonaError::Template(format!(
                "expected {} question blocks, found {}",
                BlockId::ALL.len(),
                raw_blocks.len()
            )));
        }

        let anchor_re = regex::Regex::new(r"\(1 2 3 4 5: ([^)]*)\)").unwrap();
        let mut blocks = Vec::new();
        for ((heading, lines), id) in raw_blocks.into_iter().zip(BlockId::ALL) {
            let mut dimension = None;
            let mut kept = Vec::new();
            for line in lines {
                if let Some(rest) = line.strip_prefix("@rating") {
                    let dim = rest
                        .trim()
                        .parse::<Dimension>()
                        .map_err(|e| PersonaError::Template(e.to_string()))?;
                    if dimension.replace(dim).is_some() {
                        return Err(PersonaError::Template(format!("block `{heading}` declares two ratings")));
                    }
                } else {
                    kept.push(line);
                }
            }
            let body = kept.join("\n");
            let anchor_sets: Vec<Vec<String>> = anchor_re
                .captures_iter(&body)
                .map(|c| c[1].split(" – ").map(|s| s.trim().to_string()).collect())
                .collect();
            let anchors = match (dimension, anchor_sets.as_slice()) {
                (None, _) => Vec::new(),
                (Some(_), [one]) if one.len() == 5 => one.clone(),
                (Some(_), [one]) => {
                    return Err(PersonaError::Template(format!(
                        "block `{heading}` anchor set has {} points, expected 5",
                        one.len()
                    )))
                }
                (Some(_), sets) => {
                    return Err(PersonaError::Template(format!(
                        "rating block `{heading}` must declare exactly one anchor set, found {}",
                        sets.len()
                    )))
                }
            };
            blocks.push(QuestionBlock { id, heading, body, dimension, anchors });
        }

        let template = Self {
            source: source.to_string(),
            preamble: preamble.join("\n"),
            blocks,
            trailer: trailer.join("\n"),
        };
        template.validate()?;
        Ok(template)
    }

    /// Rating-bearing blocks must be in bijection with the five dimensions.
    pub fn validate(&self) -> Result<(), PersonaError> {
        let dims: Vec<Dimension> = self.dimensions();
        let unique: BTreeSet<Dimension> = dims.iter().copied().collect();
        let expected: BTreeSet<Dimension> = Dimension::ALL.into_iter().collect();
        if dims.len() != unique.len() || unique != expected {
            return Err(PersonaError::Template(format!(
                "rating blocks cover {:?}; all five dimensions are required exactly once",
                dims
            )));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        self.blocks.iter().filter_map(|b| b.dimension).collect()
    }

    pub fn block_for(&self, dimension: Dimension) -> Option<&QuestionBlock> {
        self.blocks.iter().find(|b| b.dimension == Some(dimension))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Renders the six blocks only (headings + bodies), for golden comparison.
    pub fn render_questionnaire(&self, k: usize, concepts: &[String]) -> String {
        let slots = Slots { k, concepts, persona: "", candidates: "", contract: "" };
        self.blocks
            .iter()
            .map(|b| slots.fill(&format!("{}\n{}", b.heading, b.body)))
            .collect::<Vec<_>>()
            .join("\n")
            .trim_end()
            .to_string()
    }
}

struct Slots<'a> {
    k: usize,
    concepts: &'a [String],
    persona: &'a str,
    candidates: &'a str,
    contract: &'a str,
}

impl Slots<'_> {
    fn fill(&self, text: &str) -> String {
        let concepts: Vec<String> = self.concepts.iter().map(|c| format!("- {c}")).collect();
        text.replace("{{k_words}}", &number_word(self.k))
            .replace("{{concepts}}", &concepts.join("\n"))
            .replace("{{persona}}", self.persona.trim_end())
            .replace("{{candidates}}", self.candidates)
            .replace("{{output_contract}}", self.contract)
    }
}

fn number_word(k: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(k).map_or_else(|| k.to_string(), |w| (*w).to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Show the original-language passage to the reader.
    pub include_source: bool,
    /// Show the case's context note.
    pub include_context: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub render_hash: String,
}

/// Output contract appended after the questionnaire.
pub fn output_contract(k: usize) -> String {
    let mut s = String::new();
    s.push_str(OUTPUT_CONTRACT_HEADING);
    s.push_str("\n\nAnswer each numbered section above under its own numbered heading. ");
    s.push_str("Then end your reply with a fenced block tagged `scores` holding one line per translation and dimension, ");
    s.push_str("written as Dimension[translation]=score. Use exactly the dimension names ");
    s.push_str(&Dimension::ALL.map(Dimension::as_str).join(", "));
    s.push_str(&format!(
        ", translation numbers 1 to {k}, and whole-number scores from 1 to 5 ({} lines in total). \
Cognitive load is scored from 1 (difficult) to 5 (very easy). For example:\n\n```scores\n",
        k * 5
    ));
    for d in Dimension::ALL {
        s.push_str(&format!("{}[1]=3\n", d.as_str()));
    }
    s.push_str("...\n```");
    s
}

pub fn render_evaluation_prompt(
    role: &ReaderRole,
    case: &SourceCase,
    plan: &BlindPlan,
    template: &QuestionnaireTemplate,
    concepts: &[String],
    options: &RenderOptions,
    leaks: &LeakScanner,
) -> Result<RenderedPrompt, PersonaError> {
    if !plan.matches(case) {
        return Err(PersonaError::PlanMismatch {
            plan_case: plan.case_id.clone(),
            case: case.id.clone(),
        });
    }
    if role.persona_text.trim().is_empty() {
        return Err(PersonaError::EmptyPersona(role.id.clone()));
    }
    template.validate()?;

    let k = plan.k();
    let mut candidates = String::new();
    if options.include_context && !case.context_note.trim().is_empty() {
        candidates.push_str(&format!("Context: {}\n\n", case.context_note.trim()));
    }
    if options.include_source {
        candidates.push_str(&format!("Original passage:\n{}\n\n", case.source_text.trim()));
    }
    for (i, cand_id) in plan.permutation.iter().enumerate() {
        let cand = case.candidate(cand_id).expect("plan matches case");
        candidates.push_str(&format!("[Translation {}]\n{}\n\n", i + 1, cand.text.trim()));
    }
    candidates.push_str(CANDIDATES_END);

    let contract = output_contract(k);
    let slots = Slots {
        k,
        concepts,
        persona: &role.persona_text,
        candidates: &candidates,
        contract: &contract,
    };
    let mut parts = vec![slots.fill(&template.preamble)];
    for b in &template.blocks {
        parts.push(slots.fill(&format!("{}\n{}", b.heading, b.body)));
    }
    parts.push(slots.fill(&template.trailer));
    let mut user_text = parts.join("\n");
    if !user_text.ends_with('\n') {
        user_text.push('\n');
    }

    leaks.check(SYSTEM_TEXT)?;
    leaks.check(&user_text)?;

    let render_hash = {
        let mut h = Sha256::new();
        let inputs = serde_json::json!({
            "role": role,
            "case": case,
            "permutation": plan.permutation,
            "template": template.source(),
            "concepts": concepts,
            "options": options,
        });
        h.update(inputs.to_string().as_bytes());
        hex::encode(h.finalize())
    };

    Ok(RenderedPrompt {
        system_text: SYSTEM_TEXT.to_string(),
        user_text,
        render_hash,
    })
}

/// Scans judge-facing text for strings that would reveal candidate provenance.
#[derive(Debug, Clone, Default)]
pub struct LeakScanner {
    needles: Vec<String>,
}

impl LeakScanner {
    pub fn for_corpus(corpus: &Corpus) -> Self {
        let mut needles: BTreeSet<String> = [Origin::LlmBaseline, Origin::LlmAdjusted]
            .iter()
            .map(|o| o.as_str().to_string())
            .collect();
        for phrase in ["LLM baseline", "LLM final", "prompt-adjusted"] {
            needles.insert(phrase.to_string());
        }
        for case in corpus.cases() {
            for cand in &case.candidates {
                let label = cand.translator_label.trim();
                if label.chars().count() >= 3 {
                    needles.insert(label.to_string());
                }
            }
        }
        Self { needles: needles.into_iter().collect() }
    }

    pub fn needles(&self) -> &[String] {
        &self.needles
    }

    /// All provenance strings found in `text` (case-insensitive).
    pub fn scan(&self, text: &str) -> Vec<String> {
        let hay = text.to_lowercase();
        self.needles
            .iter()
            .filter(|n| hay.contains(&n.to_lowercase()))
            .cloned()
            .collect()
    }

    pub fn check(&self, text: &str) -> Result<(), PersonaError> {
        match self.scan(text).into_iter().next() {
            Some(hit) => Err(PersonaError::Leak(hit)),
            None => Ok(()),
        }
    }
}

/// Loads `personas/<id>.txt` plus the optional `personas/focus.json` map.
pub fn load_roles(dir: &Path, ids: &[String]) -> Result<Vec<ReaderRole>, PersonaError> {
    let focus_path = dir.join("focus.json");
    let focus: BTreeMap<String, String> = if focus_path.exists() {
        let text = fs::read_to_string(&focus_path).map_err(|e| io(&focus_path, e))?;
        serde_json::from_str(&text).map_err(|e| PersonaError::Io {
            path: focus_path.display().to_string(),
            message: e.to_string(),
        })?
    } else {
        BTreeMap::new()
    };
    let mut seen = BTreeSet::new();
    let mut roles = Vec::new();
    for id in ids {
        if !seen.insert(id.clone()) {
            return Err(PersonaError::DuplicateRole(id.clone()));
        }
        let path = dir.join(format!("{id}.txt"));
        if !path.exists() {
            return Err(PersonaError::UnknownRole(id.clone()));
        }
        let persona_text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        if persona_text.trim().is_empty() {
            return Err(PersonaError::EmptyPersona(id.clone()));
        }
        roles.push(ReaderRole {
            id: id.clone(),
            persona_text,
            evaluation_focus: focus.get(id).cloned().unwrap_or_default(),
        });
    }
    Ok(roles)
}

/// Reads `concepts.json` (case id → concept lines) if present.
pub fn load_concepts(path: &Path) -> Result<BTreeMap<String, Vec<String>>, PersonaError> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PersonaError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Concept lines for `case`, falling back to its title.
pub fn concepts_for(map: &BTreeMap<String, Vec<String>>, case: &SourceCase) -> Vec<String> {
    map.get(&case.id)
        .cloned()
        .unwrap_or_else(|| vec![format!("the main ideas of the passage \"{}\"", case.title)])
}

fn io(path: &Path, e: std::io::Error) -> PersonaError {
    PersonaError::Io { path: path.display().to_string(), message: e.to_string() }
}
