//! The bundled four-case demonstration corpus, reader roles, and concept lines.

use std::collections::BTreeMap;

use crate::corpus::{Corpus, SourceCase};
use crate::persona::{QuestionnaireTemplate, ReaderRole};
use crate::scaffold::FailureMode;

pub const CASE_JSON: [(&str, &str); 4] = [
    ("case1.json", include_str!("../assets/cases/case1.json")),
    ("case2.json", include_str!("../assets/cases/case2.json")),
    ("case3.json", include_str!("../assets/cases/case3.json")),
    ("case4.json", include_str!("../assets/cases/case4.json")),
];

pub const PERSONA_TEXT: [(&str, &str); 3] = [
    ("R1", include_str!("../assets/personas/R1.txt")),
    ("R2", include_str!("../assets/personas/R2.txt")),
    ("R3", include_str!("../assets/personas/R3.txt")),
];

pub const FOCUS_JSON: &str = include_str!("../assets/personas/focus.json");
pub const CONCEPTS_JSON: &str = include_str!("../assets/templates/concepts.json");

/// Judge models of the demo grid.
pub const JUDGES: [&str; 2] = ["gpt", "gemini"];

/// Provider used for the scaffolding turns of the demo.
pub const TRANSLATOR: &str = "deepseek";

/// Scripted operator input for one demo scaffolding session.
#[derive(Debug, Clone, Copy)]
pub struct ScaffoldScript {
    pub case_id: &'static str,
    pub failure_modes: &'static [FailureMode],
    pub notes: &'static str,
    pub knowledge: Option<&'static str>,
    pub figures: Option<&'static str>,
    pub polish: &'static str,
}

pub const SCAFFOLD_SCRIPTS: [ScaffoldScript; 4] = [
    ScaffoldScript {
        case_id: "case1",
        failure_modes: &[FailureMode::KnowledgeGap, FailureMode::FigureRecognitionGap],
        notes: "Baseline renders the term word for word and loses why the wind is harmful.",
        knowledge: Some(
            "Seasonal orientation comes from the handle of the Big Dipper and the palace where Taiyi resides. \
             A wind arriving from the palace opposite Taiyi's current residence runs against the season.",
        ),
        figures: Some(
            "The 'void' in the term names a wind without the season's proper orientation. \
             For clinical readers it is a contra-seasonal pathogenic wind.",
        ),
        polish: "",
    },
    ScaffoldScript {
        case_id: "case2",
        failure_modes: &[FailureMode::FigureRecognitionGap, FailureMode::LinguisticGap],
        notes: "Read literally, seasons overcoming one another means nothing to an English reader.",
        knowledge: None,
        figures: Some(
            "Each season stands for a climate and an organ system; the overcoming describes how one organ's \
             function restrains another's across the year.",
        ),
        polish: "Prefer verbs of movement for qi: ascends, descends, fuses, restrains.",
    },
    ScaffoldScript {
        case_id: "case3",
        failure_modes: &[FailureMode::FigureRecognitionGap],
        notes: "Root, branch, and mediating qi are transliterated but not explained.",
        knowledge: None,
        figures: Some(
            "Work through a clinically oriented parallel passage on root, branch, and mediating qi of the \
             meridians, then apply the same reasoning here.",
        ),
        polish: "",
    },
    ScaffoldScript {
        case_id: "case4",
        failure_modes: &[FailureMode::KnowledgeGap, FailureMode::FigureRecognitionGap],
        notes: "The colour term and its annual-motion reading are missing.",
        knowledge: Some(
            "Identify the colour named by xuan, its Five-Phase correspondence, and read the line through \
             five-motion six-qi theory.",
        ),
        figures: Some("Fire refers to a seasonal function; dixuan refers to an annual motion dominated by Water."),
        polish: "",
    },
];

pub fn cases() -> Vec<SourceCase> {
    CASE_JSON
        .iter()
        .map(|(name, text)| serde_json::from_str(text).unwrap_or_else(|e| panic!("bundled {name}: {e}")))
        .collect()
}

pub fn corpus() -> Corpus {
    let mut corpus = Corpus::new();
    for case in cases() {
        corpus.add_case(case).expect("bundled cases have distinct ids");
    }
    corpus
}

pub fn roles() -> Vec<ReaderRole> {
    let focus: BTreeMap<String, String> = serde_json::from_str(FOCUS_JSON).expect("bundled focus.json");
    PERSONA_TEXT
        .iter()
        .map(|(id, text)| ReaderRole {
            id: id.to_string(),
            persona_text: text.to_string(),
            evaluation_focus: focus.get(*id).cloned().unwrap_or_default(),
        })
        .collect()
}

pub fn concepts() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(CONCEPTS_JSON).expect("bundled concepts.json")
}

pub fn template() -> QuestionnaireTemplate {
    QuestionnaireTemplate::default_template()
}
