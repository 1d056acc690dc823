//! The five rating dimensions shared by the questionnaire, parser, and statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A cognitive rating dimension. All five are scored 1..5 with higher = better;
/// cognitive load is anchored from "difficult" to "very easy", so it needs no reversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Clarity,
    CognitiveLoad,
    Confidence,
    Preference,
    Transferability,
}

impl Dimension {
    /// Fixed presentation order used by every report.
    pub const ALL: [Dimension; 5] = [
        Dimension::Clarity,
        Dimension::CognitiveLoad,
        Dimension::Confidence,
        Dimension::Preference,
        Dimension::Transferability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Clarity => "Clarity",
            Dimension::CognitiveLoad => "CognitiveLoad",
            Dimension::Confidence => "Confidence",
            Dimension::Preference => "Preference",
            Dimension::Transferability => "Transferability",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Dimension::Clarity => "Clarity",
            Dimension::CognitiveLoad => "Cognitive Load",
            Dimension::Confidence => "Confidence in Understanding",
            Dimension::Preference => "Preference",
            Dimension::Transferability => "Clinical Transferability",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown dimension `{0}`")]
pub struct UnknownDimension(pub String);

impl FromStr for Dimension {
    type Err = UnknownDimension;

    /// Accepts the canonical id as well as spaced / lower-case spellings
    /// ("cognitive load", "Confidence in Understanding", "clinical transferability").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let dim = match key.as_str() {
            "clarity" => Dimension::Clarity,
            "cognitiveload" | "load" => Dimension::CognitiveLoad,
            "confidence" | "confidenceinunderstanding" => Dimension::Confidence,
            "preference" | "translationpreference" => Dimension::Preference,
            "transferability" | "clinicaltransferability" => Dimension::Transferability,
            _ => return Err(UnknownDimension(s.to_string())),
        };
        Ok(dim)
    }
}
