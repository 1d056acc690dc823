//! Score and interview extraction from judge responses.
//!
//! The strict path reads the last ```` ```scores ```` block (`Dimension[label]=score`
//! per line). When no such block exists the prose extractor looks for integers
//! next to dimension keywords, `T<n>=<v>` lists, or anchor phrases. Cells that are
//! missing or contradictory stay empty; nothing is imputed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dimension::Dimension;
use crate::persona::{BlockId, QuestionnaireTemplate};

pub type ScoreKey = (usize, Dimension);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedEvaluation {
    pub scores: BTreeMap<ScoreKey, u8>,
    pub blocks: BTreeMap<BlockId, String>,
    pub warnings: Vec<String>,
}

impl ParsedEvaluation {
    /// Every label `1..=k` has all five dimensions.
    pub fn is_complete(&self, k: usize) -> bool {
        (1..=k).all(|l| Dimension::ALL.iter().all(|d| self.scores.contains_key(&(l, *d))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Fenced,
    ProseFallback,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no fenced score block; use the prose fallback")]
    NoFencedBlock,
    #[error("score block line {line_no}: `{line}`: {reason}")]
    Malformed { line_no: usize, line: String, reason: String },
    #[error("score block line {line_no}: `{line}`: score {value} outside 1..=5")]
    OutOfRange { line_no: usize, line: String, value: i64 },
    #[error("score block has {found} of {expected} entries")]
    Incomplete { expected: usize, found: usize, partial: Box<ParsedEvaluation> },
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).unwrap())
}

/// Strict parse of the last fenced `scores` block.
pub fn parse_fenced(text: &str, k: usize) -> Result<ParsedEvaluation, ParseError> {
    let fences = find_fences(text);
    let Some(last) = fences.last() else {
        return Err(ParseError::NoFencedBlock);
    };
    let mut parsed = ParsedEvaluation { blocks: segment_blocks(text), ..Default::default() };
    if fences.len() > 1 {
        parsed.warnings.push(format!("{} score blocks found; the last one was used", fences.len()));
    }
    if !last.closed {
        parsed.warnings.push("score block is not closed".into());
    }

    static ENTRY: OnceLock<Regex> = OnceLock::new();
    let entry = re(&ENTRY, r"^\s*([A-Za-z][A-Za-z ]*?)\s*\[\s*(\d+)\s*\]\s*[=:]\s*(-?\d+)\s*$");
    let lines: Vec<&str> = text.lines().collect();
    for line_no in last.start..last.end {
        let line = lines[line_no];
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == "..." {
            continue;
        }
        let bad = |reason: &str| ParseError::Malformed {
            line_no: line_no + 1,
            line: line.to_string(),
            reason: reason.to_string(),
        };
        let caps = entry.captures(line).ok_or_else(|| bad("expected Dimension[label]=score"))?;
        let dim: Dimension = caps[1].parse().map_err(|_| bad("unknown dimension"))?;
        let label: usize = caps[2].parse().map_err(|_| bad("bad label"))?;
        if label == 0 || label > k {
            return Err(bad(&format!("label {label} outside 1..={k}")));
        }
        let value: i64 = caps[3].parse().map_err(|_| bad("bad score"))?;
        if !(1..=5).contains(&value) {
            return Err(ParseError::OutOfRange { line_no: line_no + 1, line: line.to_string(), value });
        }
        if parsed.scores.insert((label, dim), value as u8).is_some() {
            return Err(bad("duplicate entry"));
        }
    }
    if parsed.scores.len() != k * 5 {
        return Err(ParseError::Incomplete {
            expected: k * 5,
            found: parsed.scores.len(),
            partial: Box::new(parsed),
        });
    }
    Ok(parsed)
}

/// Best-effort extraction from free prose. Never fails; may be incomplete.
pub fn parse_prose(text: &str, k: usize) -> ParsedEvaluation {
    static LABEL_AT_START: OnceLock<Regex> = OnceLock::new();
    static PAIR: OnceLock<Regex> = OnceLock::new();
    static DIM: OnceLock<Regex> = OnceLock::new();
    static AFTER_DIM: OnceLock<Regex> = OnceLock::new();
    static AFTER_LABEL: OnceLock<Regex> = OnceLock::new();
    let label_at_start = re(
        &LABEL_AT_START,
        r"(?i)^[\s*_#>\-•]*(?:translation|version|text|t)\s*#?\s*(\d+)\b\s*[*_]*",
    );
    let pair = re(&PAIR, r"(?i)\bT(?:ranslation)?\s*#?\s*(\d+)\s*[=:]\s*(\d+)(?:\s*/\s*5)?");
    let dim_re = re(
        &DIM,
        r"(?i)\b(clarity|cognitive\s+load|confidence(?:\s+in\s+understanding)?|(?:translation\s+)?preference|(?:clinical\s+)?transferability)\b",
    );
    let after_dim = re(&AFTER_DIM, r"(?i)^\s*(?:score|rating)?\s*[:=\-–]?\s*\(?(\d+)(?:\s*(?:/|out of)\s*5)?\b");
    let after_label = re(&AFTER_LABEL, r"^\s*[:\-–=]?\s*(\d+)(?:\s*/\s*5)?\b");

    let anchors = default_anchors();
    let mut cells = Cells::new(k);
    let mut current_dim: Option<Dimension> = None;
    let mut current_label: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(block) = heading_block(raw) {
            current_dim = block.dimension();
            current_label = None;
            continue;
        }
        let (line_label, rest) = match label_at_start.captures(raw) {
            Some(c) => (c[1].parse::<usize>().ok(), &raw[c.get(0).unwrap().end()..]),
            None => (None, raw),
        };
        if line_label.is_some() {
            current_label = line_label;
        }

        let dims: Vec<(Dimension, usize)> = dim_re
            .captures_iter(raw)
            .filter_map(|c| {
                let m = c.get(1).unwrap();
                m.as_str().parse::<Dimension>().ok().map(|d| (d, m.end()))
            })
            .collect();
        let distinct: BTreeSet<Dimension> = dims.iter().map(|(d, _)| *d).collect();

        let pairs: Vec<(usize, u8)> = pair
            .captures_iter(raw)
            .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
            .collect();
        if !pairs.is_empty() {
            let dim = match distinct.len() {
                0 => current_dim,
                1 => distinct.first().copied(),
                _ => None,
            };
            match dim {
                Some(d) => {
                    for (label, v) in pairs {
                        cells.put(label, d, v, line_no);
                    }
                }
                None => cells.warn(format!("line {line_no}: score list without a single dimension")),
            }
            continue;
        }

        if !dims.is_empty() {
            for (d, end) in dims {
                let Some(c) = after_dim.captures(&raw[end..]) else { continue };
                let Some(label) = line_label.or(current_label) else {
                    cells.warn(format!("line {line_no}: {d} score without a translation number"));
                    continue;
                };
                if let Ok(v) = c[1].parse::<u8>() {
                    cells.put(label, d, v, line_no);
                }
            }
            continue;
        }

        if let (Some(label), Some(d)) = (line_label, current_dim) {
            if let Some(c) = after_label.captures(rest) {
                if let Ok(v) = c[1].parse::<u8>() {
                    cells.put(label, d, v, line_no);
                }
            } else if let Some(v) = anchor_value(rest, &anchors[&d]) {
                cells.put(label, d, v, line_no);
            }
        }
    }

    let (scores, warnings) = cells.finish();
    ParsedEvaluation { scores, blocks: segment_blocks(text), warnings }
}

/// Fenced parse, falling back to prose when no block exists. A short fenced
/// block yields its partial scores as an incomplete fenced parse.
pub fn parse_response(text: &str, k: usize) -> Result<(ParsedEvaluation, ParseMode), ParseError> {
    match parse_fenced(text, k) {
        Ok(p) => Ok((p, ParseMode::Fenced)),
        Err(ParseError::NoFencedBlock) => {
            let mut p = parse_prose(text, k);
            p.warnings.insert(0, "no fenced score block; prose fallback used".into());
            Ok((p, ParseMode::ProseFallback))
        }
        Err(ParseError::Incomplete { expected, found, partial }) => {
            let mut p = *partial;
            p.warnings.push(format!("score block has {found} of {expected} entries"));
            Ok((p, ParseMode::Fenced))
        }
        Err(e) => Err(e),
    }
}

struct Cells {
    k: usize,
    values: BTreeMap<ScoreKey, u8>,
    conflicted: BTreeSet<ScoreKey>,
    warnings: Vec<String>,
}

impl Cells {
    fn new(k: usize) -> Self {
        Self { k, values: BTreeMap::new(), conflicted: BTreeSet::new(), warnings: Vec::new() }
    }

    fn warn(&mut self, w: String) {
        self.warnings.push(w);
    }

    fn put(&mut self, label: usize, dim: Dimension, value: u8, line_no: usize) {
        if label == 0 || label > self.k {
            self.warn(format!("line {line_no}: translation {label} outside 1..={}", self.k));
            return;
        }
        if !(1..=5).contains(&value) {
            self.warn(format!("line {line_no}: {dim} score {value} outside 1..=5 ignored"));
            return;
        }
        let key = (label, dim);
        if self.conflicted.contains(&key) {
            return;
        }
        match self.values.get(&key) {
            Some(&old) if old != value => {
                self.values.remove(&key);
                self.conflicted.insert(key);
                self.warn(format!("line {line_no}: translation {label} {dim} given as {old} and {value}; left empty"));
            }
            _ => {
                self.values.insert(key, value);
            }
        }
    }

    fn finish(self) -> (BTreeMap<ScoreKey, u8>, Vec<String>) {
        (self.values, self.warnings)
    }
}

fn default_anchors() -> BTreeMap<Dimension, Vec<String>> {
    let t = QuestionnaireTemplate::default_template();
    Dimension::ALL
        .iter()
        .map(|d| (*d, t.block_for(*d).map(|b| b.anchors.clone()).unwrap_or_default()))
        .collect()
}

/// 1-based position of the unique longest anchor phrase in `text`.
fn anchor_value(text: &str, anchors: &[String]) -> Option<u8> {
    let lower = text.to_lowercase();
    let hits: Vec<(usize, usize)> = anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.is_empty() && lower.contains(&a.to_lowercase()))
        .map(|(i, a)| (i, a.len()))
        .collect();
    // Drop hits that are substrings of a longer hit ("unclear" inside "somewhat unclear").
    let kept: Vec<usize> = hits
        .iter()
        .filter(|(i, _)| {
            !hits.iter().any(|(j, _)| {
                j != i && anchors[*j].len() > anchors[*i].len() && anchors[*j].to_lowercase().contains(&anchors[*i].to_lowercase())
            })
        })
        .map(|(i, _)| *i)
        .collect();
    match kept.as_slice() {
        [one] => Some(*one as u8 + 1),
        _ => None,
    }
}

struct Fence {
    /// First content line (0-based).
    start: usize,
    /// One past the last content line.
    end: usize,
    closed: bool,
}

fn find_fences(text: &str) -> Vec<Fence> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let t = lines[i].trim();
        let is_open = t
            .strip_prefix("```")
            .map(|tag| matches!(tag.trim().to_lowercase().as_str(), "scores" | "score"))
            .unwrap_or(false);
        if is_open {
            let start = i + 1;
            let mut j = start;
            while j < lines.len() && lines[j].trim() != "```" {
                j += 1;
            }
            out.push(Fence { start, end: j, closed: j < lines.len() });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

const HEADING_KEYS: [(BlockId, &[&str]); 6] = [
    (BlockId::Understanding, &["degree of understanding", "points of confusion", "understanding and confusion"]),
    (BlockId::Restatement, &["concept restatement", "restatement", "meaning construction"]),
    (BlockId::CognitiveLoad, &["cognitive load"]),
    (BlockId::Confidence, &["confidence in understanding", "confidence"]),
    (BlockId::Preference, &["translation preference", "preference"]),
    (BlockId::Transferability, &["transferability", "clinical transferability", "transfer to clinical practice"]),
];

/// Recognises a block heading regardless of numbering style
/// (`3.`, `3)`, `Three:`, `Section three:`, `## …`, `**…**`, or none).
pub fn heading_block(line: &str) -> Option<BlockId> {
    static NUMBERING: OnceLock<Regex> = OnceLock::new();
    let numbering = re(
        &NUMBERING,
        r"(?i)^(?:(?:section|part|question|block|q)\s*)?(?:[1-6]|one|two|three|four|five|six)\s*(?:[.):\-–]\s*|\s+)",
    );
    let t = line.trim().trim_start_matches(['#', '*', '_', '>', ' ']).trim_end_matches(['*', '_', ' ']);
    if t.is_empty() || t.contains('=') || t.ends_with('.') || t.split_whitespace().count() > 12 {
        return None;
    }
    let rest = match numbering.find(t) {
        Some(m) => &t[m.end()..],
        None => t,
    };
    let rest = rest.trim().trim_start_matches(['*', '_']).trim_end_matches([':', '*', '_', ' ', '?']);
    if rest.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    let norm = rest.to_lowercase();
    for (block, keys) in HEADING_KEYS {
        for key in keys {
            if norm.starts_with(key) && norm.len() <= block.title().len() + 12 {
                return Some(block);
            }
        }
    }
    None
}

/// Interview text under each recognised heading, excluding score blocks.
pub fn segment_blocks(text: &str) -> BTreeMap<BlockId, String> {
    let fences = find_fences(text);
    let in_fence = |i: usize| fences.iter().any(|f| i + 1 >= f.start && i <= f.end);
    let mut out: BTreeMap<BlockId, Vec<&str>> = BTreeMap::new();
    let mut current: Option<BlockId> = None;
    for (i, line) in text.lines().enumerate() {
        if in_fence(i) {
            continue;
        }
        if let Some(b) = heading_block(line) {
            current = Some(b);
            out.entry(b).or_default();
            continue;
        }
        if let Some(b) = current {
            out.entry(b).or_default().push(line);
        }
    }
    out.into_iter().map(|(b, lines)| (b, lines.join("\n").trim().to_string())).collect()
}
