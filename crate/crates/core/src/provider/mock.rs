//! Offline provider. Every reply is a pure function of `(seed, sha256(request body))`.
//!
//! Judge replies score each candidate around a latent quality derived from the
//! candidate text alone, so independent mock judges agree more than chance
//! while never seeing provenance. Seeds divisible by 10 omit the fenced score
//! block and give the ratings in prose instead.

use serde_json::{json, Value};

use super::transcript::digest;
use super::transport::{HttpRequest, HttpResponse, Transport, TransportError};
use crate::dimension::Dimension;
use crate::persona::{BlockId, CANDIDATES_END, OUTPUT_CONTRACT_HEADING};
use crate::rng::{derive_seed, fnv1a64, SplitMix64};

#[derive(Debug, Clone)]
pub struct MockTransport {
    seed: u64,
}

impl MockTransport {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Transport for MockTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let body: Value =
            serde_json::from_str(&request.body).map_err(|e| TransportError(format!("mock: bad request body: {e}")))?;
        let last_user = body["messages"]
            .as_array()
            .and_then(|msgs| msgs.iter().rev().find(|m| m["role"] == "user"))
            .and_then(|m| m["content"].as_str())
            .or_else(|| {
                body["contents"]
                    .as_array()
                    .and_then(|c| c.last())
                    .and_then(|c| c["parts"][0]["text"].as_str())
            })
            .unwrap_or_default();
        let call_seed = derive_seed(self.seed, &digest(&request.body));
        let content = if last_user.contains(OUTPUT_CONTRACT_HEADING) {
            mock_judge_response(call_seed, last_user)
        } else {
            mock_translation_response(call_seed, last_user)
        };
        let reply = json!({
            "id": format!("mock-{call_seed:016x}"),
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        });
        Ok(HttpResponse { status: 200, body: reply.to_string() })
    }
}

/// `(label, text)` pairs of the `[Translation n]` sections in a rendered prompt.
fn extract_candidates(request: &str) -> Vec<(usize, String)> {
    let re = regex::Regex::new(r"(?m)^\[Translation (\d+)\]\n").unwrap();
    let end = request.find(CANDIDATES_END).unwrap_or(request.len());
    let starts: Vec<(usize, usize, usize)> = re
        .captures_iter(&request[..end])
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].parse().unwrap_or(0), m.start(), m.end())
        })
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &(label, _, body_start))| {
            let body_end = starts.get(i + 1).map_or(end, |s| s.1);
            (label, request[body_start..body_end].trim().to_string())
        })
        .collect()
}

fn latent_score(text: &str, dim: Dimension, rng: &mut SplitMix64) -> u8 {
    let quality = 1.5 + 3.0 * SplitMix64::new(fnv1a64(text)).unit();
    let offset = SplitMix64::new(fnv1a64(text) ^ fnv1a64(dim.as_str())).unit() - 0.5;
    let noise = rng.unit() * 2.0 - 1.0;
    (quality + offset + noise).round().clamp(1.0, 5.0) as u8
}

const FILLER: [&str; 8] = [
    "I read each version slowly and tried to follow the reasoning step by step.",
    "Some renderings keep the terse classical rhythm, which makes the logic harder to reconstruct.",
    "The more explanatory versions let me see how the imagery connects to physiology.",
    "Where a version relies on unexplained terms I had to guess at the intended mechanism.",
    "Dynamic verbs helped me picture how qi moves between the seasons and organs.",
    "I would want a short gloss for the transliterated terms before using them with patients.",
    "The longer versions are easier to restate in my own words.",
    "I kept mapping the passage onto regulatory feedback loops that I already know.",
];

fn heading(block: BlockId, style: u64) -> String {
    let n = block.number();
    let title = block.title();
    match style {
        0 => format!("{n}. {title}"),
        1 => format!("**{n}) {title}**"),
        2 => format!("## {title}"),
        _ => format!("Section {}: {title}", ["one", "two", "three", "four", "five", "six"][n - 1]),
    }
}

/// Questionnaire answer for a rendered evaluation prompt: six headed sections,
/// then a fenced `scores` block with `k × 5` entries (omitted when `seed % 10 == 0`).
pub fn mock_judge_response(seed: u64, request: &str) -> String {
    let candidates = extract_candidates(request);
    let mut rng = SplitMix64::new(seed);
    let style = rng.below(4);
    let prose_only = seed.is_multiple_of(10);

    let scores: Vec<(usize, Vec<(Dimension, u8)>)> = candidates
        .iter()
        .map(|(label, text)| (*label, Dimension::ALL.iter().map(|&d| (d, latent_score(text, d, &mut rng))).collect()))
        .collect();
    let score = |label: usize, dim: Dimension| -> u8 {
        scores
            .iter()
            .find(|(l, _)| *l == label)
            .and_then(|(_, s)| s.iter().find(|(d, _)| *d == dim))
            .map_or(3, |(_, v)| *v)
    };

    let mut out = String::from("I have read the translations carefully while staying in my assigned role.\n\n");
    for block in BlockId::ALL {
        out.push_str(&heading(block, style));
        out.push_str("\n\n");
        for _ in 0..2 {
            out.push_str(FILLER[rng.below(FILLER.len() as u64) as usize]);
            out.push(' ');
        }
        out.push('\n');
        if prose_only {
            if let Some(dim) = block.dimension() {
                out.push('\n');
                if dim == Dimension::Clarity {
                    for (label, _) in &candidates {
                        out.push_str(&format!("Translation {label}: {} {}/5\n", dim.display_name(), score(*label, dim)));
                    }
                } else {
                    let cells: Vec<String> =
                        candidates.iter().map(|(l, _)| format!("T{l}={}", score(*l, dim))).collect();
                    out.push_str(&format!("{}: {}\n", dim.display_name(), cells.join(", ")));
                }
            }
        }
        out.push('\n');
    }
    if !prose_only {
        out.push_str("```scores\n");
        for (label, _) in &candidates {
            for dim in Dimension::ALL {
                out.push_str(&format!("{}[{label}]={}\n", dim.as_str(), score(*label, dim)));
            }
        }
        out.push_str("```\n");
    }
    out
}

/// Reply to a non-evaluation prompt (scaffolding turns): a draft rendering plus reasoning.
pub fn mock_translation_response(seed: u64, request: &str) -> String {
    let mut rng = SplitMix64::new(seed);
    let first = request.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    let words = first.split_whitespace().count();
    format!(
        "Translation:\nA draft rendering of the passage (mock draft {:08x}).\n\nReasoning:\nThe prompt opens with \"{}\" ({} words). {} {}\n",
        rng.next_u64() as u32,
        first.chars().take(60).collect::<String>(),
        words,
        FILLER[rng.below(FILLER.len() as u64) as usize],
        FILLER[rng.below(FILLER.len() as u64) as usize],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(k: usize) -> String {
        let mut s = String::from("preamble\n\n");
        for i in 1..=k {
            s.push_str(&format!("[Translation {i}]\nText number {i} with some words.\n\n"));
        }
        s.push_str(CANDIDATES_END);
        s.push_str("\n\n");
        s.push_str(OUTPUT_CONTRACT_HEADING);
        s
    }

    #[test]
    fn extracts_candidates() {
        let c = extract_candidates(&prompt(3));
        assert_eq!(c.len(), 3);
        assert_eq!(c[2], (3, "Text number 3 with some words.".to_string()));
    }

    #[test]
    fn seed7_k4_has_twenty_scores_in_range() {
        let text = mock_judge_response(7, &prompt(4));
        let block = text.split("```scores\n").nth(1).unwrap();
        let lines: Vec<&str> = block.lines().take_while(|l| *l != "```").collect();
        assert_eq!(lines.len(), 20);
        for l in lines {
            let v: u8 = l.rsplit('=').next().unwrap().parse().unwrap();
            assert!((1..=5).contains(&v));
        }
        assert_eq!(text, mock_judge_response(7, &prompt(4)));
    }

    #[test]
    fn every_tenth_seed_omits_block() {
        let fallback: Vec<u64> = (1..=100).filter(|s| !mock_judge_response(*s, &prompt(4)).contains("```scores")).collect();
        assert_eq!(fallback, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
    }
}
