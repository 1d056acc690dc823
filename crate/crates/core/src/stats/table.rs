use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::dimension::Dimension;

pub const CSV_HEADER: [&str; 7] = ["case", "role", "model", "candidate", "dimension", "score", "repeat"];

/// One unblinded rating. `candidate` is the comparison slot id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(rename = "case")]
    pub case_id: String,
    #[serde(rename = "role")]
    pub role_id: String,
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(rename = "candidate")]
    pub candidate_id: String,
    pub dimension: Dimension,
    pub score: u8,
    pub repeat: u32,
}

type RowKey = (String, String, String, String, Dimension, u32);

impl ScoreRow {
    fn key(&self) -> RowKey {
        (
            self.case_id.clone(),
            self.role_id.clone(),
            self.model_id.clone(),
            self.candidate_id.clone(),
            self.dimension,
            self.repeat,
        )
    }
}

/// Long-format fact table; rows are kept sorted by key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScoreTable {
    rows: BTreeMap<RowKey, ScoreRow>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: ScoreRow) -> Result<(), StatsError> {
        if !(1..=5).contains(&row.score) {
            return Err(StatsError::Table(format!("score {} outside 1..=5", row.score)));
        }
        let key = row.key();
        if self.rows.contains_key(&key) {
            return Err(StatsError::Table(format!(
                "duplicate row {}/{}/{}/{}/{}/{}",
                key.0, key.1, key.2, key.3, key.4, key.5
            )));
        }
        self.rows.insert(key, row);
        Ok(())
    }

    pub fn from_rows(rows: impl IntoIterator<Item = ScoreRow>) -> Result<Self, StatsError> {
        let mut t = Self::new();
        for r in rows {
            t.insert(r)?;
        }
        Ok(t)
    }

    pub fn rows(&self) -> impl Iterator<Item = &ScoreRow> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn models(&self) -> BTreeSet<String> {
        self.rows().map(|r| r.model_id.clone()).collect()
    }

    pub fn roles(&self) -> BTreeSet<String> {
        self.rows().map(|r| r.role_id.clone()).collect()
    }

    pub fn cases(&self) -> BTreeSet<String> {
        self.rows().map(|r| r.case_id.clone()).collect()
    }

    /// Numeric view used by the analyses. `Average` collapses repeats to their
    /// mean under repeat index 0; `Separate` keeps each repeat as its own cell.
    pub fn observations(&self, policy: RepeatPolicy) -> Vec<Observation> {
        match policy {
            RepeatPolicy::Separate => self
                .rows()
                .map(|r| Observation {
                    case_id: r.case_id.clone(),
                    role_id: r.role_id.clone(),
                    model_id: r.model_id.clone(),
                    candidate_id: r.candidate_id.clone(),
                    dimension: r.dimension,
                    repeat: r.repeat,
                    value: r.score as f64,
                })
                .collect(),
            RepeatPolicy::Average => {
                let mut groups: BTreeMap<(String, String, String, String, Dimension), (f64, usize)> = BTreeMap::new();
                for r in self.rows() {
                    let e = groups
                        .entry((r.case_id.clone(), r.role_id.clone(), r.model_id.clone(), r.candidate_id.clone(), r.dimension))
                        .or_default();
                    e.0 += r.score as f64;
                    e.1 += 1;
                }
                groups
                    .into_iter()
                    .map(|((case_id, role_id, model_id, candidate_id, dimension), (sum, n))| Observation {
                        case_id,
                        role_id,
                        model_id,
                        candidate_id,
                        dimension,
                        repeat: 0,
                        value: sum / n as f64,
                    })
                    .collect()
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in self.rows() {
            w.write_record([
                r.case_id.as_str(),
                &r.role_id,
                &r.model_id,
                &r.candidate_id,
                r.dimension.as_str(),
                &r.score.to_string(),
                &r.repeat.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self, StatsError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| StatsError::Table(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(StatsError::Table(format!("unexpected header {:?}", headers)));
        }
        let mut t = Self::new();
        for rec in rdr.deserialize::<ScoreRow>() {
            t.insert(rec.map_err(|e| StatsError::Table(e.to_string()))?)?;
        }
        Ok(t)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), StatsError> {
        std::fs::write(path, self.to_csv()).map_err(|e| StatsError::Table(format!("{}: {e}", path.display())))
    }

    pub fn load_csv(path: &Path) -> Result<Self, StatsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| StatsError::Table(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatPolicy {
    #[default]
    Average,
    Separate,
}

/// A (possibly averaged) score with the full cell identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub case_id: String,
    pub role_id: String,
    pub model_id: String,
    pub candidate_id: String,
    pub dimension: Dimension,
    pub repeat: u32,
    pub value: f64,
}
