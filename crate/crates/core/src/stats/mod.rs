//! Rank-based statistics: tied ranks, Spearman, Kendall's W, Friedman,
//! Wilcoxon signed-rank, Bonferroni, and the agreement and version-difference
//! analyses over a long-format score table.

mod analysis;
mod concordance;
mod rank;
pub mod special;
mod table;
mod wilcoxon;

use serde::{Deserialize, Serialize};

pub use analysis::{
    cross_model_agreement, cross_model_agreement_obs, cross_role_agreement, cross_role_agreement_obs,
    cross_role_object_means, version_difference_battery, version_difference_battery_obs, Battery, BatteryOptions,
    BlockingScheme, CrossModel, PairwiseResult,
};
pub use concordance::{friedman, friedman_with, kendall_w, FriedmanPValue};
pub use rank::{average_ranks, pearson, spearman_no_ties, spearman_rho, tie_term};
pub use table::{Observation, RepeatPolicy, ScoreRow, ScoreTable, CSV_HEADER};
pub use wilcoxon::{exact_tail_count, wilcoxon_signed_rank, WilcoxonMode, WilcoxonOptions, ZeroMethod};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for a constant input vector")]
    ConstantInput,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("all paired differences are zero; the test carries no information")]
    AllZeroDifferences,
    #[error("unpaired cells: {}", .0.join(", "))]
    UnpairedCells(Vec<String>),
    #[error("missing objects: {}", .0.join(", "))]
    MissingObjects(Vec<String>),
    #[error("no complete blocks ({excluded} incomplete)")]
    NoCompleteBlocks { excluded: usize },
    #[error("family size {family} is smaller than the {results} results to correct")]
    FamilyTooSmall { family: usize, results: usize },
    #[error("score table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub method: String,
    pub family_size: usize,
    pub adjusted_p: f64,
}

/// Outcome of one hypothesis test or agreement coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: String,
    /// ρ, W, χ², or T⁺ depending on the test; see `statistic_name`.
    pub statistic_name: String,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// F statistic and its denominator df, when the p-value comes from an F tail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_objects: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_judges: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_treatments: Option<usize>,
    pub p_value: f64,
    pub tie_correction_applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
}

impl TestResult {
    pub(crate) fn new(test_name: &str, statistic_name: &str, statistic: f64, p_value: f64) -> Self {
        Self {
            test_name: test_name.into(),
            statistic_name: statistic_name.into(),
            statistic,
            chi2: None,
            t_minus: None,
            z: None,
            df: None,
            f: None,
            df2: None,
            n_objects: None,
            n_judges: None,
            n_treatments: None,
            p_value: p_value.clamp(0.0, 1.0),
            tie_correction_applied: false,
            method: None,
            correction: None,
        }
    }

    /// Corrected p-value if a correction was applied, else the raw one.
    pub fn effective_p(&self) -> f64 {
        self.correction.as_ref().map_or(self.p_value, |c| c.adjusted_p)
    }

    /// `key=value` pairs of every populated field, in a fixed order.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("test".to_string(), self.test_name.clone()),
            (self.statistic_name.clone(), fmt_f64(self.statistic)),
        ];
        let mut opt = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        if self.statistic_name != "chi2" {
            opt("chi2", self.chi2.map(fmt_f64));
        }
        opt("T-", self.t_minus.map(fmt_f64));
        opt("z", self.z.map(fmt_f64));
        opt("df", self.df.map(fmt_f64));
        opt("F", self.f.map(fmt_f64));
        opt("df2", self.df2.map(fmt_f64));
        opt("n", self.n_objects.map(|v| v.to_string()));
        opt("m", self.n_judges.map(|v| v.to_string()));
        opt("k", self.n_treatments.map(|v| v.to_string()));
        opt("method", self.method.clone());
        out.push(("p".into(), fmt_f64(self.p_value)));
        out.push(("tie_correction".into(), self.tie_correction_applied.to_string()));
        if let Some(c) = &self.correction {
            out.push(("correction".into(), c.method.clone()));
            out.push(("family".into(), c.family_size.to_string()));
            out.push(("p_adj".into(), fmt_f64(c.adjusted_p)));
        }
        out
    }
}

/// Shortest round-trip representation, so exported numbers parse back exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Multiplies each raw p by `family_size`, clamped at 1. Raw values are kept.
pub fn bonferroni(results: &[TestResult], family_size: usize) -> Result<Vec<TestResult>, StatsError> {
    if family_size < results.len() || family_size == 0 {
        return Err(StatsError::FamilyTooSmall { family: family_size, results: results.len() });
    }
    Ok(results
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.correction = Some(Correction {
                method: "bonferroni".into(),
                family_size,
                adjusted_p: (r.p_value * family_size as f64).min(1.0),
            });
            r
        })
        .collect())
}
