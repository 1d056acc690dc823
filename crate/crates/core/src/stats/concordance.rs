use super::rank::{average_ranks, tie_term};
use serde::{Deserialize, Serialize};

use super::special::{chi2_sf, f_sf};
use super::{StatsError, TestResult};

/// Tail used for the Friedman p-value. The χ² statistic is reported either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FriedmanPValue {
    /// F = (n−1)χ² / (n(k−1) − χ²) on (k−1, (n−1)(k−1)) df.
    #[default]
    ImanDavenport,
    /// χ² on k−1 df.
    ChiSquare,
}

impl FriedmanPValue {
    pub fn as_str(self) -> &'static str {
        match self {
            FriedmanPValue::ImanDavenport => "iman-davenport",
            FriedmanPValue::ChiSquare => "chi-square",
        }
    }
}

impl std::str::FromStr for FriedmanPValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [FriedmanPValue::ImanDavenport, FriedmanPValue::ChiSquare]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown friedman p-value method `{s}`"))
    }
}

/// Kendall's coefficient of concordance for `m` judges (rows) over `n` objects
/// (columns), with the tie-corrected denominator and χ² = m(n−1)W on n−1 df.
pub fn kendall_w(ratings: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let m = ratings.len();
    if m < 2 {
        return Err(StatsError::Insufficient(format!("kendall W needs m >= 2 judges, got {m}")));
    }
    let n = ratings[0].len();
    if n < 2 {
        return Err(StatsError::Insufficient(format!("kendall W needs n >= 2 objects, got {n}")));
    }
    if let Some(bad) = ratings.iter().find(|r| r.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    let mut rank_sums = vec![0.0; n];
    let mut ties = 0.0;
    for row in ratings {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
        ties += tie_term(row);
    }
    let (mf, nf) = (m as f64, n as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let numer = 12.0 * sum_sq - 3.0 * mf * mf * nf * (nf + 1.0) * (nf + 1.0);
    let denom = mf * mf * nf * (nf * nf - 1.0) - mf * ties;
    if denom <= 0.0 {
        return Err(StatsError::Degenerate("every judge tied all objects".into()));
    }
    let w = (numer / denom).clamp(0.0, 1.0);
    let chi2 = mf * (nf - 1.0) * w;
    let df = nf - 1.0;
    let mut r = TestResult::new("kendall_w", "W", w, chi2_sf(chi2, df));
    r.chi2 = Some(chi2);
    r.df = Some(df);
    r.n_objects = Some(n);
    r.n_judges = Some(m);
    r.tie_correction_applied = ties > 0.0;
    Ok(r)
}

/// Friedman test with the default p-value method.
pub fn friedman(blocks: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    friedman_with(blocks, FriedmanPValue::default())
}

/// Friedman test over `n` blocks (rows) × `k` treatments (columns), ranking
/// within blocks and dividing by the tie correction when ties occur.
pub fn friedman_with(blocks: &[Vec<f64>], method: FriedmanPValue) -> Result<TestResult, StatsError> {
    let n = blocks.len();
    if n < 2 {
        return Err(StatsError::Insufficient(format!("friedman needs n >= 2 blocks, got {n}")));
    }
    let k = blocks[0].len();
    if k < 2 {
        return Err(StatsError::Insufficient(format!("friedman needs k >= 2 treatments, got {k}")));
    }
    if let Some(bad) = blocks.iter().find(|b| b.len() != k) {
        return Err(StatsError::LengthMismatch(k, bad.len()));
    }
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for block in blocks {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(block)) {
            *s += r;
        }
        ties += tie_term(block);
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let mut chi2 = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - ties / (nf * kf * (kf * kf - 1.0));
    if correction <= 0.0 {
        return Err(StatsError::Degenerate("all treatments tied in every block".into()));
    }
    if ties > 0.0 {
        chi2 /= correction;
    }
    let chi2 = chi2.max(0.0);
    let df = kf - 1.0;
    let mut r = TestResult::new("friedman", "chi2", chi2, chi2_sf(chi2, df));
    if method == FriedmanPValue::ImanDavenport {
        let df2 = (nf - 1.0) * df;
        let room = nf * df - chi2;
        // χ² at its maximum n(k−1) means every block agrees: F is unbounded.
        let f = if room > 1e-12 * nf * df { (nf - 1.0) * chi2 / room } else { f64::INFINITY };
        r.p_value = f_sf(f, df, df2);
        r.f = f.is_finite().then_some(f);
        r.df2 = Some(df2);
    }
    r.method = Some(method.as_str().into());
    r.chi2 = Some(chi2);
    r.df = Some(df);
    r.n_objects = Some(n);
    r.n_treatments = Some(k);
    r.tie_correction_applied = ties > 0.0;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_concordance() {
        let row: Vec<f64> = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let r = kendall_w(&[row.clone(), row.clone(), row]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-15);
        assert!((r.chi2.unwrap() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn all_tied_is_degenerate() {
        assert!(matches!(kendall_w(&[vec![2.0; 4], vec![2.0; 4]]), Err(StatsError::Degenerate(_))));
        assert!(matches!(friedman(&vec![vec![3.0; 4]; 5]), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn friedman_max_statistic() {
        let blocks = vec![vec![1.0, 2.0, 3.0, 4.0]; 10];
        let r = friedman(&blocks).unwrap();
        assert!((r.statistic - 30.0).abs() < 1e-12);
        assert_eq!(r.df, Some(3.0));
        assert!(r.p_value < 0.001);
        assert!(!r.tie_correction_applied);
    }

    #[test]
    fn p_value_methods() {
        let blocks = vec![vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 3.0], vec![1.0, 3.0, 2.0], vec![1.0, 2.0, 3.0]];
        let chi = friedman_with(&blocks, FriedmanPValue::ChiSquare).unwrap();
        let id = friedman_with(&blocks, FriedmanPValue::ImanDavenport).unwrap();
        assert_eq!(chi.statistic, id.statistic);
        assert_eq!(chi.p_value, chi2_sf(chi.statistic, 2.0));
        let f = 3.0 * id.statistic / (4.0 * 2.0 - id.statistic);
        assert!((id.f.unwrap() - f).abs() < 1e-12);
        assert_eq!(id.df2, Some(6.0));
        assert_eq!(id.p_value, f_sf(f, 2.0, 6.0));
        assert_eq!(id.method.as_deref(), Some("iman-davenport"));
        let max = friedman(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        assert_eq!((max.p_value, max.f), (0.0, None));
    }
}
