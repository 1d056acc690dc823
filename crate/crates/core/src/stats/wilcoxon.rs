use serde::{Deserialize, Serialize};

use super::rank::{average_ranks, tie_term};
use super::special::normal_sf;
use super::{StatsError, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    Approx,
    /// Exact when the reduced n is at most 20.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Drop zero differences before ranking.
    #[default]
    Wilcox,
    /// Rank zeros with the rest, then drop their ranks from both sums.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WilcoxonOptions {
    pub mode: WilcoxonMode,
    pub zero_method: ZeroMethod,
}

pub const EXACT_MAX_N: usize = 20;
/// Largest n the exact counter accepts (counts fit in u128).
const EXACT_LIMIT: usize = 120;

/// Number of the 2ⁿ sign assignments over `doubled_ranks` (ranks × 2, so
/// midranks are integral) whose min(T⁺, T⁻) is at most `doubled_observed_min`.
pub fn exact_tail_count(doubled_ranks: &[u64], doubled_observed_min: u64) -> u128 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
        .iter()
        .enumerate()
        .filter(|(s, _)| {
            let s = *s as u64;
            s.min(total - s) <= doubled_observed_min
        })
        .map(|(_, c)| *c)
        .sum()
}

/// Paired signed-rank test of `x − y`, two-sided.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], opts: WilcoxonOptions) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let nonzero = diffs.iter().filter(|d| **d != 0.0).count();
    if nonzero == 0 {
        return Err(StatsError::AllZeroDifferences);
    }

    // (signed difference, rank) for the differences that enter T⁺/T⁻.
    let ranked: Vec<(f64, f64)> = match opts.zero_method {
        ZeroMethod::Wilcox => {
            let kept: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
            let abs: Vec<f64> = kept.iter().map(|d| d.abs()).collect();
            kept.into_iter().zip(average_ranks(&abs)).collect()
        }
        ZeroMethod::Pratt => {
            let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            diffs.iter().copied().zip(average_ranks(&abs)).filter(|(d, _)| *d != 0.0).collect()
        }
    };
    let t_plus: f64 = ranked.iter().filter(|(d, _)| *d > 0.0).map(|(_, r)| r).sum();
    let t_minus: f64 = ranked.iter().filter(|(d, _)| *d < 0.0).map(|(_, r)| r).sum();
    let n = ranked.len();
    let abs_all: Vec<f64> = match opts.zero_method {
        ZeroMethod::Wilcox => ranked.iter().map(|(d, _)| d.abs()).collect(),
        ZeroMethod::Pratt => diffs.iter().map(|d| d.abs()).collect(),
    };
    let ties = tie_term(&abs_all);

    let exact = match opts.mode {
        WilcoxonMode::Exact => true,
        WilcoxonMode::Approx => false,
        WilcoxonMode::Auto => n <= EXACT_MAX_N,
    };
    let mut r = if exact {
        if n > EXACT_LIMIT {
            return Err(StatsError::Insufficient(format!("exact mode supports n <= {EXACT_LIMIT}, got {n}")));
        }
        let doubled: Vec<u64> = ranked.iter().map(|(_, r)| (r * 2.0).round() as u64).collect();
        let observed = (t_plus.min(t_minus) * 2.0).round() as u64;
        let count = exact_tail_count(&doubled, observed);
        let p = count as f64 / 2f64.powi(n as i32);
        let mut r = TestResult::new("wilcoxon", "T+", t_plus, p);
        r.method = Some("exact".into());
        r
    } else {
        let nf = n as f64;
        let (mean, mut var) = match opts.zero_method {
            ZeroMethod::Wilcox => (nf * (nf + 1.0) / 4.0, nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0),
            ZeroMethod::Pratt => {
                let all = diffs.len() as f64;
                let z0 = all - nf;
                (
                    (all * (all + 1.0) - z0 * (z0 + 1.0)) / 4.0,
                    (all * (all + 1.0) * (2.0 * all + 1.0) - z0 * (z0 + 1.0) * (2.0 * z0 + 1.0)) / 24.0,
                )
            }
        };
        var -= ties / 48.0;
        if var <= 0.0 {
            return Err(StatsError::Degenerate("zero variance in signed-rank statistic".into()));
        }
        let dev = t_plus - mean;
        let corrected = if dev.abs() <= 0.5 { 0.0 } else { dev - 0.5 * dev.signum() };
        let z = corrected / var.sqrt();
        let mut r = TestResult::new("wilcoxon", "T+", t_plus, (2.0 * normal_sf(z.abs())).min(1.0));
        r.z = Some(z);
        r.method = Some("approx".into());
        r
    };
    r.t_minus = Some(t_minus);
    r.n_objects = Some(n);
    r.tie_correction_applied = ties > 0.0;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact() -> WilcoxonOptions {
        WilcoxonOptions { mode: WilcoxonMode::Exact, ..Default::default() }
    }

    #[test]
    fn all_zero_is_an_error() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(wilcoxon_signed_rank(&x, &x, exact()).unwrap_err(), StatsError::AllZeroDifferences);
    }

    #[test]
    fn all_positive_five() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&x, &[0.0; 5], exact()).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert_eq!(r.p_value, 2.0 / 32.0);
    }

    #[test]
    fn zeros_dropped_or_kept() {
        let x = [0.0, 1.0, 2.0, -3.0, 4.0];
        let y = [0.0; 5];
        let w = wilcoxon_signed_rank(&x, &y, exact()).unwrap();
        assert_eq!(w.n_objects, Some(4));
        assert_eq!((w.statistic, w.t_minus), (7.0, Some(3.0)));
        let p = wilcoxon_signed_rank(&x, &y, WilcoxonOptions { mode: WilcoxonMode::Exact, zero_method: ZeroMethod::Pratt })
            .unwrap();
        // Pratt ranks the zero as 1, shifting the others up.
        assert_eq!((p.statistic, p.t_minus), (2.0 + 3.0 + 5.0, Some(4.0)));
    }

    #[test]
    fn auto_switches_at_twenty() {
        let d: Vec<f64> = (1..=21).map(|v| v as f64 * if v % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let zero = vec![0.0; 21];
        let auto21 = wilcoxon_signed_rank(&d, &zero, WilcoxonOptions::default()).unwrap();
        assert_eq!(auto21.method.as_deref(), Some("approx"));
        let auto20 = wilcoxon_signed_rank(&d[..20], &zero[..20], WilcoxonOptions::default()).unwrap();
        assert_eq!(auto20.method.as_deref(), Some("exact"));
    }
}
