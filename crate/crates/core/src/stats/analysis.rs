use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::concordance::{friedman_with, kendall_w, FriedmanPValue};
use super::rank::spearman_rho;
use super::table::{Observation, RepeatPolicy, ScoreTable};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonOptions};
use super::{bonferroni, StatsError, TestResult};
use crate::dimension::Dimension;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModel {
    pub models: [String; 2],
    pub n_pairs: usize,
    pub spearman: TestResult,
    pub kendall: TestResult,
}

pub fn cross_model_agreement(table: &ScoreTable) -> Result<CrossModel, StatsError> {
    cross_model_agreement_obs(&table.observations(RepeatPolicy::Average))
}

/// Pairs observations across exactly two models by (case, role, candidate,
/// dimension, repeat), then reports Spearman over the pairs and Kendall's W
/// with each model as one judge.
pub fn cross_model_agreement_obs(obs: &[Observation]) -> Result<CrossModel, StatsError> {
    let models: BTreeSet<&str> = obs.iter().map(|o| o.model_id.as_str()).collect();
    if models.len() != 2 {
        return Err(StatsError::Insufficient(format!(
            "cross-model agreement needs exactly 2 models, found {}",
            models.len()
        )));
    }
    let models: Vec<String> = models.into_iter().map(str::to_string).collect();
    type Key<'a> = (&'a str, &'a str, &'a str, Dimension, u32);
    let mut cells: [BTreeMap<Key, f64>; 2] = Default::default();
    for o in obs {
        let side = usize::from(o.model_id != models[0]);
        cells[side].insert((&o.case_id, &o.role_id, &o.candidate_id, o.dimension, o.repeat), o.value);
    }
    let mut missing = Vec::new();
    for side in 0..2 {
        for k in cells[side].keys() {
            if !cells[1 - side].contains_key(k) {
                missing.push(format!("{}/{}/{}/{}/{} (no {})", k.0, k.1, k.2, k.3, k.4, models[1 - side]));
            }
        }
    }
    if !missing.is_empty() {
        return Err(StatsError::UnpairedCells(missing));
    }
    let a: Vec<f64> = cells[0].values().copied().collect();
    let b: Vec<f64> = cells[1].values().copied().collect();
    let spearman = spearman_rho(&a, &b)?;
    let kendall = kendall_w(&[a.clone(), b])?;
    Ok(CrossModel { models: [models[0].clone(), models[1].clone()], n_pairs: a.len(), spearman, kendall })
}

/// Per-role means over dimensions (and repeats) for each (case, candidate) object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleObjectMeans {
    pub roles: Vec<String>,
    pub objects: Vec<(String, String)>,
    /// `means[role][object]`.
    pub means: Vec<Vec<f64>>,
}

pub fn cross_role_object_means(obs: &[Observation], model: &str) -> Result<RoleObjectMeans, StatsError> {
    let mut sums: BTreeMap<(&str, (&str, &str)), (f64, usize)> = BTreeMap::new();
    for o in obs.iter().filter(|o| o.model_id == model) {
        let e = sums.entry((&o.role_id, (&o.case_id, &o.candidate_id))).or_default();
        e.0 += o.value;
        e.1 += 1;
    }
    let roles: BTreeSet<&str> = sums.keys().map(|k| k.0).collect();
    let objects: BTreeSet<(&str, &str)> = sums.keys().map(|k| k.1).collect();
    if roles.len() < 2 {
        return Err(StatsError::Insufficient(format!("model `{model}` has {} role(s); need at least 2", roles.len())));
    }
    let mut missing = Vec::new();
    let means = roles
        .iter()
        .map(|r| {
            objects
                .iter()
                .map(|o| match sums.get(&(*r, *o)) {
                    Some((s, n)) => s / *n as f64,
                    None => {
                        missing.push(format!("{r}: {}/{}", o.0, o.1));
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    if !missing.is_empty() {
        return Err(StatsError::MissingObjects(missing));
    }
    Ok(RoleObjectMeans {
        roles: roles.into_iter().map(str::to_string).collect(),
        objects: objects.into_iter().map(|(c, k)| (c.to_string(), k.to_string())).collect(),
        means,
    })
}

pub fn cross_role_agreement(table: &ScoreTable, model: &str) -> Result<TestResult, StatsError> {
    cross_role_agreement_obs(&table.observations(RepeatPolicy::Average), model)
}

/// Kendall's W with roles as judges over (case × candidate) objects, each
/// object collapsed to its mean over dimensions.
pub fn cross_role_agreement_obs(obs: &[Observation], model: &str) -> Result<TestResult, StatsError> {
    let m = cross_role_object_means(obs, model)?;
    let mut r = kendall_w(&m.means)?;
    r.test_name = format!("kendall_w[{model}]");
    Ok(r)
}

/// Which cell fields define a Friedman block. Fields left out are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockingScheme {
    #[default]
    CaseRoleModelDimension,
    CaseRoleModel,
    CaseModelDimension,
    CaseRoleDimension,
}

impl BlockingScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockingScheme::CaseRoleModelDimension => "case-role-model-dimension",
            BlockingScheme::CaseRoleModel => "case-role-model",
            BlockingScheme::CaseModelDimension => "case-model-dimension",
            BlockingScheme::CaseRoleDimension => "case-role-dimension",
        }
    }

    fn key(self, o: &Observation) -> Vec<String> {
        let mut k = vec![o.case_id.clone()];
        let (role, model, dim) = match self {
            BlockingScheme::CaseRoleModelDimension => (true, true, true),
            BlockingScheme::CaseRoleModel => (true, true, false),
            BlockingScheme::CaseModelDimension => (false, true, true),
            BlockingScheme::CaseRoleDimension => (true, false, true),
        };
        if role {
            k.push(o.role_id.clone());
        }
        if model {
            k.push(o.model_id.clone());
        }
        if dim {
            k.push(o.dimension.as_str().to_string());
        }
        k.push(o.repeat.to_string());
        k
    }
}

impl std::str::FromStr for BlockingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            BlockingScheme::CaseRoleModelDimension,
            BlockingScheme::CaseRoleModel,
            BlockingScheme::CaseModelDimension,
            BlockingScheme::CaseRoleDimension,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
        .ok_or_else(|| format!("unknown blocking scheme `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatteryOptions {
    pub blocking: BlockingScheme,
    pub wilcoxon: WilcoxonOptions,
    #[serde(default)]
    pub friedman: FriedmanPValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    /// Absent when the pair has no non-zero difference.
    pub result: Option<TestResult>,
    pub error: Option<String>,
    pub significant_05: bool,
    pub significant_01: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub blocking: BlockingScheme,
    pub treatments: Vec<String>,
    pub complete_blocks: usize,
    pub excluded_blocks: usize,
    /// Omitted for two treatments, where the single pairwise test is the whole battery.
    pub friedman: Option<TestResult>,
    pub family_size: usize,
    pub pairwise: Vec<PairwiseResult>,
}

pub fn version_difference_battery(table: &ScoreTable, opts: BatteryOptions) -> Result<Battery, StatsError> {
    version_difference_battery_obs(&table.observations(RepeatPolicy::Average), opts)
}

/// Friedman across candidates over complete blocks, then every pairwise
/// Wilcoxon on the same blocks with a Bonferroni family of C(k, 2).
pub fn version_difference_battery_obs(obs: &[Observation], opts: BatteryOptions) -> Result<Battery, StatsError> {
    let treatments: Vec<String> =
        obs.iter().map(|o| o.candidate_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let k = treatments.len();
    if k < 2 {
        return Err(StatsError::Insufficient(format!("need at least 2 candidates, found {k}")));
    }
    let mut cells: BTreeMap<Vec<String>, Vec<(f64, usize)>> = BTreeMap::new();
    for o in obs {
        let t = treatments.binary_search(&o.candidate_id).expect("collected above");
        let e = &mut cells.entry(opts.blocking.key(o)).or_insert_with(|| vec![(0.0, 0); k])[t];
        e.0 += o.value;
        e.1 += 1;
    }
    let total = cells.len();
    let blocks: Vec<Vec<f64>> = cells
        .into_values()
        .filter(|b| b.iter().all(|(_, n)| *n > 0))
        .map(|b| b.iter().map(|(s, n)| s / *n as f64).collect())
        .collect();
    let excluded = total - blocks.len();
    if blocks.is_empty() {
        return Err(StatsError::NoCompleteBlocks { excluded });
    }
    let friedman = if k > 2 { Some(friedman_with(&blocks, opts.friedman)?) } else { None };

    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let x: Vec<f64> = blocks.iter().map(|b| b[i]).collect();
            let y: Vec<f64> = blocks.iter().map(|b| b[j]).collect();
            match wilcoxon_signed_rank(&x, &y, opts.wilcoxon) {
                Ok(mut r) => {
                    r.test_name = format!("wilcoxon[{} vs {}]", treatments[i], treatments[j]);
                    pairs.push((i, j, Some(raw.len()), None));
                    raw.push(r);
                }
                Err(e) => pairs.push((i, j, None, Some(e.to_string()))),
            }
        }
    }
    let family_size = k * (k - 1) / 2;
    let corrected = bonferroni(&raw, family_size)?;
    let pairwise = pairs
        .into_iter()
        .map(|(i, j, idx, error)| {
            let result = idx.map(|n| corrected[n].clone());
            let p = result.as_ref().map_or(1.0, TestResult::effective_p);
            PairwiseResult {
                a: treatments[i].clone(),
                b: treatments[j].clone(),
                result,
                error,
                significant_05: p < 0.05,
                significant_01: p < 0.01,
            }
        })
        .collect();
    Ok(Battery {
        blocking: opts.blocking,
        treatments,
        complete_blocks: blocks.len(),
        excluded_blocks: excluded,
        friedman,
        family_size,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ScoreRow;

    fn table(f: impl Fn(&str, &str, &str, &str, Dimension) -> u8) -> ScoreTable {
        let mut rows = Vec::new();
        for case in ["c1", "c2"] {
            for role in ["R1", "R2", "R3"] {
                for model in ["gpt", "gemini"] {
                    for cand in ["a", "b", "c"] {
                        for dim in Dimension::ALL {
                            rows.push(ScoreRow {
                                case_id: case.into(),
                                role_id: role.into(),
                                model_id: model.into(),
                                candidate_id: cand.into(),
                                dimension: dim,
                                score: f(case, role, model, cand, dim),
                                repeat: 0,
                            });
                        }
                    }
                }
            }
        }
        ScoreTable::from_rows(rows).unwrap()
    }

    fn varied(case: &str, role: &str, cand: &str, dim: Dimension) -> u8 {
        let h = crate::rng::fnv1a64(&format!("{case}{role}{cand}{dim}"));
        (h % 5) as u8 + 1
    }

    #[test]
    fn identical_models_agree_perfectly() {
        let t = table(|c, r, _, k, d| varied(c, r, k, d));
        let cm = cross_model_agreement(&t).unwrap();
        assert_eq!(cm.n_pairs, 2 * 3 * 3 * 5);
        assert!((cm.spearman.statistic - 1.0).abs() < 1e-12);
        assert!((cm.kendall.statistic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_model_is_antitone() {
        let t = table(|c, r, m, k, d| if m == "gpt" { varied(c, r, k, d) } else { 6 - varied(c, r, k, d) });
        let cm = cross_model_agreement(&t).unwrap();
        assert!((cm.spearman.statistic + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unpaired_cells_listed() {
        let t = table(|c, r, _, k, d| varied(c, r, k, d));
        let rows: Vec<ScoreRow> = t
            .rows()
            .filter(|r| !(r.model_id == "gemini" && r.case_id == "c2" && r.role_id == "R3" && r.candidate_id == "a"))
            .cloned()
            .collect();
        match cross_model_agreement(&ScoreTable::from_rows(rows).unwrap()) {
            Err(StatsError::UnpairedCells(m)) => assert_eq!(m.len(), 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roles_with_identical_means() {
        let t = table(|c, _, _, k, d| varied(c, "R1", k, d));
        let r = cross_role_agreement(&t, "gpt").unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert_eq!(r.n_judges, Some(3));
        assert_eq!(r.n_objects, Some(6));
    }

    #[test]
    fn battery_geometry_and_k2() {
        let t = table(|c, r, _, k, d| varied(c, r, k, d));
        let b = version_difference_battery(&t, BatteryOptions::default()).unwrap();
        assert_eq!(b.complete_blocks, 2 * 3 * 2 * 5);
        assert_eq!(b.friedman.as_ref().unwrap().df, Some(2.0));
        assert_eq!(b.family_size, 3);
        assert_eq!(b.pairwise.len(), 3);

        let two: Vec<ScoreRow> = t.rows().filter(|r| r.candidate_id != "c").cloned().collect();
        let b2 = version_difference_battery(&ScoreTable::from_rows(two).unwrap(), BatteryOptions::default()).unwrap();
        assert!(b2.friedman.is_none());
        assert_eq!(b2.family_size, 1);
        assert_eq!(b2.pairwise.len(), 1);
    }

    #[test]
    fn incomplete_blocks_counted() {
        let t = table(|c, r, _, k, d| varied(c, r, k, d));
        let rows: Vec<ScoreRow> = t
            .rows()
            .filter(|r| !(r.case_id == "c1" && r.role_id == "R1" && r.model_id == "gpt" && r.candidate_id == "b"))
            .cloned()
            .collect();
        let b = version_difference_battery(&ScoreTable::from_rows(rows).unwrap(), BatteryOptions::default()).unwrap();
        assert_eq!(b.excluded_blocks, 5);
        assert_eq!(b.complete_blocks, 55);
    }

    #[test]
    fn blocking_schemes_parse() {
        for s in ["case-role-model-dimension", "case-role-model", "case-model-dimension", "case-role-dimension"] {
            assert_eq!(s.parse::<BlockingScheme>().unwrap().as_str(), s);
        }
        let t = table(|c, r, _, k, d| varied(c, r, k, d));
        let opts = BatteryOptions { blocking: BlockingScheme::CaseRoleModel, ..Default::default() };
        assert_eq!(version_difference_battery(&t, opts).unwrap().complete_blocks, 12);
    }
}
