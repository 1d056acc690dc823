//! Aggregated figure data, per-case tables, statistics text, and the markdown summary.
//!
//! Every number written here is recomputable from the exported score CSV. Floats
//! in data files use the shortest round-trip form; markdown tables round to two places.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blinding::CODE_SLOTS;
use crate::dimension::Dimension;
use crate::stats::{
    cross_model_agreement_obs, cross_role_agreement_obs, fmt_f64, version_difference_battery_obs, Battery,
    BatteryOptions, CrossModel, Observation, RepeatPolicy, ScoreTable, TestResult,
};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("score table is empty")]
    EmptyTable,
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub candidate: String,
    pub dimension: Dimension,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub role: String,
    pub candidate: String,
    pub mean: f64,
    pub range: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMean {
    pub candidate: String,
    pub mean: f64,
    pub n: usize,
}

/// Candidates in code-key order first, then any others alphabetically.
pub fn candidate_order(obs: &[Observation]) -> Vec<String> {
    let present: BTreeSet<&str> = obs.iter().map(|o| o.candidate_id.as_str()).collect();
    let mut out: Vec<String> = CODE_SLOTS.iter().filter(|s| present.contains(*s)).map(|s| s.to_string()).collect();
    out.extend(present.iter().filter(|c| !CODE_SLOTS.contains(c)).map(|c| c.to_string()));
    out
}

#[derive(Default)]
struct Acc {
    sum: f64,
    min: f64,
    max: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, v: f64) {
        if self.n == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.sum += v;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

/// Mean, min, and max per (dimension, candidate) over every case, role, and model.
pub fn radar_data(obs: &[Observation]) -> Result<Vec<DimensionSummary>, ReportError> {
    if obs.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut acc: BTreeMap<(Dimension, &str), Acc> = BTreeMap::new();
    for o in obs {
        acc.entry((o.dimension, &o.candidate_id)).or_default().add(o.value);
    }
    let mut out = Vec::new();
    for dim in Dimension::ALL {
        for cand in candidate_order(obs) {
            if let Some(a) = acc.get(&(dim, cand.as_str())) {
                out.push(DimensionSummary { candidate: cand.clone(), dimension: dim, mean: a.mean(), min: a.min, max: a.max, n: a.n });
            }
        }
    }
    Ok(out)
}

/// Mean and max − min per (role, candidate) over all scores in the group.
pub fn role_range_data(obs: &[Observation]) -> Result<Vec<RoleSummary>, ReportError> {
    if obs.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let mut acc: BTreeMap<(&str, &str), Acc> = BTreeMap::new();
    for o in obs {
        acc.entry((&o.role_id, &o.candidate_id)).or_default().add(o.value);
    }
    let roles: BTreeSet<&str> = obs.iter().map(|o| o.role_id.as_str()).collect();
    let mut out = Vec::new();
    for role in roles {
        for cand in candidate_order(obs) {
            if let Some(a) = acc.get(&(role, cand.as_str())) {
                out.push(RoleSummary { role: role.to_string(), candidate: cand.clone(), mean: a.mean(), range: a.max - a.min, n: a.n });
            }
        }
    }
    Ok(out)
}

/// Grand mean per candidate over role × model × dimension for one case.
pub fn case_table(obs: &[Observation], case_id: &str) -> Result<Vec<CaseMean>, ReportError> {
    let rows: Vec<Observation> = obs.iter().filter(|o| o.case_id == case_id).cloned().collect();
    if rows.is_empty() {
        return Err(ReportError::UnknownCase(case_id.to_string()));
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for o in &rows {
        acc.entry(&o.candidate_id).or_default().add(o.value);
    }
    Ok(candidate_order(&rows)
        .into_iter()
        .map(|c| {
            let a = &acc[c.as_str()];
            CaseMean { mean: a.mean(), n: a.n, candidate: c }
        })
        .collect())
}

/// Two-column "version / average score" table with two-decimal means.
pub fn render_case_table(title: &str, rows: &[(String, f64)]) -> String {
    let mut s = format!("**{title}**\n\n| Version | Average score |\n|---|---:|\n");
    for (label, mean) in rows {
        let _ = writeln!(s, "| {label} | {mean:.2} |");
    }
    s
}

/// Every analysis the report needs, with failures kept as messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSet {
    pub cross_model: Result<CrossModel, String>,
    pub cross_role: BTreeMap<String, Result<TestResult, String>>,
    pub battery: Result<Battery, String>,
}

pub fn run_analyses(table: &ScoreTable, policy: RepeatPolicy, opts: BatteryOptions) -> AnalysisSet {
    let obs = table.observations(policy);
    AnalysisSet {
        cross_model: cross_model_agreement_obs(&obs).map_err(|e| e.to_string()),
        cross_role: table
            .models()
            .into_iter()
            .map(|m| {
                let r = cross_role_agreement_obs(&obs, &m).map_err(|e| e.to_string());
                (m, r)
            })
            .collect(),
        battery: version_difference_battery_obs(&obs, opts).map_err(|e| e.to_string()),
    }
}

fn result_line(label: &str, r: &TestResult) -> String {
    let fields: Vec<String> = r.fields().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{label}\t{}", fields.join("\t"))
}

/// One line per test result, tab-separated `key=value` fields.
pub fn results_text(a: &AnalysisSet) -> String {
    let mut s = String::new();
    match &a.cross_model {
        Ok(cm) => {
            let pair = format!("{}~{}", cm.models[0], cm.models[1]);
            let _ = writeln!(s, "{}", result_line(&format!("cross_model[{pair}]"), &cm.spearman));
            let _ = writeln!(s, "{}", result_line(&format!("cross_model[{pair}]"), &cm.kendall));
        }
        Err(e) => {
            let _ = writeln!(s, "cross_model\terror={e}");
        }
    }
    for (model, r) in &a.cross_role {
        match r {
            Ok(r) => {
                let _ = writeln!(s, "{}", result_line(&format!("cross_role[{model}]"), r));
            }
            Err(e) => {
                let _ = writeln!(s, "cross_role[{model}]\terror={e}");
            }
        }
    }
    match &a.battery {
        Ok(b) => {
            let _ = writeln!(
                s,
                "battery\tblocking={}\tcomplete_blocks={}\texcluded_blocks={}\ttreatments={}",
                b.blocking.as_str(),
                b.complete_blocks,
                b.excluded_blocks,
                b.treatments.join(",")
            );
            if let Some(f) = &b.friedman {
                let _ = writeln!(s, "{}", result_line("battery", f));
            }
            for p in &b.pairwise {
                let label = format!("battery[{} vs {}]", p.a, p.b);
                match &p.result {
                    Some(r) => {
                        let _ = writeln!(
                            s,
                            "{}\tsig_05={}\tsig_01={}",
                            result_line(&label, r),
                            p.significant_05,
                            p.significant_01
                        );
                    }
                    None => {
                        let _ = writeln!(s, "{label}\terror={}", p.error.as_deref().unwrap_or("unknown"));
                    }
                }
            }
        }
        Err(e) => {
            let _ = writeln!(s, "battery\terror={e}");
        }
    }
    s
}

/// Public label → candidate mapping for one case, revealed only in the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeKeyEntry {
    pub case_id: String,
    pub label: usize,
    pub candidate_id: String,
    pub slot: String,
    pub translator_label: String,
    pub origin: String,
}

pub struct ReportInputs<'a> {
    pub table: &'a ScoreTable,
    pub analyses: &'a AnalysisSet,
    pub code_key: &'a [CodeKeyEntry],
    pub repeat_policy: RepeatPolicy,
    /// Records left out of the table because their scores were incomplete.
    pub excluded_records: usize,
}

const PLOT_SCRIPT: &str = r#"# Plots radar.csv and roles.csv. Requires pandas and matplotlib.
import math
import sys

import matplotlib.pyplot as plt
import pandas as pd

base = sys.argv[1] if len(sys.argv) > 1 else "."
radar = pd.read_csv(f"{base}/radar.csv")
dims = list(dict.fromkeys(radar["dimension"]))
angles = [2 * math.pi * i / len(dims) for i in range(len(dims))] + [0.0]
ax = plt.subplot(polar=True)
for cand, grp in radar.groupby("candidate", sort=False):
    values = [grp.set_index("dimension").loc[d, "mean"] for d in dims]
    ax.plot(angles, values + values[:1], label=cand)
ax.set_xticks(angles[:-1], dims)
ax.set_ylim(1, 5)
ax.legend(loc="lower right")
plt.savefig(f"{base}/radar.png", dpi=150, bbox_inches="tight")
plt.close()

roles = pd.read_csv(f"{base}/roles.csv")
fig, ax = plt.subplots()
for i, (role, grp) in enumerate(roles.groupby("role")):
    xs = [j + 0.25 * i for j in range(len(grp))]
    ax.bar(xs, grp["mean"], width=0.25, yerr=grp["range"] / 2, label=role)
ax.set_xticks(range(len(grp)), grp["candidate"])
ax.legend()
plt.savefig(f"{base}/roles.png", dpi=150, bbox_inches="tight")
"#;

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn radar_csv(rows: &[DimensionSummary]) -> String {
    csv_text(
        &["dimension", "candidate", "mean", "min", "max", "n"],
        rows.iter()
            .map(|r| {
                vec![
                    r.dimension.as_str().into(),
                    r.candidate.clone(),
                    fmt_f64(r.mean),
                    fmt_f64(r.min),
                    fmt_f64(r.max),
                    r.n.to_string(),
                ]
            })
            .collect(),
    )
}

pub fn roles_csv(rows: &[RoleSummary]) -> String {
    csv_text(
        &["role", "candidate", "mean", "range", "n"],
        rows.iter()
            .map(|r| vec![r.role.clone(), r.candidate.clone(), fmt_f64(r.mean), fmt_f64(r.range), r.n.to_string()])
            .collect(),
    )
}

pub fn case_csv(rows: &[CaseMean]) -> String {
    csv_text(
        &["candidate", "mean", "mean_2dp", "n"],
        rows.iter().map(|r| vec![r.candidate.clone(), fmt_f64(r.mean), format!("{:.2}", r.mean), r.n.to_string()]).collect(),
    )
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn markdown(inputs: &ReportInputs, obs: &[Observation], radar: &[DimensionSummary], roles: &[RoleSummary]) -> String {
    let a = inputs.analyses;
    let mut s = String::from("# Evaluation report\n\n");
    let _ = writeln!(
        s,
        "{} scores from {} case(s), {} role(s), {} model(s); repeats: {}.[^cells]\n",
        inputs.table.len(),
        inputs.table.cases().len(),
        inputs.table.roles().len(),
        inputs.table.models().len(),
        match inputs.repeat_policy {
            RepeatPolicy::Average => "averaged",
            RepeatPolicy::Separate => "kept separate",
        }
    );

    s.push_str("## Agreement\n\n");
    match &a.cross_model {
        Ok(cm) => {
            let _ = writeln!(
                s,
                "- Cross-model ({} vs {}, {} paired ratings): Spearman ρ = {:.2} (p {}); Kendall's W = {:.2} (p {}).[^crossmodel]",
                cm.models[0],
                cm.models[1],
                cm.n_pairs,
                cm.spearman.statistic,
                fmt_p(cm.spearman.p_value),
                cm.kendall.statistic,
                fmt_p(cm.kendall.p_value)
            );
        }
        Err(e) => {
            let _ = writeln!(s, "- Cross-model agreement not computed: {e}");
        }
    }
    for (model, r) in &a.cross_role {
        match r {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "- Cross-role ({model}): W = {:.2}, χ²({}) = {:.2}, p {}.[^crossrole]",
                    r.statistic,
                    r.df.unwrap_or(0.0),
                    r.chi2.unwrap_or(0.0),
                    fmt_p(r.p_value)
                );
            }
            Err(e) => {
                let _ = writeln!(s, "- Cross-role ({model}) not computed: {e}");
            }
        }
    }

    s.push_str("\n## Differences between versions\n\n");
    match &a.battery {
        Ok(b) => {
            if let Some(f) = &b.friedman {
                let _ = writeln!(
                    s,
                    "Friedman χ²({}) = {:.2}, p {} ({}), over {} complete blocks ({}; {} incomplete excluded).[^blocks]\n",
                    f.df.unwrap_or(0.0),
                    f.statistic,
                    fmt_p(f.p_value),
                    f.method.as_deref().unwrap_or("chi-square"),
                    b.complete_blocks,
                    b.blocking.as_str(),
                    b.excluded_blocks
                );
            }
            let _ = writeln!(s, "| Pair | T+ | T- | p | p (Bonferroni, family {}) | |\n|---|---:|---:|---:|---:|---|", b.family_size);
            for p in &b.pairwise {
                match &p.result {
                    Some(r) => {
                        let mark = if p.significant_01 {
                            "**"
                        } else if p.significant_05 {
                            "*"
                        } else {
                            ""
                        };
                        let _ = writeln!(
                            s,
                            "| {} vs {} | {} | {} | {} | {} | {mark} |",
                            p.a,
                            p.b,
                            r.statistic,
                            r.t_minus.unwrap_or(0.0),
                            fmt_p(r.p_value),
                            fmt_p(r.effective_p())
                        );
                    }
                    None => {
                        let _ = writeln!(s, "| {} vs {} | | | | | {} |", p.a, p.b, p.error.as_deref().unwrap_or(""));
                    }
                }
            }
            s.push_str("\n\\* p < 0.05, \\*\\* p < 0.01 after correction.\n");
        }
        Err(e) => {
            let _ = writeln!(s, "Not computed: {e}");
        }
    }

    s.push_str("\n## Mean scores by dimension\n\n");
    let cands = candidate_order(obs);
    let _ = writeln!(s, "| Dimension | {} |", cands.join(" | "));
    let _ = writeln!(s, "|---|{}", "---:|".repeat(cands.len()));
    for dim in Dimension::ALL {
        let cells: Vec<String> = cands
            .iter()
            .map(|c| {
                radar
                    .iter()
                    .find(|r| r.dimension == dim && &r.candidate == c)
                    .map_or("".into(), |r| format!("{:.2}", r.mean))
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", dim.display_name(), cells.join(" | "));
    }

    s.push_str("\n## Role means and ranges\n\n| Role | Version | Mean | Range | n |\n|---|---|---:|---:|---:|\n");
    for r in roles {
        let _ = writeln!(s, "| {} | {} | {:.2} | {} | {} |", r.role, r.candidate, r.mean, r.range, r.n);
    }
    s.push_str("\nRange is max − min over every score in the role and version group.[^range]\n");

    s.push_str("\n## Case averages\n\n");
    for case in inputs.table.cases() {
        if let Ok(rows) = case_table(obs, &case) {
            let pairs: Vec<(String, f64)> = rows.iter().map(|r| (format!("{} (n={})", r.candidate, r.n), r.mean)).collect();
            s.push_str(&render_case_table(&case, &pairs));
            s.push('\n');
        }
    }

    s.push_str("## Code key\n\n| Case | Label | Candidate | Slot | Translator | Origin |\n|---|---:|---|---|---|---|\n");
    for e in inputs.code_key {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            e.case_id, e.label, e.candidate_id, e.slot, e.translator_label, e.origin
        );
    }

    s.push_str("\n---\n\n");
    let _ = writeln!(
        s,
        "[^cells]: {} record(s) with incomplete scores were excluded from the table.",
        inputs.excluded_records
    );
    s.push_str("[^crossmodel]: Pairs match (case, role, candidate, dimension) across the two models, so n is the number of such cells rather than a count of objects.\n");
    s.push_str("[^crossrole]: Judges are roles; objects are (case, candidate) cells scored by their mean over the five dimensions, giving n = cases × candidates and df = n − 1. This object construction is inferred from the reported degrees of freedom rather than documented.\n");
    s.push_str("[^blocks]: Blocks default to every (case, role, model, dimension) tuple; the scheme is configurable. The Friedman p-value uses the Iman-Davenport F tail unless the chi-square tail is requested; the χ² statistic is the same either way. Case averages are grand means over role × model × dimension, which equal means of means only when cells are balanced (see the n column).\n");
    s.push_str("[^range]: Whether a published range spans dimensions, cases, or both is unspecified; this report uses all scores in the group. Externally reported summary values depend on per-rating data that is not available, so they are neither reproduced nor asserted.\n");
    s
}

/// Writes `radar.csv`, `roles.csv`, `cases/<id>.csv`, `results.txt`,
/// `report.md`, and `plot_figures.py` under `dir`. Output is a pure function of the inputs.
pub fn write_report(inputs: &ReportInputs, dir: &Path) -> Result<(), ReportError> {
    let obs = inputs.table.observations(inputs.repeat_policy);
    let radar = radar_data(&obs)?;
    let roles = role_range_data(&obs)?;
    let write = |name: &str, text: &str| -> Result<(), ReportError> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| io(&path, e))
    };
    write("radar.csv", &radar_csv(&radar))?;
    write("roles.csv", &roles_csv(&roles))?;
    for case in inputs.table.cases() {
        write(&format!("cases/{case}.csv"), &case_csv(&case_table(&obs, &case)?))?;
    }
    write("results.txt", &results_text(inputs.analyses))?;
    write("report.md", &markdown(inputs, &obs, &radar, &roles))?;
    write("plot_figures.py", PLOT_SCRIPT)?;
    Ok(())
}

fn io(path: &Path, e: std::io::Error) -> ReportError {
    ReportError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ScoreRow;

    fn table(score: impl Fn(&str, &str, Dimension) -> u8) -> ScoreTable {
        let mut rows = Vec::new();
        for case in ["case1", "case2"] {
            for role in ["R1", "R2"] {
                for model in ["gpt", "gemini"] {
                    for cand in ["baseline", "final", "unschuld", "li"] {
                        for dim in Dimension::ALL {
                            rows.push(ScoreRow {
                                case_id: case.into(),
                                role_id: role.into(),
                                model_id: model.into(),
                                candidate_id: cand.into(),
                                dimension: dim,
                                score: score(role, cand, dim),
                                repeat: 0,
                            });
                        }
                    }
                }
            }
        }
        ScoreTable::from_rows(rows).unwrap()
    }

    #[test]
    fn all_fours() {
        let t = table(|_, _, _| 4);
        let obs = t.observations(RepeatPolicy::Average);
        let radar = radar_data(&obs).unwrap();
        assert_eq!(radar.len(), 20);
        assert!(radar.iter().all(|r| r.mean == 4.0 && r.min <= r.mean && r.mean <= r.max));
        assert_eq!(radar[0].dimension, Dimension::Clarity);
        assert_eq!(radar[0].candidate, "baseline");
        let roles = role_range_data(&obs).unwrap();
        assert!(roles.iter().all(|r| r.range == 0.0));
    }

    #[test]
    fn role_range_two_values() {
        let t = table(|role, cand, _| if role == "R1" && cand == "li" { 2 } else { 5 });
        let mut rows: Vec<ScoreRow> = t.rows().cloned().collect();
        // Leave R1/li with exactly one 2 and one 5.
        rows.retain(|r| !(r.role_id == "R1" && r.candidate_id == "li") || (r.dimension == Dimension::Clarity && r.case_id == "case1"));
        for r in rows.iter_mut().filter(|r| r.role_id == "R1" && r.candidate_id == "li" && r.model_id == "gpt") {
            r.score = 5;
        }
        let t = ScoreTable::from_rows(rows).unwrap();
        let roles = role_range_data(&t.observations(RepeatPolicy::Average)).unwrap();
        let g = roles.iter().find(|r| r.role == "R1" && r.candidate == "li").unwrap();
        assert_eq!((g.mean, g.range, g.n), (3.5, 3.0, 2));
    }

    #[test]
    fn case_table_and_layout() {
        let t = table(|_, _, _| 5);
        let rows = case_table(&t.observations(RepeatPolicy::Average), "case1").unwrap();
        assert!(rows.iter().all(|r| r.mean == 5.0 && r.n == 20));
        assert!(case_csv(&rows).contains(",5.00,"));
        assert!(matches!(case_table(&t.observations(RepeatPolicy::Average), "nope"), Err(ReportError::UnknownCase(_))));

        let md = render_case_table("case1", &[("LLM baseline".into(), 4.87), ("Adjusted".into(), 3.5)]);
        assert!(md.contains("| LLM baseline | 4.87 |"));
        assert!(md.contains("| Adjusted | 3.50 |"));
    }

    #[test]
    fn report_is_deterministic() {
        let t = table(|role, cand, dim| (crate::rng::fnv1a64(&format!("{role}{cand}{dim}")) % 5 + 1) as u8);
        let a = run_analyses(&t, RepeatPolicy::Average, BatteryOptions::default());
        let inputs =
            ReportInputs { table: &t, analyses: &a, code_key: &[], repeat_policy: RepeatPolicy::Average, excluded_records: 0 };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_report(&inputs, d1.path()).unwrap();
        write_report(&inputs, d2.path()).unwrap();
        for f in ["radar.csv", "roles.csv", "cases/case1.csv", "results.txt", "report.md", "plot_figures.py"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let results = fs::read_to_string(d1.path().join("results.txt")).unwrap();
        assert!(results.contains("df=3.0"));
        assert_eq!(results.matches("p_adj=").count(), 6);
    }
}
