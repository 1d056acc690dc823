//! Plans and runs the blinded evaluation grid (case × role × model).
//!
//! Records are keyed by public label only. Nothing in this module looks up a
//! candidate's origin; unblinding happens when the score table is assembled.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::blinding::BlindPlan;
use crate::corpus::Corpus;
use crate::dimension::Dimension;
use crate::parse::{parse_response, ParseMode, ParsedEvaluation};
use crate::persona::{
    concepts_for, render_evaluation_prompt, BlockId, LeakScanner, QuestionnaireTemplate, ReaderRole, RenderOptions,
};
use crate::provider::{Client, Message};

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("case `{0}` has no blinding plan")]
    MissingPlan(String),
    #[error("no client configured for model `{0}`")]
    MissingClient(String),
    #[error("records already exist in {0}; pass resume to continue the run")]
    RecordsExist(String),
    #[error("duplicate grid cell {0}")]
    DuplicateCell(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationJob {
    pub case_id: String,
    pub role_id: String,
    pub model_id: String,
    #[serde(default)]
    pub repeat: u32,
    pub status: JobStatus,
}

impl EvaluationJob {
    /// File stem under `records/`.
    pub fn stem(&self) -> String {
        if self.repeat == 0 {
            format!("{}_{}_{}", self.case_id, self.role_id, self.model_id)
        } else {
            format!("{}_{}_{}_r{}", self.case_id, self.role_id, self.model_id, self.repeat)
        }
    }
}

/// Every (case, role, model) cell, `repeats` times, ordered by case, role, model, repeat.
pub fn plan_grid(
    corpus: &Corpus,
    plans: &BTreeMap<String, BlindPlan>,
    roles: &[ReaderRole],
    models: &[String],
    repeats: u32,
) -> Result<Vec<EvaluationJob>, JudgeError> {
    let mut jobs = Vec::new();
    for case in corpus.cases() {
        if !plans.contains_key(&case.id) {
            return Err(JudgeError::MissingPlan(case.id.clone()));
        }
        for role in roles {
            for model in models {
                for repeat in 0..repeats.max(1) {
                    jobs.push(EvaluationJob {
                        case_id: case.id.clone(),
                        role_id: role.id.clone(),
                        model_id: model.clone(),
                        repeat,
                        status: JobStatus::Pending,
                    });
                }
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for j in &jobs {
        if !seen.insert(j.stem()) {
            return Err(JudgeError::DuplicateCell(j.stem()));
        }
    }
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub case_id: String,
    pub role_id: String,
    pub model_id: String,
    #[serde(default)]
    pub repeat: u32,
    pub k: usize,
    pub render_hash: String,
    pub provider_call_id: String,
    pub raw_response: String,
    /// Public label → dimension → score.
    pub scores: BTreeMap<usize, BTreeMap<Dimension, u8>>,
    pub interview: BTreeMap<BlockId, String>,
    pub parse_mode: ParseMode,
    pub complete: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvaluationRecord {
    pub fn stem(&self) -> String {
        EvaluationJob {
            case_id: self.case_id.clone(),
            role_id: self.role_id.clone(),
            model_id: self.model_id.clone(),
            repeat: self.repeat,
            status: JobStatus::Done,
        }
        .stem()
    }

    pub fn score_count(&self) -> usize {
        self.scores.values().map(BTreeMap::len).sum()
    }

    fn apply(&mut self, parsed: ParsedEvaluation, mode: ParseMode) {
        self.complete = parsed.is_complete(self.k) && parsed.scores.len() == self.k * 5;
        let mut scores: BTreeMap<usize, BTreeMap<Dimension, u8>> = BTreeMap::new();
        for ((label, dim), v) in parsed.scores {
            scores.entry(label).or_default().insert(dim, v);
        }
        self.scores = scores;
        self.interview = parsed.blocks;
        self.parse_mode = mode;
        self.warnings = parsed.warnings;
    }

    /// Re-runs the parser over the stored raw response. Manual records are left alone.
    pub fn reparse(&mut self) {
        if self.parse_mode == ParseMode::Manual {
            return;
        }
        match parse_response(&self.raw_response, self.k) {
            Ok((parsed, mode)) => self.apply(parsed, mode),
            Err(e) => {
                self.scores.clear();
                self.complete = false;
                self.parse_mode = ParseMode::Fenced;
                self.warnings = vec![e.to_string()];
            }
        }
    }

    /// Replaces the scores with operator-entered values.
    pub fn set_manual_scores(&mut self, scores: BTreeMap<(usize, Dimension), u8>) -> Result<(), String> {
        for ((label, dim), v) in &scores {
            if *label == 0 || *label > self.k {
                return Err(format!("label {label} outside 1..={}", self.k));
            }
            if !(1..=5).contains(v) {
                return Err(format!("{dim}[{label}]={v} outside 1..=5"));
            }
        }
        let interview = std::mem::take(&mut self.interview);
        let parsed = ParsedEvaluation { scores, blocks: interview, warnings: vec!["scores entered manually".into()] };
        self.apply(parsed, ParseMode::Manual);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, JudgeError> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        serde_json::from_str(&text).map_err(|e| JudgeError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, JudgeError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(format!("{}.json", self.stem()));
        let mut text = serde_json::to_string_pretty(self).expect("record serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub job: EvaluationJob,
    pub cause: String,
}

/// Everything a job needs besides its identity.
pub struct GridContext<'a> {
    pub corpus: &'a Corpus,
    pub plans: &'a BTreeMap<String, BlindPlan>,
    pub roles: &'a [ReaderRole],
    pub template: &'a QuestionnaireTemplate,
    pub concepts: &'a BTreeMap<String, Vec<String>>,
    pub options: RenderOptions,
    pub leaks: &'a LeakScanner,
    pub clients: &'a BTreeMap<String, Client>,
    pub records_dir: &'a Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub concurrency: usize,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { concurrency: 4, resume: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Sorted in job order.
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<JobFailure>,
    /// Jobs skipped because a record already existed.
    pub resumed: usize,
    /// Final status of every job, in job order.
    pub jobs: Vec<EvaluationJob>,
}

fn failure_path(dir: &Path, job: &EvaluationJob) -> PathBuf {
    dir.join("failed").join(format!("{}.json", job.stem()))
}

/// Executes pending jobs with at most `concurrency` in flight. Records are
/// written by a single writer as they arrive; failures do not stop siblings.
pub fn run_grid(ctx: &GridContext, jobs: &[EvaluationJob], opts: RunOptions) -> Result<GridOutcome, JudgeError> {
    let dir = ctx.records_dir;
    for j in jobs {
        if !ctx.clients.contains_key(&j.model_id) {
            return Err(JudgeError::MissingClient(j.model_id.clone()));
        }
    }
    let existing: Vec<bool> = jobs.iter().map(|j| dir.join(format!("{}.json", j.stem())).exists()).collect();
    if !opts.resume && existing.iter().any(|e| *e) {
        return Err(JudgeError::RecordsExist(dir.display().to_string()));
    }

    let mut slots: Vec<Option<Result<EvaluationRecord, String>>> = vec![None; jobs.len()];
    let mut resumed = 0;
    for (i, j) in jobs.iter().enumerate() {
        if existing[i] {
            slots[i] = Some(Ok(EvaluationRecord::load(&dir.join(format!("{}.json", j.stem())))?));
            resumed += 1;
        }
    }
    let pending: Vec<usize> = (0..jobs.len()).filter(|i| !existing[*i]).collect();

    let next = AtomicUsize::new(0);
    let workers = opts.concurrency.max(1).min(pending.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, Result<EvaluationRecord, String>)>();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let n = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(n) else { break };
                let result = execute(ctx, &jobs[i]);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer.
        for (i, result) in rx {
            let written = match &result {
                Ok(rec) => rec.save(dir).map(|_| ()).and_then(|_| {
                    let stale = failure_path(dir, &jobs[i]);
                    if stale.exists() {
                        fs::remove_file(&stale).map_err(|e| io(&stale, e))?;
                    }
                    Ok(())
                }),
                Err(cause) => write_failure(dir, &jobs[i], cause),
            };
            if let Err(e) = written {
                write_error.get_or_insert(e);
            }
            slots[i] = Some(result);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let mut out = GridOutcome { resumed, ..Default::default() };
    for (job, slot) in jobs.iter().zip(slots) {
        let mut job = job.clone();
        match slot.expect("every job ran or was resumed") {
            Ok(rec) => {
                job.status = JobStatus::Done;
                out.records.push(rec);
            }
            Err(cause) => {
                job.status = JobStatus::Failed;
                out.failures.push(JobFailure { job: job.clone(), cause });
            }
        }
        out.jobs.push(job);
    }
    Ok(out)
}

fn write_failure(dir: &Path, job: &EvaluationJob, cause: &str) -> Result<(), JudgeError> {
    let path = failure_path(dir, job);
    let parent = path.parent().expect("has parent");
    fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    let mut failed = job.clone();
    failed.status = JobStatus::Failed;
    let body = serde_json::to_string_pretty(&JobFailure { job: failed, cause: cause.to_string() }).expect("serializes");
    fs::write(&path, body + "\n").map_err(|e| io(&path, e))
}

fn execute(ctx: &GridContext, job: &EvaluationJob) -> Result<EvaluationRecord, String> {
    let case = ctx.corpus.get(&job.case_id).ok_or_else(|| format!("unknown case `{}`", job.case_id))?;
    let plan = ctx.plans.get(&job.case_id).ok_or_else(|| format!("case `{}` has no plan", job.case_id))?;
    let role = ctx
        .roles
        .iter()
        .find(|r| r.id == job.role_id)
        .ok_or_else(|| format!("unknown role `{}`", job.role_id))?;
    let client = &ctx.clients[&job.model_id];
    let concepts = concepts_for(ctx.concepts, case);
    let prompt = render_evaluation_prompt(role, case, plan, ctx.template, &concepts, &ctx.options, ctx.leaks)
        .map_err(|e| e.to_string())?;
    let tag = format!("evaluate/{}", job.stem());
    let done = client
        .complete(&[Message::system(prompt.system_text), Message::user(prompt.user_text)], &tag)
        .map_err(|e| e.to_string())?;
    let mut rec = EvaluationRecord {
        case_id: job.case_id.clone(),
        role_id: job.role_id.clone(),
        model_id: job.model_id.clone(),
        repeat: job.repeat,
        k: plan.k(),
        render_hash: prompt.render_hash,
        provider_call_id: done.transcript.call_id,
        raw_response: done.text,
        scores: BTreeMap::new(),
        interview: BTreeMap::new(),
        parse_mode: ParseMode::Fenced,
        complete: false,
        warnings: Vec::new(),
    };
    rec.reparse();
    Ok(rec)
}

/// Loads every record under `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<EvaluationRecord>, JudgeError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| EvaluationRecord::load(p)).collect()
}

fn io(path: &Path, e: std::io::Error) -> JudgeError {
    JudgeError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::blinding::published_layout_plan;
    use crate::fixture;
    use crate::provider::{MockTransport, ProviderConfig, ScriptedTransport, TranscriptStore};

    struct Env {
        dir: tempfile::TempDir,
        corpus: Corpus,
        plans: BTreeMap<String, BlindPlan>,
        roles: Vec<ReaderRole>,
        template: QuestionnaireTemplate,
        concepts: BTreeMap<String, Vec<String>>,
        leaks: LeakScanner,
    }

    fn env() -> Env {
        let corpus = fixture::corpus();
        let plans = corpus.cases().iter().map(|c| (c.id.clone(), published_layout_plan(c).unwrap())).collect();
        Env {
            dir: tempfile::tempdir().unwrap(),
            leaks: LeakScanner::for_corpus(&corpus),
            corpus,
            plans,
            roles: fixture::roles(),
            template: fixture::template(),
            concepts: fixture::concepts(),
        }
    }

    fn mock_clients(store: &TranscriptStore, broken: Option<&str>) -> BTreeMap<String, Client> {
        fixture::JUDGES
            .iter()
            .map(|id| {
                let cfg = ProviderConfig::new(id, "mock://", id, crate::provider::ApiShape::OpenAiChat).as_mock();
                let client = if Some(*id) == broken {
                    let t = ScriptedTransport::new(vec![], Some(500), MockTransport::new(7));
                    Client::new(ProviderConfig { max_retries: 1, ..cfg }, Arc::new(t), store.clone())
                } else {
                    Client::mock(&cfg, 7, store.clone())
                };
                (id.to_string(), client)
            })
            .collect()
    }

    fn ctx<'a>(e: &'a Env, clients: &'a BTreeMap<String, Client>, records: &'a Path) -> GridContext<'a> {
        GridContext {
            corpus: &e.corpus,
            plans: &e.plans,
            roles: &e.roles,
            template: &e.template,
            concepts: &e.concepts,
            options: RenderOptions::default(),
            leaks: &e.leaks,
            clients,
            records_dir: records,
        }
    }

    fn models() -> Vec<String> {
        fixture::JUDGES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grid_shape() {
        let e = env();
        let jobs = plan_grid(&e.corpus, &e.plans, &e.roles, &models(), 1).unwrap();
        assert_eq!(jobs.len(), 24);
        assert_eq!(jobs[0].stem(), "case1_R1_gpt");
        assert_eq!(jobs[1].stem(), "case1_R1_gemini");
        let mut missing = e.plans.clone();
        missing.remove("case3");
        assert!(matches!(
            plan_grid(&e.corpus, &missing, &e.roles, &models(), 1),
            Err(JudgeError::MissingPlan(c)) if c == "case3"
        ));
        assert_eq!(plan_grid(&e.corpus, &e.plans, &e.roles, &models(), 2).unwrap().len(), 48);
    }

    #[test]
    fn concurrency_does_not_change_output() {
        let e = env();
        let jobs = plan_grid(&e.corpus, &e.plans, &e.roles, &models(), 1).unwrap();
        let run = |limit| {
            let store = TranscriptStore::new(e.dir.path().join(format!("t{limit}")));
            let clients = mock_clients(&store, None);
            let records = e.dir.path().join(format!("r{limit}"));
            run_grid(&ctx(&e, &clients, &records), &jobs, RunOptions { concurrency: limit, resume: false }).unwrap()
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.records.len(), 24);
        assert_eq!(a.records, b.records);
        assert!(a.failures.is_empty());
        // Roughly one response in ten has no fenced block; those are still parsed.
        assert!(a.records.iter().all(|r| r.complete), "{:?}", a.records.iter().find(|r| !r.complete));
    }

    #[test]
    fn failing_model_does_not_stop_siblings_and_resume_retries() {
        let e = env();
        let jobs = plan_grid(&e.corpus, &e.plans, &e.roles, &models(), 1).unwrap();
        let store = TranscriptStore::new(e.dir.path().join("t"));
        let records = e.dir.path().join("records");
        let broken = mock_clients(&store, Some("gemini"));
        let out = run_grid(&ctx(&e, &broken, &records), &jobs, RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 12);
        assert_eq!(out.failures.len(), 12);
        assert_eq!(out.records.len() + out.failures.len(), jobs.len());
        assert!(out.failures[0].cause.contains("500"), "{}", out.failures[0].cause);

        // A plain rerun refuses to overwrite.
        assert!(matches!(
            run_grid(&ctx(&e, &broken, &records), &jobs, RunOptions::default()),
            Err(JudgeError::RecordsExist(_))
        ));

        let healthy = mock_clients(&store, None);
        let resumed =
            run_grid(&ctx(&e, &healthy, &records), &jobs, RunOptions { concurrency: 2, resume: true }).unwrap();
        assert_eq!(resumed.resumed, 12);
        assert_eq!(resumed.records.len(), 24);
        assert!(resumed.failures.is_empty());
        assert!(!records.join("failed").join("case1_R1_gemini.json").exists());
    }

    #[test]
    fn records_hold_no_provenance() {
        let e = env();
        let jobs = plan_grid(&e.corpus, &e.plans, &e.roles, &models(), 1).unwrap();
        let store = TranscriptStore::new(e.dir.path().join("t"));
        let clients = mock_clients(&store, None);
        let records = e.dir.path().join("records");
        run_grid(&ctx(&e, &clients, &records), &jobs, RunOptions::default()).unwrap();
        for entry in fs::read_dir(&records).unwrap() {
            let text = fs::read_to_string(entry.unwrap().path()).unwrap();
            assert!(e.leaks.scan(&text).is_empty());
            for origin in ["llm_baseline", "llm_adjusted", "\"human\""] {
                assert!(!text.contains(origin));
            }
        }
    }

    #[test]
    fn manual_scores() {
        let mut rec = EvaluationRecord {
            case_id: "c".into(),
            role_id: "R1".into(),
            model_id: "gpt".into(),
            repeat: 0,
            k: 1,
            render_hash: String::new(),
            provider_call_id: String::new(),
            raw_response: "no scores here".into(),
            scores: BTreeMap::new(),
            interview: BTreeMap::new(),
            parse_mode: ParseMode::ProseFallback,
            complete: false,
            warnings: vec![],
        };
        let full: BTreeMap<_, _> = Dimension::ALL.iter().map(|d| ((1, *d), 4)).collect();
        rec.set_manual_scores(full).unwrap();
        assert!(rec.complete);
        rec.reparse();
        assert_eq!(rec.parse_mode, ParseMode::Manual);
        assert_eq!(rec.score_count(), 5);
        assert!(rec.set_manual_scores([((2, Dimension::Clarity), 3)].into()).is_err());
    }
}
