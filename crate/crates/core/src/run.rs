//! File-based run directory and the pipeline steps that operate on it.
//!
//! ```text
//! <root>/manifest.json   schema version, global seed, provider configs
//!        cases/ personas/ templates/ blinding/ sessions/ transcripts/ records/ report/
//! ```
//!
//! All randomness flows from seeds recorded in the manifest or passed explicitly.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blinding::{self, make_blind_plan, BlindPlan, BlindingError};
use crate::corpus::{self, Corpus, CorpusError, SourceCase};
use crate::fixture;
use crate::judge::{self, EvaluationRecord, GridContext, GridOutcome, JudgeError, RunOptions};
use crate::persona::{self, LeakScanner, PersonaError, QuestionnaireTemplate, ReaderRole, RenderOptions};
use crate::provider::{Client, ProviderConfig, TranscriptStore};
use crate::report::{self, AnalysisSet, CodeKeyEntry, ReportError, ReportInputs};
use crate::rng::derive_seed;
use crate::scaffold::{self, Diagnosis, ScaffoldError, ScaffoldSession};
use crate::stats::{BatteryOptions, BlockingScheme, RepeatPolicy, ScoreRow, ScoreTable, StatsError};

pub const SCHEMA_VERSION: u32 = 1;
pub const SUBDIRS: [&str; 8] =
    ["cases", "personas", "templates", "blinding", "sessions", "transcripts", "records", "report"];
const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";
const TEMPLATE_FILE: &str = "questionnaire.txt";
const CONCEPTS_FILE: &str = "concepts.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0} is not an initialized run directory (no manifest.json)")]
    Uninitialized(String),
    #[error("{0} is already initialized")]
    AlreadyInitialized(String),
    #[error("manifest schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("run directory is locked by another invocation ({0}); remove it if no command is running")]
    Locked(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Blinding(#[from] BlindingError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Scaffold(#[from] ScaffoldError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl RunError {
    /// Stable short identifier for machine consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Uninitialized(_) => "uninitialized",
            RunError::AlreadyInitialized(_) => "already_initialized",
            RunError::SchemaMismatch { .. } => "schema_mismatch",
            RunError::Locked(_) => "locked",
            RunError::Usage(_) => "usage",
            RunError::Io { .. } => "io",
            RunError::Corpus(_) => "corpus",
            RunError::Blinding(_) => "blinding",
            RunError::Persona(_) => "persona",
            RunError::Scaffold(_) => "scaffold",
            RunError::Judge(_) => "judge",
            RunError::Stats(_) => "stats",
            RunError::Report(_) => "report",
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub global_seed: u64,
    pub providers: Vec<ProviderConfig>,
    /// Provider id used for scaffolding turns.
    pub translation_model: String,
    #[serde(default)]
    pub render: RenderOptions,
}

impl Manifest {
    pub fn new(global_seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            global_seed,
            providers: ProviderConfig::defaults(),
            translation_model: fixture::TRANSLATOR.into(),
            render: RenderOptions::default(),
        }
    }

    pub fn provider(&self, id: &str) -> Result<&ProviderConfig, RunError> {
        self.providers
            .iter()
            .find(|p| p.provider_id == id)
            .ok_or_else(|| RunError::Usage(format!("unknown model `{id}`; manifest lists {}", self.provider_ids())))
    }

    fn provider_ids(&self) -> String {
        self.providers.iter().map(|p| p.provider_id.as_str()).collect::<Vec<_>>().join(", ")
    }
}

/// Held for the duration of a command; removes the lock file on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Where provider replies come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Http,
    /// Offline mock seeded from this value.
    Mock(u64),
}

#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDirectory {
    /// Creates the layout with the bundled personas, questionnaire, and concept lines.
    pub fn init(root: &Path, global_seed: u64) -> Result<Self, RunError> {
        if root.join(MANIFEST).exists() {
            return Err(RunError::AlreadyInitialized(root.display().to_string()));
        }
        for sub in SUBDIRS {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
        }
        let write = |rel: &str, text: &str| -> Result<(), RunError> {
            let p = root.join(rel);
            fs::write(&p, text).map_err(|e| io(&p, e))
        };
        for (id, text) in fixture::PERSONA_TEXT {
            write(&format!("personas/{id}.txt"), text)?;
        }
        write("personas/focus.json", fixture::FOCUS_JSON)?;
        write(&format!("templates/{TEMPLATE_FILE}"), persona::DEFAULT_TEMPLATE)?;
        write(&format!("templates/{CONCEPTS_FILE}"), fixture::CONCEPTS_JSON)?;
        let manifest = Manifest::new(global_seed);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write(MANIFEST, &text)?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    /// Opens an existing run directory, checking the schema version.
    pub fn open(root: &Path) -> Result<Self, RunError> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Err(RunError::Uninitialized(root.display().to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let found = value["schema_version"].as_u64().unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(RunError::SchemaMismatch { found, expected: SCHEMA_VERSION });
        }
        let manifest =
            serde_json::from_value(value).map_err(|e| RunError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    /// Takes the single-invocation lock.
    pub fn lock(&self) -> Result<RunLock, RunError> {
        let path = self.root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(RunError::Locked(path.display().to_string())),
            Err(e) => Err(io(&path, e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self, sub: &str) -> PathBuf {
        self.root.join(sub)
    }

    pub fn corpus(&self) -> Result<Corpus, RunError> {
        Ok(Corpus::load_dir(&self.dir("cases"))?)
    }

    pub fn case(&self, id: &str) -> Result<SourceCase, RunError> {
        self.corpus()?.get(id).cloned().ok_or_else(|| CorpusError::UnknownCase(id.to_string()).into())
    }

    /// Adds a case after checking the candidate invariants. Refuses to replace an existing id.
    pub fn add_case(&self, case: SourceCase) -> Result<(), RunError> {
        let mut corpus = self.corpus()?;
        let id = case.id.clone();
        corpus.add_case(case)?;
        let violations: Vec<String> =
            corpus.validate().into_iter().filter(|v| v.case_id == id).map(|v| v.message).collect();
        if !violations.is_empty() {
            return Err(RunError::Usage(format!("case `{id}` is invalid: {}", violations.join("; "))));
        }
        corpus::save_case(&self.dir("cases"), corpus.get(&id).expect("just added"))?;
        Ok(())
    }

    pub fn template(&self) -> Result<QuestionnaireTemplate, RunError> {
        let path = self.dir("templates").join(TEMPLATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        Ok(QuestionnaireTemplate::parse(&text)?)
    }

    pub fn concepts(&self) -> Result<BTreeMap<String, Vec<String>>, RunError> {
        Ok(persona::load_concepts(&self.dir("templates").join(CONCEPTS_FILE))?)
    }

    pub fn roles(&self, ids: &[String]) -> Result<Vec<ReaderRole>, RunError> {
        Ok(persona::load_roles(&self.dir("personas"), ids)?)
    }

    pub fn plans(&self, corpus: &Corpus) -> Result<BTreeMap<String, BlindPlan>, RunError> {
        let mut out = BTreeMap::new();
        for case in corpus.cases() {
            if let Some(plan) = blinding::load_plan(&self.dir("blinding"), &case.id)? {
                plan.check_against(case)?;
                out.insert(case.id.clone(), plan);
            }
        }
        Ok(out)
    }

    /// Creates a plan for every case that lacks one. Existing plans are kept;
    /// a request that would produce a different plan is refused.
    /// With a seed, each case is shuffled with `derive_seed(seed, case_id)`.
    pub fn blind(&self, seed: Option<u64>, fixture_name: Option<&str>) -> Result<Vec<BlindPlan>, RunError> {
        let corpus = self.corpus()?;
        if corpus.is_empty() {
            return Err(RunError::Usage("no cases to blind".into()));
        }
        let seed = seed.unwrap_or(self.manifest.global_seed);
        let mut out = Vec::new();
        for case in corpus.cases() {
            let fresh = match fixture_name {
                Some(name) => blinding::fixture_plan(name, case)?,
                None => make_blind_plan(case, derive_seed(seed, &case.id))?,
            };
            match blinding::load_plan(&self.dir("blinding"), &case.id)? {
                Some(existing) if existing.permutation == fresh.permutation && existing.fixture == fresh.fixture => {
                    out.push(existing)
                }
                Some(_) => {
                    return Err(RunError::Usage(format!(
                        "case `{}` already has a different blinding plan; delete blinding/{}.json to re-blind",
                        case.id, case.id
                    )))
                }
                None => {
                    blinding::save_plan(&self.dir("blinding"), &fresh)?;
                    out.push(fresh);
                }
            }
        }
        Ok(out)
    }

    fn client(&self, provider_id: &str, backend: Backend, store: TranscriptStore) -> Result<Client, RunError> {
        let cfg = self.manifest.provider(provider_id)?;
        Ok(match backend {
            Backend::Http => Client::http(cfg.clone(), store),
            Backend::Mock(seed) => Client::mock(cfg, derive_seed(seed, provider_id), store),
        })
    }

    pub fn session(&self, id: &str) -> Result<ScaffoldSession, RunError> {
        Ok(ScaffoldSession::load(&self.dir("sessions"), id)?)
    }

    fn session_client(&self, session: &ScaffoldSession, backend: Backend) -> Result<Client, RunError> {
        let store = ScaffoldSession::transcript_store(&self.dir("sessions"), &session.session_id);
        self.client(&session.translation_model, backend, store)
    }

    /// Starts a session and sends the baseline prompt.
    pub fn scaffold_start(&self, case_id: &str, model: Option<&str>, backend: Backend) -> Result<ScaffoldSession, RunError> {
        let corpus = self.corpus()?;
        let model = model.unwrap_or(&self.manifest.translation_model).to_string();
        self.manifest.provider(&model)?;
        let mut session = scaffold::start_session(&corpus, case_id, &model, &self.dir("sessions"))?;
        let client = self.session_client(&session, backend)?;
        let case = corpus.get(case_id).expect("checked by start_session");
        scaffold::send_baseline(&mut session, case, &client)?;
        session.save(&self.dir("sessions"))?;
        Ok(session)
    }

    pub fn scaffold_diagnose(&self, session_id: &str, diagnosis: Diagnosis) -> Result<ScaffoldSession, RunError> {
        let mut session = self.session(session_id)?;
        scaffold::record_diagnosis(&mut session, diagnosis)?;
        session.save(&self.dir("sessions"))?;
        Ok(session)
    }

    /// Sends the stage prompt; `stay` keeps the session in its current stage.
    pub fn scaffold_advance(
        &self,
        session_id: &str,
        supplement: &str,
        stay: bool,
        backend: Backend,
    ) -> Result<ScaffoldSession, RunError> {
        let mut session = self.session(session_id)?;
        let case = self.case(&session.case_id)?;
        let client = self.session_client(&session, backend)?;
        if stay {
            scaffold::iterate(&mut session, &case, supplement, &client)?;
        } else {
            scaffold::advance(&mut session, &case, supplement, &client)?;
        }
        session.save(&self.dir("sessions"))?;
        Ok(session)
    }

    /// Freezes the session and writes the chosen text into the case file.
    pub fn scaffold_finalize(&self, session_id: &str, text: &str) -> Result<ScaffoldSession, RunError> {
        let mut session = self.session(session_id)?;
        let mut corpus = self.corpus()?;
        scaffold::finalize(&mut session, &mut corpus, text)?;
        corpus::save_case(&self.dir("cases"), corpus.get(&session.case_id).expect("finalize checked the case"))?;
        session.save(&self.dir("sessions"))?;
        Ok(session)
    }

    /// Runs the judge grid for the given roles and models.
    pub fn evaluate(
        &self,
        role_ids: &[String],
        models: &[String],
        backend: Backend,
        opts: RunOptions,
        repeats: u32,
    ) -> Result<GridOutcome, RunError> {
        let corpus = self.corpus()?;
        let plans = self.plans(&corpus)?;
        let roles = self.roles(role_ids)?;
        let template = self.template()?;
        let concepts = self.concepts()?;
        let leaks = LeakScanner::for_corpus(&corpus);
        let store = TranscriptStore::new(self.dir("transcripts"));
        let clients = models
            .iter()
            .map(|m| Ok((m.clone(), self.client(m, backend, store.clone())?)))
            .collect::<Result<BTreeMap<_, _>, RunError>>()?;
        let jobs = judge::plan_grid(&corpus, &plans, &roles, models, repeats)?;
        let records_dir = self.dir("records");
        let ctx = GridContext {
            corpus: &corpus,
            plans: &plans,
            roles: &roles,
            template: &template,
            concepts: &concepts,
            options: self.manifest.render.clone(),
            leaks: &leaks,
            clients: &clients,
            records_dir: &records_dir,
        };
        Ok(judge::run_grid(&ctx, &jobs, opts)?)
    }

    pub fn records(&self) -> Result<Vec<EvaluationRecord>, RunError> {
        Ok(judge::load_records(&self.dir("records"))?)
    }

    /// Re-parses every stored response. Returns how many records changed.
    pub fn parse_replay(&self) -> Result<usize, RunError> {
        let mut changed = 0;
        for mut rec in self.records()? {
            let before = rec.clone();
            rec.reparse();
            if rec != before {
                rec.save(&self.dir("records"))?;
                changed += 1;
            }
        }
        Ok(changed)
    }

    /// Replaces one record's scores with operator-entered values (`label -> dimension -> score`).
    pub fn parse_manual(&self, stem: &str, scores: BTreeMap<usize, BTreeMap<crate::Dimension, u8>>) -> Result<EvaluationRecord, RunError> {
        let path = self.dir("records").join(format!("{stem}.json"));
        if !path.exists() {
            return Err(RunError::Usage(format!("no record `{stem}` under records/")));
        }
        let mut rec = EvaluationRecord::load(&path)?;
        let flat = scores
            .into_iter()
            .flat_map(|(label, dims)| dims.into_iter().map(move |(d, s)| ((label, d), s)))
            .collect();
        rec.set_manual_scores(flat).map_err(RunError::Usage)?;
        rec.save(&self.dir("records"))?;
        Ok(rec)
    }

    /// Unblinds every record into a score table. Returns the table and the
    /// number of incomplete records left out.
    pub fn score_table(&self, include_incomplete: bool) -> Result<(ScoreTable, usize), RunError> {
        let corpus = self.corpus()?;
        let plans = self.plans(&corpus)?;
        let mut table = ScoreTable::new();
        let mut excluded = 0;
        for rec in self.records()? {
            if !rec.complete && !include_incomplete {
                excluded += 1;
                continue;
            }
            let case = corpus.get(&rec.case_id).ok_or_else(|| CorpusError::UnknownCase(rec.case_id.clone()))?;
            let plan = plans.get(&rec.case_id).ok_or_else(|| JudgeError::MissingPlan(rec.case_id.clone()))?;
            for (label, dims) in &rec.scores {
                let cand_id = blinding::unblind(plan, *label)?;
                let slot = case.candidate(cand_id).map_or(cand_id, |c| c.slot()).to_string();
                for (dim, score) in dims {
                    table.insert(ScoreRow {
                        case_id: rec.case_id.clone(),
                        role_id: rec.role_id.clone(),
                        model_id: rec.model_id.clone(),
                        candidate_id: slot.clone(),
                        dimension: *dim,
                        score: *score,
                        repeat: rec.repeat,
                    })?;
                }
            }
        }
        Ok((table, excluded))
    }

    pub fn code_key(&self) -> Result<Vec<CodeKeyEntry>, RunError> {
        let corpus = self.corpus()?;
        let plans = self.plans(&corpus)?;
        let mut out = Vec::new();
        for (case_id, plan) in &plans {
            let case = corpus.get(case_id).expect("plans are loaded per case");
            for (i, cand_id) in plan.permutation.iter().enumerate() {
                let c = case.candidate(cand_id).expect("plan matches case");
                out.push(CodeKeyEntry {
                    case_id: case_id.clone(),
                    label: i + 1,
                    candidate_id: c.id.clone(),
                    slot: c.slot().to_string(),
                    translator_label: c.translator_label.clone(),
                    origin: c.origin.as_str().to_string(),
                });
            }
        }
        Ok(out)
    }

    /// Writes `report/scores.csv`.
    pub fn stats_export(&self, include_incomplete: bool) -> Result<(PathBuf, usize), RunError> {
        let (table, _) = self.score_table(include_incomplete)?;
        let path = self.dir("report").join("scores.csv");
        fs::create_dir_all(self.dir("report")).map_err(|e| io(&self.dir("report"), e))?;
        table.save_csv(&path)?;
        Ok((path, table.len()))
    }

    /// Runs every analysis and writes `report/results.txt` and `report/results.json`.
    pub fn stats_run(&self, opts: &AnalysisOptions) -> Result<AnalysisSet, RunError> {
        let (table, _) = self.score_table(opts.include_incomplete)?;
        let set = report::run_analyses(&table, opts.repeat_policy, opts.battery);
        let dir = self.dir("report");
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let txt = dir.join("results.txt");
        fs::write(&txt, report::results_text(&set)).map_err(|e| io(&txt, e))?;
        let json = dir.join("results.json");
        let mut body = serde_json::to_string_pretty(&set).expect("results serialize");
        body.push('\n');
        fs::write(&json, body).map_err(|e| io(&json, e))?;
        Ok(set)
    }

    /// Writes the full report under `report/`.
    pub fn report_build(&self, opts: &AnalysisOptions) -> Result<PathBuf, RunError> {
        let (table, excluded) = self.score_table(opts.include_incomplete)?;
        let set = report::run_analyses(&table, opts.repeat_policy, opts.battery);
        let key = self.code_key()?;
        let inputs = ReportInputs {
            table: &table,
            analyses: &set,
            code_key: &key,
            repeat_policy: opts.repeat_policy,
            excluded_records: excluded,
        };
        report::write_report(&inputs, &self.dir("report"))?;
        Ok(self.dir("report"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalysisOptions {
    pub include_incomplete: bool,
    pub repeat_policy: RepeatPolicy,
    pub battery: BatteryOptions,
}

impl AnalysisOptions {
    pub fn with_blocking(blocking: BlockingScheme) -> Self {
        Self { battery: BatteryOptions { blocking, ..Default::default() }, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub sessions: Vec<String>,
    pub outcome: GridOutcome,
    pub report_dir: PathBuf,
}

/// The whole pipeline on the bundled corpus with mock providers:
/// init, scaffold each case, blind, evaluate 4 × 3 × 2, export, analyse, report.
pub fn demo(root: &Path, seed: u64) -> Result<DemoSummary, RunError> {
    let run = RunDirectory::init(root, seed)?;
    let _lock = run.lock()?;
    let backend = Backend::Mock(seed);
    for case in fixture::cases() {
        corpus::save_case(&run.dir("cases"), &case)?;
    }

    let mut sessions = Vec::new();
    for script in fixture::SCAFFOLD_SCRIPTS {
        let case = run.case(script.case_id)?;
        let s = run.scaffold_start(script.case_id, None, backend)?;
        let mut diagnosis = Diagnosis::failing(script.failure_modes.iter().copied());
        diagnosis.notes = script.notes.to_string();
        let mut s = run.scaffold_diagnose(&s.session_id, diagnosis)?;
        while s.stage != scaffold::Stage::Polish {
            let supplement = match s.stage {
                scaffold::Stage::InjectKnowledge => script.knowledge.unwrap_or_default(),
                scaffold::Stage::IdentifyFigures => script.figures.unwrap_or_default(),
                other => return Err(RunError::Usage(format!("demo script stuck at stage {other}"))),
            };
            s = run.scaffold_advance(&s.session_id, supplement, false, backend)?;
        }
        run.scaffold_advance(&s.session_id, script.polish, true, backend)?;
        // The bundled adjusted text stands in for the operator's final choice.
        let chosen = case
            .candidates
            .iter()
            .find(|c| c.origin == corpus::Origin::LlmAdjusted)
            .map(|c| c.text.clone())
            .ok_or_else(|| RunError::Usage(format!("fixture case `{}` has no adjusted text", case.id)))?;
        let s = run.scaffold_finalize(&s.session_id, &chosen)?;
        sessions.push(s.session_id);
    }

    run.blind(Some(seed), None)?;
    let roles: Vec<String> = fixture::PERSONA_TEXT.iter().map(|(id, _)| id.to_string()).collect();
    let models: Vec<String> = fixture::JUDGES.iter().map(|m| m.to_string()).collect();
    let outcome = run.evaluate(&roles, &models, backend, RunOptions { concurrency: 4, resume: false }, 1)?;
    let opts = AnalysisOptions::default();
    run.stats_export(false)?;
    run.stats_run(&opts)?;
    let report_dir = run.report_build(&opts)?;
    Ok(DemoSummary { sessions, outcome, report_dir })
}
