//! `blindjudge` command line: one verb per pipeline step over a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blindjudge::corpus::{self, SourceCase};
use blindjudge::judge::RunOptions;
use blindjudge::run::{self, AnalysisOptions, Backend, RunDirectory, RunError};
use blindjudge::scaffold::{Diagnosis, FailureMode, ScaffoldSession};
use blindjudge::stats::{BlockingScheme, FriedmanPValue, RepeatPolicy};
use blindjudge::Dimension;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blindjudge", version, about = "Blinded multi-judge evaluation of competing translations")]
struct Cli {
    /// Run directory (ignored by `init` and `demo`, which take it positionally).
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory with the bundled personas and questionnaire.
    Init {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    #[command(subcommand)]
    Case(CaseCmd),
    /// Assign randomized public labels to every case without a plan.
    Blind {
        #[arg(long, conflicts_with = "fixture")]
        seed: Option<u64>,
        /// Use a fixed layout instead of a shuffle (`published-layout`).
        #[arg(long)]
        fixture: Option<String>,
    },
    #[command(subcommand)]
    Scaffold(ScaffoldCmd),
    /// Send every (case, role, model) prompt to the judges.
    Evaluate {
        #[arg(long, value_delimiter = ',', required = true)]
        roles: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Keep existing records and run only the missing jobs.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
    },
    /// Re-parse stored responses, or enter scores by hand for one record.
    Parse {
        #[arg(long, required_unless_present = "manual", conflicts_with = "manual")]
        replay: bool,
        /// Record stem, e.g. `case1_R1_gpt`.
        #[arg(long, requires = "scores")]
        manual: Option<String>,
        /// JSON file `{"<label>": {"<Dimension>": score}}`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    #[command(subcommand)]
    Stats(StatsCmd),
    #[command(subcommand)]
    Report(ReportCmd),
    /// Run the whole pipeline on the bundled four-case corpus with mock providers.
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CaseCmd {
    /// Add a case from a JSON file.
    Add { file: PathBuf },
    List {
        #[arg(long)]
        json: bool,
    },
    Show {
        id: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ScaffoldCmd {
    /// Open a session for a case and send the baseline prompt.
    Start {
        case: String,
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Record the expert diagnosis of the baseline translation.
    Diagnose {
        session: String,
        #[arg(long, conflicts_with = "gap", required_unless_present = "gap")]
        adequate: bool,
        /// Failure mode: knowledge, figure, or linguistic. Repeatable.
        #[arg(long)]
        gap: Vec<FailureMode>,
        #[arg(long, default_value = "")]
        notes: String,
    },
    /// Send the next stage prompt with an optional supplement.
    Advance {
        session: String,
        #[command(flatten)]
        text: TextArgs,
        /// Repeat the current stage instead of moving on.
        #[arg(long)]
        stay: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Freeze the session and store the chosen text in the case.
    Finalize {
        session: String,
        #[command(flatten)]
        text: TextArgs,
    },
    List {
        #[arg(long)]
        json: bool,
    },
    Show {
        session: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Write the unblinded score table to report/scores.csv.
    Export {
        #[arg(long)]
        include_incomplete: bool,
    },
    /// Run every analysis and write report/results.txt.
    Run {
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    Build {
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Use the offline mock provider.
    #[arg(long)]
    mock: bool,
    /// Mock seed; defaults to the manifest seed.
    #[arg(long, requires = "mock")]
    seed: Option<u64>,
}

impl BackendArgs {
    fn resolve(&self, run: &RunDirectory) -> Backend {
        if self.mock {
            Backend::Mock(self.seed.unwrap_or(run.manifest().global_seed))
        } else {
            Backend::Http
        }
    }
}

#[derive(Args)]
struct TextArgs {
    #[arg(long, conflicts_with = "text_file")]
    text: Option<String>,
    #[arg(long)]
    text_file: Option<PathBuf>,
}

impl TextArgs {
    fn read(&self) -> Result<String> {
        match (&self.text, &self.text_file) {
            (Some(t), _) => Ok(t.clone()),
            (None, Some(p)) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            (None, None) => Ok(String::new()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Repeats {
    Average,
    Separate,
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, default_value = "case-role-model-dimension", value_parser = parse_blocking)]
    blocking: BlockingScheme,
    /// Friedman p-value tail: iman-davenport or chi-square.
    #[arg(long, default_value = "iman-davenport", value_parser = parse_friedman)]
    friedman_p: FriedmanPValue,
    #[arg(long, value_enum, default_value = "average")]
    repeats: Repeats,
    #[arg(long)]
    include_incomplete: bool,
}

fn parse_blocking(s: &str) -> Result<BlockingScheme, String> {
    s.parse()
}

fn parse_friedman(s: &str) -> Result<FriedmanPValue, String> {
    s.parse()
}

impl AnalysisArgs {
    fn options(&self) -> AnalysisOptions {
        let mut opts = AnalysisOptions::with_blocking(self.blocking);
        opts.include_incomplete = self.include_incomplete;
        opts.battery.friedman = self.friedman_p;
        opts.repeat_policy = match self.repeats {
            Repeats::Average => RepeatPolicy::Average,
            Repeats::Separate => RepeatPolicy::Separate,
        };
        opts
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<RunError>().map_or("input", RunError::kind);
            let msg = format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { dir, seed } => {
            RunDirectory::init(&dir, seed)?;
            println!("initialized {} (seed {seed})", dir.display());
        }
        Command::Demo { dir, seed } => {
            let summary = run::demo(&dir, seed)?;
            println!(
                "demo: {} sessions, {} records, {} failures; report in {}",
                summary.sessions.len(),
                summary.outcome.records.len(),
                summary.outcome.failures.len(),
                summary.report_dir.display()
            );
        }
        Command::Case(cmd) => case(&cli.dir, cmd)?,
        Command::Blind { seed, fixture } => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            for plan in run.blind(seed, fixture.as_deref())? {
                println!("{}\t{}", plan.case_id, plan.permutation.join(","));
            }
        }
        Command::Scaffold(cmd) => scaffold(&cli.dir, cmd)?,
        Command::Evaluate { roles, models, backend, concurrency, resume, repeats } => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            let opts = RunOptions { concurrency, resume };
            let outcome = run.evaluate(&roles, &models, backend.resolve(&run), opts, repeats)?;
            println!(
                "evaluate: {} jobs, {} records ({} resumed), {} failures",
                outcome.jobs.len(),
                outcome.records.len(),
                outcome.resumed,
                outcome.failures.len()
            );
            for f in &outcome.failures {
                println!("failed\t{}\t{}", f.job.stem(), f.cause);
            }
            if !outcome.failures.is_empty() {
                bail!("{} jobs failed; see records/failed/", outcome.failures.len());
            }
        }
        Command::Parse { replay, manual, scores } => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            if replay {
                println!("parse: {} records changed", run.parse_replay()?);
            } else if let (Some(stem), Some(path)) = (manual, scores) {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let map: BTreeMap<usize, BTreeMap<Dimension, u8>> =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let rec = run.parse_manual(&stem, map)?;
                println!("parse: {} now has {} scores (complete: {})", rec.stem(), rec.score_count(), rec.complete);
            }
        }
        Command::Stats(StatsCmd::Export { include_incomplete }) => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            let (path, rows) = run.stats_export(include_incomplete)?;
            println!("wrote {rows} rows to {}", path.display());
        }
        Command::Stats(StatsCmd::Run { analysis, json }) => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            let set = run.stats_run(&analysis.options())?;
            if json {
                print_json(&set)?;
            } else {
                print!("{}", blindjudge::report::results_text(&set));
            }
        }
        Command::Report(ReportCmd::Build { analysis }) => {
            let run = RunDirectory::open(&cli.dir)?;
            let _lock = run.lock()?;
            let dir = run.report_build(&analysis.options())?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn case(dir: &Path, cmd: CaseCmd) -> Result<()> {
    let run = RunDirectory::open(dir)?;
    match cmd {
        CaseCmd::Add { file } => {
            let _lock = run.lock()?;
            let case: SourceCase = corpus::load_case(&file)?;
            let id = case.id.clone();
            run.add_case(case)?;
            println!("added case {id}");
        }
        CaseCmd::List { json } => {
            let corpus = run.corpus()?;
            if json {
                let rows: Vec<_> = corpus
                    .cases()
                    .iter()
                    .map(|c| serde_json::json!({"id": c.id, "title": c.title, "candidates": c.k()}))
                    .collect();
                print_json(&rows)?;
            } else {
                for c in corpus.cases() {
                    println!("{}\t{}\t{} candidates", c.id, c.title, c.k());
                }
            }
        }
        CaseCmd::Show { id, json } => {
            let c = run.case(&id)?;
            if json {
                print_json(&c)?;
            } else {
                println!("{} - {}\n\n{}\n", c.id, c.title, c.source_text);
                for cand in &c.candidates {
                    println!("[{}] {} ({}, {})\n{}\n", cand.slot(), cand.id, cand.origin.as_str(), cand.translator_label, cand.text);
                }
            }
        }
    }
    Ok(())
}

fn print_session(s: &ScaffoldSession, json: bool) -> Result<()> {
    if json {
        return print_json(s);
    }
    println!("{}\tcase {}\tstage {}\t{} turns", s.session_id, s.case_id, s.stage, s.turns.len());
    Ok(())
}

fn scaffold(dir: &Path, cmd: ScaffoldCmd) -> Result<()> {
    let run = RunDirectory::open(dir)?;
    match cmd {
        ScaffoldCmd::Start { case, model, backend } => {
            let _lock = run.lock()?;
            let s = run.scaffold_start(&case, model.as_deref(), backend.resolve(&run))?;
            print_session(&s, false)?;
        }
        ScaffoldCmd::Diagnose { session, adequate, gap, notes } => {
            let _lock = run.lock()?;
            let mut d = if adequate { Diagnosis::adequate() } else { Diagnosis::failing(gap) };
            d.notes = notes;
            let s = run.scaffold_diagnose(&session, d)?;
            print_session(&s, false)?;
        }
        ScaffoldCmd::Advance { session, text, stay, backend } => {
            let _lock = run.lock()?;
            let s = run.scaffold_advance(&session, &text.read()?, stay, backend.resolve(&run))?;
            print_session(&s, false)?;
            if let Some(t) = s.turns.last() {
                println!("\n{}", t.response_text);
            }
        }
        ScaffoldCmd::Finalize { session, text } => {
            let _lock = run.lock()?;
            let s = run.scaffold_finalize(&session, &text.read()?)?;
            print_session(&s, false)?;
        }
        ScaffoldCmd::List { json } => {
            let ids = ScaffoldSession::list(&run.dir("sessions"))?;
            if json {
                print_json(&ids)?;
            } else {
                for id in ids {
                    print_session(&run.session(&id)?, false)?;
                }
            }
        }
        ScaffoldCmd::Show { session, json } => print_session(&run.session(&session)?, json)?,
    }
    Ok(())
}
