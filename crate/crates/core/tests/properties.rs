use std::collections::BTreeMap;

use blindjudge::blinding::{make_blind_plan, unblind};
use blindjudge::corpus::{self, Corpus};
use blindjudge::fixture;
use blindjudge::judge::RunOptions;
use blindjudge::parse::parse_response;
use blindjudge::persona::{concepts_for, render_evaluation_prompt, LeakScanner, RenderOptions};
use blindjudge::provider::{mock_judge_response, Client, Message, ProviderConfig, TranscriptStore};
use blindjudge::report::{self, ReportInputs};
use blindjudge::run::{Backend, RunDirectory};
use blindjudge::scaffold::{self, Diagnosis, FailureMode, ScaffoldSession, Stage};
use blindjudge::stats::{
    average_ranks, bonferroni, friedman, kendall_w, spearman_rho, version_difference_battery, wilcoxon_signed_rank,
    BatteryOptions, RepeatPolicy, ScoreRow, ScoreTable, WilcoxonMode, WilcoxonOptions,
};
use blindjudge::Dimension;
use proptest::prelude::*;

fn increasing(x: f64) -> f64 {
    x * x * x + 2.0 * x + x.exp()
}

proptest! {
    #[test]
    fn rank_sums_are_triangular(values in prop::collection::vec(0u8..6, 1..80)) {
        let v: Vec<f64> = values.iter().map(|x| f64::from(*x)).collect();
        let n = v.len() as f64;
        prop_assert_eq!(average_ranks(&v).iter().sum::<f64>(), n * (n + 1.0) / 2.0);
    }

    #[test]
    fn kendall_chi2_identity_without_ties(m in 2usize..6, n in 2usize..14, seed in any::<u64>()) {
        let mut rng = blindjudge::rng::SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut row: Vec<f64> = (1..=n).map(|v| v as f64).collect();
                for i in (1..n).rev() {
                    row.swap(i, rng.below(i as u64 + 1) as usize);
                }
                row
            })
            .collect();
        let r = kendall_w(&rows).unwrap();
        prop_assert!((r.chi2.unwrap() - m as f64 * (n as f64 - 1.0) * r.statistic).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.statistic));
    }

    #[test]
    fn rank_statistics_survive_increasing_maps(
        a in prop::collection::vec(1u8..6, 12),
        b in prop::collection::vec(1u8..6, 12),
        c in prop::collection::vec(1u8..6, 12),
    ) {
        let rows: Vec<Vec<f64>> = [a, b, c].iter().map(|r| r.iter().map(|x| f64::from(*x)).collect()).collect();
        let mapped: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| increasing(*x)).collect()).collect();
        if let (Ok(x), Ok(y)) = (spearman_rho(&rows[0], &rows[1]), spearman_rho(&mapped[0], &mapped[1])) {
            prop_assert!((x.statistic - y.statistic).abs() < 1e-9);
        }
        if let (Ok(x), Ok(y)) = (kendall_w(&rows), kendall_w(&mapped)) {
            prop_assert!((x.statistic - y.statistic).abs() < 1e-9);
        }
        let blocks: Vec<Vec<f64>> = (0..12).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let mapped_blocks: Vec<Vec<f64>> = blocks.iter().map(|b| b.iter().map(|x| increasing(*x)).collect()).collect();
        if let (Ok(x), Ok(y)) = (friedman(&blocks), friedman(&mapped_blocks)) {
            prop_assert!((x.statistic - y.statistic).abs() < 1e-9);
        }
    }

    #[test]
    fn friedman_ignores_column_order(
        blocks in prop::collection::vec(prop::collection::vec(1u8..6, 4), 3..15),
        order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let b: Vec<Vec<f64>> = blocks.iter().map(|r| r.iter().map(|x| f64::from(*x)).collect()).collect();
        let shuffled: Vec<Vec<f64>> = b.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect();
        match (friedman(&b), friedman(&shuffled)) {
            (Ok(x), Ok(y)) => prop_assert!((x.statistic - y.statistic).abs() < 1e-9 && x.p_value == y.p_value),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn exact_wilcoxon_p_is_a_count_over_two_to_the_n(d in prop::collection::vec(-5i8..=5, 1..17)) {
        let x: Vec<f64> = d.iter().map(|v| f64::from(*v)).collect();
        let zero = vec![0.0; x.len()];
        let opts = WilcoxonOptions { mode: WilcoxonMode::Exact, ..Default::default() };
        if let Ok(r) = wilcoxon_signed_rank(&x, &zero, opts) {
            let n = r.n_objects.unwrap() as i32;
            let scaled = r.p_value * 2f64.powi(n);
            prop_assert_eq!(scaled, scaled.round());
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }
    }

    #[test]
    fn spearman_is_symmetric_and_bounded(pairs in prop::collection::vec((1u8..6, 1u8..6), 3..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        if let (Ok(a), Ok(b)) = (spearman_rho(&x, &y), spearman_rho(&y, &x)) {
            prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a.statistic));
        }
    }

    #[test]
    fn bonferroni_scales_and_clamps(ps in prop::collection::vec(0.0f64..=1.0, 1..8), extra in 0usize..4) {
        let results: Vec<_> = ps
            .iter()
            .map(|p| {
                let mut r = friedman(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
                r.p_value = *p;
                r
            })
            .collect();
        let family = ps.len() + extra;
        for (r, p) in bonferroni(&results, family).unwrap().iter().zip(&ps) {
            let adj = r.effective_p();
            prop_assert_eq!(adj, (p * family as f64).min(1.0));
            prop_assert!(adj >= *p);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_candidates_permutes_pairwise_results(
        scores in prop::collection::vec(prop::collection::vec(1u8..6, 4), 6..14),
        names in Just(vec!["w", "x", "y", "z"]).prop_shuffle(),
    ) {
        let build = |labels: &[&str]| {
            let rows = scores.iter().enumerate().flat_map(|(b, block)| {
                block.iter().zip(labels).map(move |(s, cand)| ScoreRow {
                    case_id: format!("c{}", b / 5),
                    role_id: "R1".into(),
                    model_id: "gpt".into(),
                    candidate_id: cand.to_string(),
                    dimension: Dimension::ALL[b % 5],
                    score: *s,
                    repeat: 0,
                })
            });
            version_difference_battery(&ScoreTable::from_rows(rows).unwrap(), BatteryOptions::default())
        };
        let base = ["a", "b", "c", "d"];
        let (Ok(x), Ok(y)) = (build(&base), build(&names)) else {
            return Ok(());
        };
        let fx = x.friedman.as_ref().unwrap().statistic;
        let fy = y.friedman.as_ref().unwrap().statistic;
        prop_assert!((fx - fy).abs() < 1e-9);
        let rename: BTreeMap<&str, &str> = base.iter().copied().zip(names.iter().copied()).collect();
        for p in &x.pairwise {
            let (a, b) = (rename[p.a.as_str()], rename[p.b.as_str()]);
            let q = y.pairwise.iter().find(|q| (q.a == a && q.b == b) || (q.a == b && q.b == a)).unwrap();
            prop_assert_eq!(p.result.as_ref().map(|r| r.p_value), q.result.as_ref().map(|r| r.p_value));
            prop_assert_eq!(p.significant_05, q.significant_05);
        }
    }

    #[test]
    fn blinding_round_trips(case_idx in 0usize..4, seed in any::<u64>()) {
        let case = &fixture::cases()[case_idx];
        let plan = make_blind_plan(case, seed).unwrap();
        let again = make_blind_plan(case, seed).unwrap();
        prop_assert_eq!(&plan.permutation, &again.permutation);
        let mut seen: Vec<&str> = (1..=plan.k()).map(|l| unblind(&plan, l).unwrap()).collect();
        for cand in &case.candidates {
            prop_assert_eq!(unblind(&plan, plan.label_of(&cand.id).unwrap()).unwrap(), cand.id.as_str());
        }
        seen.sort();
        let mut ids: Vec<&str> = case.candidates.iter().map(|c| c.id.as_str()).collect();
        ids.sort();
        prop_assert_eq!(seen, ids);
        prop_assert!(unblind(&plan, 0).is_err() && unblind(&plan, plan.k() + 1).is_err());
    }

    #[test]
    fn rendered_prompts_carry_no_provenance(seed in any::<u64>()) {
        let corpus = fixture::corpus();
        let leaks = LeakScanner::for_corpus(&corpus);
        let (template, concepts) = (fixture::template(), fixture::concepts());
        for case in corpus.cases() {
            let plan = make_blind_plan(case, seed).unwrap();
            for role in fixture::roles() {
                let p = render_evaluation_prompt(
                    &role, case, &plan, &template, &concepts_for(&concepts, case), &RenderOptions::default(), &leaks,
                )
                .unwrap();
                let text = format!("{}\n{}", p.system_text, p.user_text);
                prop_assert!(leaks.scan(&text).is_empty());
                for cand in &case.candidates {
                    prop_assert!(!text.contains(&cand.translator_label));
                }
            }
        }
    }

    #[test]
    fn parsing_is_pure(text in ".{0,400}", k in 1usize..6) {
        prop_assert_eq!(parse_response(&text, k), parse_response(&text, k));
    }

    #[test]
    fn mock_answers_parse_completely(seed in 1u64..5000, case_idx in 0usize..4) {
        let corpus = fixture::corpus();
        let case = &corpus.cases()[case_idx];
        let plan = make_blind_plan(case, seed).unwrap();
        let (template, concepts) = (fixture::template(), fixture::concepts());
        let p = render_evaluation_prompt(
            &fixture::roles()[0], case, &plan, &template, &concepts_for(&concepts, case), &RenderOptions::default(),
            &LeakScanner::for_corpus(&corpus),
        )
        .unwrap();
        let reply = mock_judge_response(seed, &p.user_text);
        let (parsed, _) = parse_response(&reply, case.k()).unwrap();
        prop_assert!(parsed.is_complete(case.k()));
        prop_assert_eq!(parse_response(&reply, case.k()).unwrap().0, parsed);
    }

    #[test]
    fn corpus_validation_is_idempotent_and_round_trips(
        drop_idx in 0usize..4,
        title in "\\PC{0,40}",
        text in "\\PC{0,200}",
    ) {
        let mut corpus = fixture::corpus();
        let mut case = corpus.cases()[0].clone();
        case.title = title;
        case.candidates[drop_idx].text = text;
        corpus.upsert_case(case);
        let first = corpus.validate();
        prop_assert_eq!(&first, &corpus.validate());
        let dir = tempfile::tempdir().unwrap();
        corpus.save_dir(dir.path()).unwrap();
        let back = Corpus::load_dir(dir.path()).unwrap();
        prop_assert_eq!(back.cases(), corpus.cases());
        prop_assert_eq!(back.validate(), first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transcripts_detect_tampering(body in "\\PC{1,200}", seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path());
        let cfg = ProviderConfig::defaults().into_iter().next().unwrap();
        let client = Client::mock(&cfg, seed, store.clone());
        let done = client.complete(&[Message::user(body)], "prop/tamper").unwrap();
        let mut t = store.load(&done.transcript.call_id).unwrap();
        prop_assert!(t.verify());
        t.request_body.push(' ');
        prop_assert!(!t.verify());
    }

    #[test]
    fn scaffold_stages_never_move_backwards(
        ops in prop::collection::vec(0u8..3, 1..8),
        modes in prop::collection::btree_set(prop_oneof![
            Just(FailureMode::KnowledgeGap), Just(FailureMode::FigureRecognitionGap), Just(FailureMode::LinguisticGap)
        ], 1..4),
        seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = fixture::corpus();
        let case = corpus.get("case1").unwrap();
        let cfg = ProviderConfig::defaults().into_iter().find(|p| p.provider_id == fixture::TRANSLATOR).unwrap();
        let mut s = scaffold::start_session(&corpus, "case1", fixture::TRANSLATOR, dir.path()).unwrap();
        let client = Client::mock(&cfg, seed, ScaffoldSession::transcript_store(dir.path(), &s.session_id));
        scaffold::send_baseline(&mut s, case, &client).unwrap();
        scaffold::record_diagnosis(&mut s, Diagnosis::failing(modes)).unwrap();
        let mut stage = s.stage;
        for op in ops {
            let _ = match op {
                0 => scaffold::advance(&mut s, case, "more", &client).map(|_| ()),
                1 => scaffold::iterate(&mut s, case, "again", &client).map(|_| ()),
                _ => scaffold::record_diagnosis(&mut s, Diagnosis::adequate()).map(|_| ()),
            };
            prop_assert!(s.stage >= stage, "{:?} -> {:?}", stage, s.stage);
            prop_assert!(s.stage != Stage::Finalized);
            stage = s.stage;
        }
        prop_assert!(scaffold::replay_mismatches(&s, case).is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn grid_accounting_holds_for_any_concurrency(concurrency in 1usize..8, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDirectory::init(dir.path(), seed).unwrap();
        for case in fixture::cases() {
            corpus::save_case(&run.dir("cases"), &case).unwrap();
        }
        run.blind(None, None).unwrap();
        let roles = vec!["R1".to_string(), "R3".to_string()];
        let models = vec!["gpt".to_string(), "gemini".to_string()];
        let out = run
            .evaluate(&roles, &models, Backend::Mock(seed), RunOptions { concurrency, resume: false }, 1)
            .unwrap();
        prop_assert_eq!(out.records.len() + out.failures.len(), out.jobs.len());
        prop_assert_eq!(out.jobs.len(), 16);
        let stems: Vec<String> = out.records.iter().map(|r| r.stem()).collect();
        let expected: Vec<String> = out.jobs.iter().map(|j| j.stem()).collect();
        prop_assert_eq!(stems, expected);
        for entry in std::fs::read_dir(run.dir("records")).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                let text = std::fs::read_to_string(&path).unwrap();
                for needle in ["llm_baseline", "llm_adjusted", "\"origin\"", "translator_label"] {
                    prop_assert!(!text.contains(needle), "{} in {}", needle, path.display());
                }
            }
        }
    }

    #[test]
    fn report_means_recompute_from_exported_csv(
        scores in prop::collection::vec(1u8..6, 2 * 2 * 2 * 4 * 5),
        drop in prop::collection::vec(any::<bool>(), 2 * 2 * 2 * 4 * 5),
    ) {
        let cands = ["baseline", "final", "unschuld", "li"];
        let mut rows = Vec::new();
        let mut i = 0;
        for case in ["case1", "case2"] {
            for role in ["R1", "R2"] {
                for model in ["gpt", "gemini"] {
                    for cand in cands {
                        for dim in Dimension::ALL {
                            // Drop roughly a quarter of cells to exercise unbalanced means.
                            if !(drop[i] && scores[i] == 1) {
                                rows.push(ScoreRow {
                                    case_id: case.into(),
                                    role_id: role.into(),
                                    model_id: model.into(),
                                    candidate_id: cand.into(),
                                    dimension: dim,
                                    score: scores[i],
                                    repeat: 0,
                                });
                            }
                            i += 1;
                        }
                    }
                }
            }
        }
        let table = ScoreTable::from_rows(rows).unwrap();
        let analyses = report::run_analyses(&table, RepeatPolicy::Average, BatteryOptions::default());
        let inputs = ReportInputs {
            table: &table,
            analyses: &analyses,
            code_key: &[],
            repeat_policy: RepeatPolicy::Average,
            excluded_records: 0,
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        report::write_report(&inputs, a.path()).unwrap();
        report::write_report(&inputs, b.path()).unwrap();
        for f in ["radar.csv", "roles.csv", "results.txt", "report.md", "cases/case1.csv", "cases/case2.csv"] {
            prop_assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }

        // Recompute every mean from the exported long table alone.
        let exported = ScoreTable::from_csv(&table.to_csv()).unwrap();
        let mean_of = |keep: &dyn Fn(&ScoreRow) -> bool| {
            let v: Vec<f64> = exported.rows().filter(|r| keep(r)).map(|r| f64::from(r.score)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let read = |name: &str| -> Vec<BTreeMap<String, String>> {
            let text = std::fs::read_to_string(a.path().join(name)).unwrap();
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap().split(',').collect();
            lines.map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect()).collect()
        };
        for row in read("radar.csv") {
            let want = mean_of(&|r| r.dimension.as_str() == row["dimension"] && r.candidate_id == row["candidate"]);
            prop_assert!((row["mean"].parse::<f64>().unwrap() - want).abs() < 1e-9);
        }
        for row in read("roles.csv") {
            let want = mean_of(&|r| r.role_id == row["role"] && r.candidate_id == row["candidate"]);
            prop_assert!((row["mean"].parse::<f64>().unwrap() - want).abs() < 1e-9);
        }
        for case in ["case1", "case2"] {
            for row in read(&format!("cases/{case}.csv")) {
                let want = mean_of(&|r| r.case_id == case && r.candidate_id == row["candidate"]);
                prop_assert!((row["mean"].parse::<f64>().unwrap() - want).abs() < 1e-9);
            }
        }
    }
}
