use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindjudge")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bj(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failure with exactly one `error: <kind>: ...` line on stderr.
fn fails(args: &[&str], kind: &str) -> String {
    let out = bj(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "stderr: {err}");
    assert!(err.starts_with(&format!("error: {kind}: ")), "stderr: {err}");
    err
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn demo_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let s = ok(&["demo", a.to_str().unwrap(), "--seed", "7"]);
    assert!(s.contains("24 records, 0 failures"), "{s}");
    ok(&["demo", b.to_str().unwrap(), "--seed", "7"]);
    let (ta, tb) = (tree(&a.join("report")), tree(&b.join("report")));
    assert!(ta.len() >= 8);
    assert_eq!(ta, tb);

    let results = ok(&["--dir", a.to_str().unwrap(), "stats", "run"]);
    let friedman: Vec<_> = results.lines().filter(|l| l.contains("test=friedman")).collect();
    assert_eq!(friedman.len(), 1);
    assert!(friedman[0].contains("\tdf=3.0\t"));
    let adjusted = results.lines().filter(|l| l.contains("test=wilcoxon") && l.contains("correction=bonferroni\tfamily=6")).count();
    assert_eq!(adjusted, 6);

    fails(&["demo", a.to_str().unwrap()], "already_initialized");
}

#[test]
fn errors_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let r = root.to_str().unwrap();
    fails(&["--dir", r, "case", "list"], "uninitialized");
    ok(&["init", r, "--seed", "3"]);
    fails(&["init", r], "already_initialized");
    fails(&["--dir", r, "case", "show", "nope"], "corpus");
    fails(&["--dir", r, "blind"], "usage");
    fails(&["--dir", r, "stats", "run", "--blocking", "sideways"], "usage");

    fs::write(root.join(".lock"), "").unwrap();
    fails(&["--dir", r, "blind", "--seed", "1"], "locked");
    fs::remove_file(root.join(".lock")).unwrap();

    let manifest = root.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
    fails(&["--dir", r, "case", "list"], "schema_mismatch");
}

#[test]
fn step_by_step_pipeline_with_resume() {
    let dir = tempfile::tempdir().unwrap();
    let demo = dir.path().join("demo");
    ok(&["demo", demo.to_str().unwrap()]);
    let root = dir.path().join("run");
    let r = root.to_str().unwrap();
    ok(&["init", r, "--seed", "11"]);

    // Copy two cases out of the demo run through the JSON read verbs.
    for id in ["case1", "case2"] {
        let json = ok(&["--dir", demo.to_str().unwrap(), "case", "show", id, "--json"]);
        let file = dir.path().join(format!("{id}.json"));
        fs::write(&file, json).unwrap();
        ok(&["--dir", r, "case", "add", file.to_str().unwrap()]);
    }
    fails(&["--dir", r, "case", "add", dir.path().join("case1.json").to_str().unwrap()], "corpus");
    let list: serde_json::Value = serde_json::from_str(&ok(&["--dir", r, "case", "list", "--json"])).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 2);

    // Scaffold one case through every stage with the mock translator.
    let start = ok(&["--dir", r, "scaffold", "start", "case2", "--mock"]);
    assert!(start.starts_with("case2-1\t"), "{start}");
    fails(&["--dir", r, "scaffold", "finalize", "case2-1", "--text", "x"], "scaffold");
    ok(&["--dir", r, "scaffold", "diagnose", "case2-1", "--gap", "figure"]);
    let adv = ok(&["--dir", r, "scaffold", "advance", "case2-1", "--text", "wind = pathogenic wind", "--mock"]);
    assert!(adv.contains("stage polish"), "{adv}");
    ok(&["--dir", r, "scaffold", "advance", "case2-1", "--stay", "--text", "shorter", "--mock"]);
    ok(&["--dir", r, "scaffold", "finalize", "case2-1", "--text", "The chosen rendering."]);
    let session: serde_json::Value =
        serde_json::from_str(&ok(&["--dir", r, "scaffold", "show", "case2-1", "--json"])).unwrap();
    assert_eq!(session["stage"], "finalized");
    assert_eq!(session["turns"].as_array().unwrap().len(), 3);
    fails(&["--dir", r, "scaffold", "advance", "case2-1", "--mock"], "scaffold");

    ok(&["--dir", r, "blind", "--seed", "5"]);
    ok(&["--dir", r, "blind", "--seed", "5"]);

    let eval = ["--dir", r, "evaluate", "--roles", "R1,R2", "--models", "gpt,gemini", "--mock", "--seed", "5"];
    let s = ok(&eval);
    assert!(s.contains("8 jobs, 8 records (0 resumed), 0 failures"), "{s}");
    fails(&eval, "judge");

    // Simulate an interrupted run: remove two records, then resume.
    fs::remove_file(root.join("records/case1_R1_gpt.json")).unwrap();
    fs::remove_file(root.join("records/case2_R2_gemini.json")).unwrap();
    let mut resume = eval.to_vec();
    resume.push("--resume");
    let s = ok(&resume);
    assert!(s.contains("8 jobs, 8 records (6 resumed), 0 failures"), "{s}");

    let s = ok(&["--dir", r, "parse", "--replay"]);
    assert_eq!(s.trim(), "parse: 0 records changed");

    let scores = dir.path().join("scores.json");
    let mut map = serde_json::Map::new();
    for label in 1..=4 {
        let dims: serde_json::Map<_, _> = ["Clarity", "CognitiveLoad", "Confidence", "Preference", "Transferability"]
            .iter()
            .map(|d| (d.to_string(), serde_json::json!(3)))
            .collect();
        map.insert(label.to_string(), serde_json::Value::Object(dims));
    }
    fs::write(&scores, serde_json::Value::Object(map).to_string()).unwrap();
    let s = ok(&["--dir", r, "parse", "--manual", "case1_R1_gpt", "--scores", scores.to_str().unwrap()]);
    assert!(s.contains("20 scores (complete: true)"), "{s}");

    let s = ok(&["--dir", r, "stats", "export"]);
    assert!(s.starts_with("wrote 160 rows"), "{s}");
    let csv = fs::read_to_string(root.join("report/scores.csv")).unwrap();
    assert!(csv.contains("case1,R1,gpt,baseline,Clarity,3,0"));

    let s = ok(&["--dir", r, "stats", "run", "--blocking", "case-role-model", "--friedman-p", "chi-square"]);
    assert!(s.contains("blocking=case-role-model\t"), "{s}");
    assert!(s.contains("method=chi-square"), "{s}");
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["--dir", r, "stats", "run", "--json"])).unwrap();
    assert!(json["battery"].is_object());
    ok(&["--dir", r, "report", "build"]);
    for f in ["radar.csv", "roles.csv", "cases/case1.csv", "cases/case2.csv", "results.txt", "report.md"] {
        assert!(root.join("report").join(f).is_file(), "missing {f}");
    }
}
