mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::{output_fixture, replay, threshold, Sample, CORE};
use serde_json::Value;

fn hmt(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_hmt"))
        .args(args)
        .env_remove("HMT_API_KEY")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn scripted<'a>(fixture: &'a str, store: &'a str) -> Vec<&'a str> {
    vec!["--backend", "scripted", "--fixture", fixture, "--store", store]
}

fn only_session(store: &Path) -> Value {
    let files: Vec<_> = std::fs::read_dir(store)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    assert_eq!(files.len(), 1, "{files:?}");
    serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap()
}

#[test]
fn tasks_list_prints_every_task() {
    let o = hmt(&["tasks", "list"], "");
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 63);
    assert!(out.lines().any(|l| l == "travel plan"));

    let core = hmt(&["tasks", "list", "--core"], "");
    let names: Vec<String> = stdout(&core).lines().map(String::from).collect();
    assert_eq!(names, CORE.map(|(n, _)| n.to_string()));
}

#[test]
fn tasks_show_accepts_dashed_names() {
    let o = hmt(&["tasks", "show", "event-summary"], "");
    assert!(o.status.success(), "{}", stderr(&o));
    let task: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(task["name"], "event summary");
}

#[test]
fn eval_prints_table_with_average_absorption() {
    let ann = common::fixtures().join("table3.ann");
    let o = hmt(
        &["eval", ann.to_str().unwrap(), "--regime", "tolerant", "--na", "exclude"],
        "",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let row = out.lines().find(|l| l.starts_with("knowledge_absorption")).unwrap();
    assert_eq!(row.split_whitespace().last(), Some("70.00"));
}

#[test]
fn eval_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("report.json");
    let ann = common::fixtures().join("table3.ann");
    let o = hmt(
        &[
            "eval",
            ann.to_str().unwrap(),
            "--regime",
            "strict",
            "--na",
            "as-no",
            "--format",
            "json",
            "--out",
            dest.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(printed, written);
    assert_eq!(written["regime"]["ka"], "strict");
    assert_eq!(written["regime"]["na"], "na_as_no");
}

#[test]
fn unknown_task_is_a_usage_error() {
    let o = hmt(&["run", "bogus-task"], "");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error:") && err.contains("bogus-task"), "{err}");
}

#[test]
fn unknown_flag_exits_2() {
    let o = hmt(&["tasks", "list", "--frobnicate"], "");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scripted_backend_needs_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmt(
        &[
            "--backend",
            "scripted",
            "--store",
            dir.path().to_str().unwrap(),
            "run",
            "poem",
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--fixture"));
}

#[test]
fn http_backend_without_key_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmt(
        &[
            "--store",
            dir.path().to_str().unwrap(),
            "--endpoint",
            "http://127.0.0.1:9/v1",
            "questions",
            "poem",
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.to_lowercase().contains("auth"), "{err}");
}

#[test]
fn run_replays_every_core_task() {
    for (_, slug) in CORE {
        let sample = Sample::load(slug);
        let fixture = replay(slug);
        let mut logs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let store = dir.path().to_str().unwrap();
            let mut args = scripted(fixture.to_str().unwrap(), store);
            args.extend(["--similarity-threshold", threshold(slug), "run", &sample.task]);
            let o = hmt(&args, &sample.stdin());
            assert!(o.status.success(), "{slug}: {}", stderr(&o));
            let out = stdout(&o);
            for pair in &sample.qa_pairs {
                assert!(out.contains(&pair.question), "{slug}: missing {:?}", pair.question);
            }
            assert!(out.ends_with(&format!("{}\n", sample.final_output())), "{slug}:\n{out}");

            let record = only_session(dir.path());
            assert_eq!(record["session"]["stage"], "complete");
            assert_eq!(record["session"]["final_output"], sample.final_output());
            logs.push(record["session"]["event_log"].clone());
        }
        assert_eq!(logs[0], logs[1], "{slug}: event logs differ between runs");
    }
}

#[test]
fn run_saves_partial_session_at_end_of_input() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    let fixture = replay("poem");
    let mut args = scripted(fixture.to_str().unwrap(), store);
    args.extend(["run", "poem"]);
    let o = hmt(&args, "Golden Jubilee celebration\n\n   \nRomantic\n");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("an answer is required"));
    let record = only_session(dir.path());
    assert_eq!(record["session"]["stage"], "awaiting_answers");
    assert_eq!(
        record["session"]["answers"],
        serde_json::json!(["Golden Jubilee celebration", "Romantic", null, null])
    );
}

#[test]
fn staged_commands_match_interactive_run() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let store = store.to_str().unwrap();
    let sample = Sample::load("story");
    let stage1 = replay("story");

    let mut args = scripted(stage1.to_str().unwrap(), store);
    args.extend(["questions", "story"]);
    let o = hmt(&args, "");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let id = out.lines().next().unwrap().to_string();
    assert_eq!(out.lines().count(), 1 + sample.qa_pairs.len());

    for (i, pair) in sample.qa_pairs.iter().enumerate() {
        let index = i.to_string();
        let o = hmt(
            &[
                "--store",
                store,
                "answer",
                &id,
                "--index",
                &index,
                "--text",
                &pair.answer,
            ],
            "",
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let expected = if i + 1 == sample.qa_pairs.len() {
            "generating_output"
        } else {
            "awaiting_answers"
        };
        assert_eq!(stdout(&o).trim(), expected);
    }

    let stage3 = output_fixture("story", dir.path());
    let mut args = scripted(stage3.to_str().unwrap(), store);
    args.extend(["output", &id]);
    let o = hmt(&args, "");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), format!("{}\n", sample.final_output()));

    let o = hmt(&["--store", store, "show", &id], "");
    let record: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(record["schema_version"], 1);
    assert_eq!(record["session"]["final_output"], sample.final_output());

    let o = hmt(&["--store", store, "sessions", "--stage", "complete"], "");
    assert!(stdout(&o).starts_with(&id));
    let o = hmt(&["--store", store, "sessions", "--task", "poem"], "");
    assert_eq!(stdout(&o), "");
}

#[test]
fn answer_reads_remaining_answers_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    let fixture = replay("poem");
    let mut args = scripted(fixture.to_str().unwrap(), store);
    args.extend(["questions", "poem"]);
    let id = stdout(&hmt(&args, "")).lines().next().unwrap().to_string();

    let o = hmt(
        &["--store", store, "answer", &id, "--index", "1", "--text", "Romantic"],
        "",
    );
    assert!(o.status.success());
    let o = hmt(
        &["--store", store, "answer", &id],
        "Golden Jubilee celebration\nRetro\nFriendly\n",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).ends_with("generating_output\n"));
    assert!(!stdout(&o).contains("mood"), "answered questions are not asked again");
}

#[test]
fn blank_or_out_of_range_answers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    let fixture = replay("poem");
    let mut args = scripted(fixture.to_str().unwrap(), store);
    args.extend(["questions", "poem"]);
    let id = stdout(&hmt(&args, "")).lines().next().unwrap().to_string();

    let o = hmt(&["--store", store, "answer", &id, "--index", "0", "--text", "  "], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("blank"));
    let o = hmt(&["--store", store, "answer", &id, "--index", "9", "--text", "x"], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("out of range"));
}

#[test]
fn output_before_answers_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().to_str().unwrap();
    let fixture = replay("poem");
    let mut args = scripted(fixture.to_str().unwrap(), store);
    args.extend(["questions", "poem"]);
    let id = stdout(&hmt(&args, "")).lines().next().unwrap().to_string();

    let mut args = scripted(fixture.to_str().unwrap(), store);
    args.extend(["output", &id]);
    let o = hmt(&args, "");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("awaiting_answers"), "{}", stderr(&o));
}

#[test]
fn missing_session_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmt(
        &[
            "--store",
            dir.path().to_str().unwrap(),
            "show",
            "00000000-0000-4000-8000-000000000000",
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not found"));
}
