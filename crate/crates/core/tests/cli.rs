use std::path::Path;
use std::process::{Command, Output};

fn tgbridge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgbridge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

/// Eight weeks of daily events with a header row.
fn weekly_csv(dir: &Path) {
    let mut body = String::from("src,dst,t\n");
    for day in 0..56u64 {
        for k in 0..3u64 {
            body.push_str(&format!(
                "{},{},{}\n",
                1000 + (day + k) % 9,
                2000 + k,
                day * 86_400 + k * 600
            ));
        }
    }
    std::fs::write(dir.join("w.csv"), body).unwrap();
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn stats_reports_weekly_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let out = tgbridge(
        &["stats", "--data", "w.csv", "--header", "--granularity", "week"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["snapshots"], 8);
    assert_eq!(v["edges"], 168);
    assert_eq!(v["granularity"], "week");
}

#[test]
fn stats_auto_names_the_choice() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let out = tgbridge(
        &["stats", "--data", "w.csv", "--header", "--granularity", "auto"],
        dir.path(),
    );
    let v = json(&out);
    assert_eq!(v["granularity"], "day");
    assert_eq!(v["snapshots"], 56);
}

#[test]
fn missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = tgbridge(&["stats", "--data", "absent.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn bad_flags_and_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    assert_eq!(tgbridge(&["eval", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(
        tgbridge(&["eval", "--data", "w.csv", "--header", "--model", "gnn"], dir.path())
            .status
            .code(),
        Some(2)
    );
    std::fs::write(dir.path().join("c.toml"), "q = \"many\"\n").unwrap();
    assert_eq!(
        tgbridge(&["eval", "--config", "c.toml"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "0,1,x\n").unwrap();
    let out = tgbridge(&["stats", "--data", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:1"));
}

#[test]
fn discretize_emits_one_line_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let out = tgbridge(
        &["discretize", "--data", "w.csv", "--header", "--count", "4"],
        dir.path(),
    );
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    let edges: u64 = lines.iter().map(|l| l["num_edges"].as_u64().unwrap()).sum();
    assert_eq!(edges, 168);
    assert_eq!(lines[1]["t_lo"], lines[0]["t_hi"]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    std::fs::write(
        dir.path().join("c.toml"),
        "data = \"w.csv\"\nq = 4\nmode = \"deployed\"\n[schema]\nheader = true\n",
    )
    .unwrap();
    let from_file = json(&tgbridge(&["eval", "--config", "c.toml"], dir.path()));
    assert_eq!(from_file["mode"], "deployed");
    let flagged = json(&tgbridge(
        &["eval", "--config", "c.toml", "--mode", "streaming"],
        dir.path(),
    ));
    assert_eq!(flagged["mode"], "streaming");
}

#[test]
fn gen_negatives_then_eval_with_imported_file() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let gen = tgbridge(
        &[
            "gen-negatives",
            "--data",
            "w.csv",
            "--header",
            "--q",
            "5",
            "--out",
            "negs",
        ],
        dir.path(),
    );
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let text = std::fs::read_to_string(dir.path().join("negs/negatives-test.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["pos_index"], 0);
    assert_eq!(first["negatives"].as_array().unwrap().len(), 5);

    let generated = json(&tgbridge(
        &["eval", "--data", "w.csv", "--header", "--q", "5"],
        dir.path(),
    ));
    let imported = json(&tgbridge(
        &[
            "eval",
            "--data",
            "w.csv",
            "--header",
            "--negatives",
            "negs/negatives-test.jsonl",
        ],
        dir.path(),
    ));
    assert_eq!(generated["mrr"], imported["mrr"]);
}

#[test]
fn train_emits_report() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let out = tgbridge(
        &[
            "train",
            "--data",
            "w.csv",
            "--header",
            "--granularity",
            "day",
            "--mode",
            "accumulated",
            "--lr",
            "0.001",
            "--epochs",
            "3",
            "--patience",
            "1",
            "--seed",
            "2",
            "--q",
            "5",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["mode"], "accumulated");
    assert!(v["per_epoch"].as_array().unwrap().len() <= 3);
    assert_eq!(v["weights"].as_array().unwrap().len(), 5);
}

#[test]
fn run_writes_summary_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    weekly_csv(dir.path());
    let out = tgbridge(
        &[
            "run",
            "--data",
            "w.csv",
            "--header",
            "--model",
            "edgebank-tw",
            "--seeds",
            "0,1,2,3,4",
            "--q",
            "5",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r/summary-edgebank-tw-streaming.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 5);
    assert!(summary["mrr_mean"].is_f64());
    assert!(summary["mrr_std"].is_f64());
    assert!(dir.path().join("r/w.nodes.json").exists());
    assert!(!dir.path().join("r/INCOMPLETE").exists());
}
