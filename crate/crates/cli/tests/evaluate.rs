mod common;

use common::*;
use serde_json::Value;

fn langs(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("l{i:02}")).collect()
}

fn evaluate(dir: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["evaluate", "--scores", "scores.tsv", "--labels", "labels.jsonl"];
    args.extend_from_slice(extra);
    lidkit(&args, dir)
}

#[test]
fn midpoint_cavg_rounds_up_in_the_table() {
    // Two languages, 5000 trials each. 78 swapped decisions count twice
    // (a miss and a false alarm) and one exact tie counts once (it fires
    // both detectors), so Cavg = (157 / 5000) / 4 = 0.00785.
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for y in 0..2usize {
        for i in 0..5000 {
            let s = if i < 39 {
                if y == 0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] }
            } else if y == 0 && i == 39 {
                vec![0.0, 0.0]
            } else if y == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            };
            rows.push((format!("u{y}-{i:05}"), y, s));
        }
    }
    write_trials(dir.path(), &["a", "b"], &rows);
    let json: Value = serde_json::from_str(&ok(&evaluate(dir.path(), &["--json"]))).unwrap();
    let c_avg = json["systems"][0]["report"]["c_avg"].as_f64().unwrap();
    assert!((c_avg - 0.00785).abs() < 1e-15, "{c_avg}");
    let table = ok(&evaluate(dir.path(), &[]));
    assert_eq!(table_cell(&table, "scores", "Cavg"), "0.0079", "{table}");
}

#[test]
fn perfect_scores_report_zero_costs() {
    let dir = tempfile::tempdir().unwrap();
    let names = langs(3);
    let mut rows = Vec::new();
    for y in 0..3 {
        for i in 0..20 {
            let mut s = vec![-2.0; 3];
            s[y] = 10.0;
            rows.push((format!("t{y}-{i}"), y, s));
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_trials(dir.path(), &refs, &rows);
    let table = ok(&evaluate(dir.path(), &[]));
    assert_eq!(table_cell(&table, "scores", "Cavg"), "0.0000");
    assert_eq!(table_cell(&table, "scores", "minCavg"), "0.0000");
    assert_eq!(table_cell(&table, "scores", "EER"), "0.00");
    assert_eq!(table_cell(&table, "scores", "Acc"), "1.0000");
}

#[test]
fn all_zero_scores_over_thirteen_languages_cost_half() {
    let dir = tempfile::tempdir().unwrap();
    let names = langs(13);
    let rows: Vec<_> = (0..13).flat_map(|y| (0..4).map(move |i| (format!("z{y}-{i}"), y, vec![0.0; 13]))).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_trials(dir.path(), &refs, &rows);
    let table = ok(&evaluate(dir.path(), &[]));
    assert_eq!(table_cell(&table, "scores", "Cavg"), "0.5000", "{table}");
}

#[test]
fn json_output_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..2).flat_map(|y| (0..10).map(move |i| {
        let s = if y == 0 { vec![i as f64 * 0.1, 0.5] } else { vec![0.5, i as f64 * 0.1] };
        (format!("j{y}-{i}"), y, s)
    })).collect();
    write_trials(dir.path(), &["x", "y"], &rows);
    let json: Value = serde_json::from_str(&ok(&evaluate(dir.path(), &["--json", "--p-target", "0.3"]))).unwrap();
    assert_valid("evaluate.schema.json", &json);
    assert_eq!(json["p_target"], 0.3);
    assert_invalid("evaluate.schema.json", &serde_json::json!({ "p_target": 0.5, "systems": [] }));
}

#[test]
fn misaligned_ids_fail_with_stage_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![("a1".to_string(), 0, vec![1.0, 0.0]), ("b1".to_string(), 1, vec![0.0, 1.0])];
    write_trials(dir.path(), &["a", "b"], &rows);
    std::fs::write(dir.path().join("labels.jsonl"), "{\"id\":\"a1\",\"label\":\"a\"}\n{\"id\":\"zz\",\"label\":\"b\"}\n").unwrap();
    let out = evaluate(dir.path(), &[]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error: evaluate: "), "{err}");
    assert!(err.contains("b1"), "{err}");
}

#[test]
fn out_of_range_prior_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_trials(dir.path(), &["a", "b"], &[("a".into(), 0, vec![1.0, 0.0]), ("b".into(), 1, vec![0.0, 1.0])]);
    let out = evaluate(dir.path(), &["--p-target", "1.5"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("p_target"), "{}", stderr(&out));
}
