#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn lidkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn lidkit")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: &Output) -> String {
    assert!(o.status.success(), "lidkit failed\nstdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
    stdout(o)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

/// Replaces `{"$ref": "<file>"}` with the referenced schema file, so the
/// schemas compile without a remote resolver.
fn inline_refs(v: &mut Value) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(r)) = map.get("$ref") {
                if r.ends_with(".json") {
                    let mut inner = load_raw(r);
                    if let Value::Object(o) = &mut inner {
                        o.remove("$schema");
                    }
                    *v = inner;
                    return;
                }
            }
            map.values_mut().for_each(inline_refs);
        }
        Value::Array(items) => items.iter_mut().for_each(inline_refs),
        _ => {}
    }
}

fn load_raw(name: &str) -> Value {
    let text = fs::read_to_string(schema_dir().join(name)).expect("schema file");
    let mut v: Value = serde_json::from_str(&text).expect("schema json");
    inline_refs(&mut v);
    v
}

#[track_caller]
pub fn assert_valid(schema_name: &str, instance: &Value) {
    let schema = load_raw(schema_name);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(instance) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{schema_name} rejects instance:\n{}\n{instance:#}", msgs.join("\n"));
}

#[track_caller]
pub fn assert_invalid(schema_name: &str, instance: &Value) {
    let schema = load_raw(schema_name);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    assert!(!compiled.is_valid(instance), "{schema_name} accepted {instance}");
}

/// Writes a score file and a label manifest for `rows` of
/// `(id, true_language, scores)`.
pub fn write_trials(dir: &Path, languages: &[&str], rows: &[(String, usize, Vec<f64>)]) -> (PathBuf, PathBuf) {
    let mut scores = String::from("id");
    for l in languages {
        scores.push('\t');
        scores.push_str(l);
    }
    scores.push('\n');
    let mut manifest = String::new();
    for (id, y, s) in rows {
        scores.push_str(id);
        for v in s {
            scores.push_str(&format!("\t{v}"));
        }
        scores.push('\n');
        manifest.push_str(&serde_json::json!({ "id": id, "label": languages[*y] }).to_string());
        manifest.push('\n');
    }
    let (sp, mp) = (dir.join("scores.tsv"), dir.join("labels.jsonl"));
    fs::write(&sp, scores).unwrap();
    fs::write(&mp, manifest).unwrap();
    (sp, mp)
}

/// The cell of a rendered metric table in `system`'s row under `column`.
pub fn table_cell(table: &str, system: &str, column: &str) -> String {
    let header: Vec<&str> = table.lines().next().expect("header").split_whitespace().collect();
    let col = header.iter().position(|h| *h == column).expect("column");
    let row = table
        .lines()
        .find(|l| l.split_whitespace().next() == Some(system))
        .unwrap_or_else(|| panic!("no row {system} in\n{table}"));
    row.split_whitespace().nth(col).unwrap().to_string()
}
