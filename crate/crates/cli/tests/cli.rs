use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    p.to_str().unwrap().to_string()
}

fn trendmax(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trendmax"));
    cmd.args(args).env_remove("TRENDMAX_SEED");
    if let Some(s) = seed_env {
        cmd.env("TRENDMAX_SEED", s);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn temp_file(name: &str, contents: &str) -> String {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path.to_str().unwrap().to_string()
}

fn assert_close(got: &Value, want: &Value, path: &str) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{path}: {a} vs {b}");
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in a {
                assert_close(v, &b[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn golden(fixture: &str) {
    let out = trendmax(
        &["trend", "--input", &data(&format!("{fixture}.csv")), "--format", "json"],
        None,
    );
    let got: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let want: Value =
        serde_json::from_str(&fs::read_to_string(data(&format!("golden/{fixture}.json"))).unwrap()).unwrap();
    assert_close(&got, &want, fixture);
}

#[test]
fn acrylamide_matches_golden_report() {
    golden("acrylamide");
}

#[test]
fn glyphosate_matches_golden_report() {
    golden("glyphosate_hep");
}

#[test]
fn text_and_json_carry_the_same_numbers() {
    let input = data("acrylamide.csv");
    let base = ["trend", "--input", input.as_str(), "--mvn-tol", "1e-3"];
    let text = stdout(&trendmax(&base, None));
    let json: Value =
        serde_json::from_str(&stdout(&trendmax(&[&base[..], &["--format", "json"]].concat(), None))).unwrap();
    let rows = json["members"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    let labels: Vec<&str> = rows.iter().map(|m| m["label"].as_str().unwrap()).collect();
    assert_eq!(&labels[..4], ["arithmetic", "ordinal", "logarithmic", "C: 0-0.7"]);
    for m in rows {
        let label = m["label"].as_str().unwrap();
        let line = text.lines().find(|l| l.starts_with(label)).unwrap();
        let fields: Vec<&str> = line[label.len()..].split_whitespace().collect();
        assert_eq!(fields[0], format!("{:.2}", m["stat"].as_f64().unwrap()));
        assert_eq!(fields[1], format!("{:.4}", m["p_adj"].as_f64().unwrap()));
    }
    assert!(text.contains(&format!("most likely shape: {}", json["shape"].as_str().unwrap())));
    assert_eq!(json["warnings"], serde_json::json!([]));
}

#[test]
fn seed_flag_and_environment() {
    let input = data("glyphosate_hep.csv");
    let run = |extra: &[&str], env: Option<&str>| {
        let args = [
            &[
                "trend",
                "--input",
                input.as_str(),
                "--mvn-tol",
                "1e-3",
                "--format",
                "json",
            ],
            extra,
        ]
        .concat();
        stdout(&trendmax(&args, env))
    };
    let default = run(&[], None);
    assert_eq!(default, run(&[], None));
    assert_eq!(run(&["--seed", "9"], None), run(&[], Some("9")));
    assert_eq!(run(&["--seed", "42"], Some("9")), default);
    let seeded: Value = serde_json::from_str(&run(&[], Some("9"))).unwrap();
    assert_eq!(seeded["config"]["mvn_seed"], 9);
}

#[test]
fn exit_codes() {
    let empty = temp_file("empty.csv", "");
    let out = trendmax(&["trend", "--input", &empty], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));

    let out = trendmax(&["trend", "--input", &data("acrylamide.csv"), "--link", "probit"], None);
    assert_eq!(out.status.code(), Some(2));

    let out = trendmax(&["trend", "--input", &data("missing.csv")], None);
    assert_eq!(out.status.code(), Some(2));

    let out = trendmax(
        &["trend", "--input", &data("glyphosate_hep.csv"), "--mvn-tol", "1e-7"],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance"));
}

#[test]
fn family_selection_flags() {
    let input = data("glyphosate_hep.csv");
    let rows = |extra: &[&str]| {
        let args = [
            &[
                "trend",
                "--input",
                input.as_str(),
                "--mvn-tol",
                "1e-3",
                "--format",
                "json",
            ],
            extra,
        ]
        .concat();
        let v: Value = serde_json::from_str(&stdout(&trendmax(&args, None))).unwrap();
        v["members"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["label"].as_str().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&["--no-williams"]), ["arithmetic", "ordinal", "logarithmic"]);
    assert_eq!(rows(&["--scalings", "ord", "--no-williams", "--williams"]).len(), 4);
    assert_eq!(
        rows(&["--scalings", "ari,log", "--no-williams"]),
        ["arithmetic", "logarithmic"]
    );
}

const ANIMALS: &str = "id,dose,death_time,t1,t2\n\
    1,0,104,0,0\n2,0,80,0,1\n3,0,104,1,0\n4,0,60,0,0\n5,0,104,0,0\n6,0,104,0,0\n7,0,92,0,0\n8,0,104,0,0\n\
    9,1,90,1,0\n10,1,104,0,1\n11,1,70,0,0\n12,1,104,1,0\n13,1,104,0,0\n14,1,55,0,0\n15,1,104,0,1\n16,1,101,0,0\n\
    17,2,104,1,1\n18,2,85,1,0\n19,2,104,1,1\n20,2,50,0,0\n21,2,104,1,0\n22,2,104,0,1\n23,2,77,1,0\n24,2,104,0,0\n";

#[test]
fn polyk_subcommand_combines_exponents() {
    let mut text = String::from("dose,tumor,death_time\n");
    for line in ANIMALS.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        text.push_str(&format!("{},{},{}\n", f[1], f[3], f[2]));
    }
    let path = temp_file("animals.csv", &text);
    let out = trendmax(
        &[
            "polyk",
            "--input",
            &path,
            "--k",
            "3,6",
            "--mvn-tol",
            "1e-3",
            "--format",
            "json",
        ],
        None,
    );
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let members = v["members"].as_array().unwrap();
    assert_eq!(members.len(), 2 * 5);
    assert_eq!(members[0]["label"], "k=3: arithmetic");
    assert_eq!(members[5]["block"], "k=6");
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 6);
    assert!(groups[0]["at_risk"].as_f64().unwrap() < 8.0);

    let out = trendmax(&["polyk", "--input", &path, "--k", "3", "--pseudo", "add2"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn multi_subcommand_needs_ids_and_combines_endpoints() {
    let path = temp_file("wide.csv", ANIMALS);
    let out = trendmax(
        &[
            "multi",
            "--input",
            &path,
            "--endpoints",
            "t1,t2",
            "--mvn-tol",
            "1e-3",
            "--format",
            "json",
        ],
        None,
    );
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["members"].as_array().unwrap().len(), 2 * 5);
    assert_eq!(v["members"][5]["label"], "t2: arithmetic");

    let out = trendmax(
        &[
            "multi",
            "--input",
            &path,
            "--endpoints",
            "t1,t2",
            "--k",
            "3",
            "--mvn-tol",
            "1e-3",
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let no_id = temp_file("no_id.csv", &ANIMALS.replacen("id,", "animal,", 1));
    let out = trendmax(&["multi", "--input", &no_id, "--endpoints", "t1,t2"], None);
    assert_eq!(out.status.code(), Some(2));
}
