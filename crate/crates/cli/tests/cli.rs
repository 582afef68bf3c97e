use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn czkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_czkit")).args(args).current_dir(dir).output().expect("czkit runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn schema(name: &str) -> Value {
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = jsonschema::validator_for(&schema(schema_name)).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}");
}

#[test]
fn gen_grid_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = czkit(dir.path(), &["gen", "--model", "grid", "--dim", "2", "--side", "8", "-o", "s.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let space = read(dir.path(), "s.json");
    assert_valid("space", &space);
    assert_eq!(space["n"], 64);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("report", &report);
    assert_eq!(report["result"]["diameter"], 14.0);
}

#[test]
fn lambda_below_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&czkit(p, &["gen", "--model", "path", "--n", "8", "-o", "s.json"])), 0);
    assert_eq!(code(&czkit(p, &["cubes", "--space", "s.json", "--depth", "4", "--subsample", "none", "--family-out", "a.json"])), 0);
    std::fs::write(p.join("f.json"), "[1, 0, 0, 0, 0, 0, 0, 0]").unwrap();
    let out = czkit(p, &["decompose", "--space", "s.json", "--family", "a.json", "--function", "f.json", "--lambda", "0.0001"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda is out of range"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = czkit(dir.path(), &["gen", "--model", "grid", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&czkit(dir.path(), &["gen", "--model", "grid", "--dim", "2"])), 2);
    assert_eq!(code(&czkit(dir.path(), &["verify", "--space", "missing.json", "--decomposition", "d.json"])), 2);
    assert_eq!(code(&czkit(dir.path(), &["--schema", "nope"])), 2);
}

#[test]
fn output_may_not_overwrite_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    czkit(p, &["gen", "--model", "path", "--n", "4", "-o", "s.json"]);
    let out = czkit(p, &["cubes", "--space", "s.json", "-o", "s.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn failed_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    czkit(p, &["gen", "--model", "path", "--n", "8", "-o", "s.json"]);
    czkit(p, &["cubes", "--space", "s.json", "--depth", "4", "--subsample", "none", "--family-out", "a.json"]);
    // the exact constant is 2
    let out = czkit(p, &["family", "verify", "--space", "s.json", "--family", "a.json", "-C", "1.5"]);
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], false);
    assert!(!report["result"]["growth_failures"].as_array().unwrap().is_empty()
        || !report["result"]["containment_failures"].as_array().unwrap().is_empty());
}

#[test]
fn folner_on_groups_and_spaces() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = czkit(p, &["folner", "--model", "grid", "--dim", "2", "--side", "32", "-r", "2"]);
    assert_eq!(code(&out), 0);
    let out = czkit(p, &["folner", "--model", "tree", "--degree", "3", "--depth", "6", "-r", "2", "--max-shape", "6"]);
    assert_eq!(code(&out), 1);
    czkit(p, &["gen", "--model", "path", "--n", "50", "-o", "s.json"]);
    let out = czkit(p, &["folner", "--space", "s.json", "-r", "3", "-o", "cert.json"]);
    assert_eq!(code(&out), 0);
    assert_eq!(read(p, "cert.json")["semantics"], "dilation");
}

#[test]
fn scan_and_report_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    czkit(p, &["gen", "--model", "grid", "--dim", "2", "--side", "8", "-o", "s.json"]);
    czkit(p, &["cubes", "--space", "s.json", "--subsample", "none", "--family-out", "a.json"]);
    let mut f = vec![0.0; 64];
    f[9] = 5.0;
    f[40] = -2.0;
    std::fs::write(p.join("f.json"), serde_json::to_string(&f).unwrap()).unwrap();
    let out = czkit(p, &[
        "scan", "--space", "s.json", "--family", "a.json", "--function", "f.json", "--lambdas", "1.5,4", "--relative",
        "--scale", "8", "--csv", "rows.csv", "--report", "scan.json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(p.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    let out = czkit(p, &["report", "scan.json", "--csv", "constants.csv", "-o", "summary.json"]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(p.join("constants.csv")).unwrap();
    assert!(table.starts_with("report,scale,family_constant,max_constant,achieved_constant"));
    assert!(table.lines().nth(1).unwrap().starts_with("scan.json,8,"));
    assert_eq!(read(p, "summary.json")["all_pass"], true);
}

#[test]
fn threads_flag_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    czkit(p, &["gen", "--model", "tree", "--degree", "3", "--depth", "5", "-o", "s.json"]);
    czkit(p, &["--threads", "1", "cubes", "--space", "s.json", "-o", "one.json"]);
    czkit(p, &["--threads", "4", "cubes", "--space", "s.json", "-o", "four.json"]);
    assert_eq!(std::fs::read(p.join("one.json")).unwrap(), std::fs::read(p.join("four.json")).unwrap());
}

/// gen -> cubes -> family verify -> decompose -> verify on P8, compared
/// byte-for-byte with tests/golden/p8. `CZKIT_BLESS=1` rewrites the goldens.
#[test]
fn p8_pipeline_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("f.json"), "{\"values\": [8, 0, 0, 0, 0, 0, 0, 0]}\n").unwrap();
    let steps: [&[&str]; 5] = [
        &["gen", "--model", "path", "--n", "8", "-o", "space.json", "--report", "gen.report.json"],
        &[
            "cubes", "--space", "space.json", "--depth", "4", "--subsample", "none", "-o", "cubes.json", "--family-out",
            "family.json", "--report", "cubes.report.json",
        ],
        &["family", "verify", "--space", "space.json", "--family", "family.json", "-C", "4", "--report", "family.report.json"],
        &[
            "decompose", "--space", "space.json", "--family", "family.json", "--function", "f.json", "--lambda", "3", "-o",
            "decomposition.json", "--report", "decompose.report.json",
        ],
        &["verify", "--space", "space.json", "--decomposition", "decomposition.json", "--report", "verify.report.json"],
    ];
    for args in steps {
        let out = czkit(p, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_valid("space", &read(p, "space.json"));
    assert_valid("cubes", &read(p, "cubes.json"));
    assert_valid("family", &read(p, "family.json"));
    assert_valid("decomposition", &read(p, "decomposition.json"));
    let dec = read(p, "decomposition.json");
    assert_eq!(dec["items"][0]["r_set"], serde_json::json!([0, 1]));
    assert_eq!(dec["items"][0]["q_set"], serde_json::json!([0, 1, 2, 3]));

    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join("p8");
    let files = [
        "space.json",
        "cubes.json",
        "family.json",
        "decomposition.json",
        "gen.report.json",
        "cubes.report.json",
        "family.report.json",
        "decompose.report.json",
        "verify.report.json",
    ];
    let bless = std::env::var("CZKIT_BLESS").is_ok_and(|v| v == "1");
    for name in files {
        assert_valid(schema_for(name), &read(p, name));
        let got = std::fs::read(p.join(name)).unwrap();
        if bless {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(golden.join(name), &got).unwrap();
        } else {
            let want = std::fs::read(golden.join(name)).unwrap();
            assert!(got == want, "{name} differs from golden:\n{}", String::from_utf8_lossy(&got));
        }
    }
}

fn schema_for(file: &str) -> &'static str {
    match file {
        f if f.ends_with("report.json") => "report",
        "cubes.json" => "cubes",
        "family.json" => "family",
        "decomposition.json" => "decomposition",
        _ => "space",
    }
}
