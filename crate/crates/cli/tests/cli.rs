use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SWAP: &str = r#"{
  "topology": {"kind": "ring", "n": 4, "units_per_node": 2},
  "program": [
    {"op": "allocate", "app": "demo", "handles": ["src", "mid", "dst"]},
    {"op": "establish", "conn": "c", "from": "src", "to": "dst"},
    {"op": "send", "conn": "c", "data": "before"},
    {"op": "swap", "handle": "dst", "to": [3, 1]},
    {"op": "send", "conn": "c", "data": "after"}
  ]
}"#;

const UNRESOLVABLE: &str = r#"{
  "topology": {"kind": "ring", "n": 4, "units_per_node": 2},
  "options": {"fault_mode": "signal_handler"},
  "program": [
    {"op": "allocate", "app": "demo", "handles": ["a"]},
    {"op": "establish", "conn": "c", "from": "a", "to": "v:0305"}
  ]
}"#;

fn vchan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vchan"))
        .args(args)
        .env_remove("VCHAN_TICK_LIMIT")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Uniform load: 64 resolutions spread evenly over 8 responsible nodes.
fn uniform_scenario() -> String {
    let handles: Vec<String> = (0..8).map(|i| format!("\"h{i}\"")).collect();
    let mut program = vec![format!(r#"{{"op": "allocate", "app": "a", "handles": [{}]}}"#, handles.join(","))];
    for src in 0..8 {
        for end in 0..8 {
            program.push(format!(
                r#"{{"op": "establish", "conn": "c{src}_{end}", "from": "h{src}", "end": {end}, "to": "h{}"}}"#,
                (src + end) % 8
            ));
        }
    }
    format!(
        r#"{{"topology": {{"kind": "complete", "n": 8, "units_per_node": 2}}, "program": [{}]}}"#,
        program.join(",\n")
    )
}

#[test]
fn validate_accepts_minimal() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "min.json", r#"{"topology": {"kind": "ring", "n": 2, "units_per_node": 1}}"#);
    let o = vchan(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "ok\n");
}

#[test]
fn validate_names_unbound_symbol() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "bad.json",
        r#"{"topology": {"kind": "ring", "n": 2, "units_per_node": 1},
            "program": [{"op": "close", "conn": "nowhere"}]}"#,
    );
    let o = vchan(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("program[0].conn"), "{}", stderr(&o));
    assert!(stderr(&o).contains("\"nowhere\""));
}

#[test]
fn validate_rejects_node_count_beyond_address_space() {
    let dir = TempDir::new().unwrap();
    let p = write(
        &dir,
        "big.json",
        r#"{"config": {"node_bits": 2}, "topology": {"kind": "ring", "n": 5, "units_per_node": 1}}"#,
    );
    let o = vchan(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("node count"), "{}", stderr(&o));
}

#[test]
fn syntax_errors_report_line() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "syntax.json", "{\n  \"topology\": {\"kind\": \"ring\",,}\n}");
    let o = vchan(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn run_writes_default_outputs() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "swap.json", SWAP);
    let o = vchan(&["run", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("swap.trace.jsonl")).unwrap();
    assert!(trace.lines().any(|l| l.contains("\"outcome\":\"delivered_after_rebind\"")));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("swap.metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["deliveries"], 2);
    assert!(stdout(&o).contains("deliveries               2"));
}

#[test]
fn summary_matches_metrics_file() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "swap.json", SWAP);
    let m = dir.path().join("m.json");
    let t = dir.path().join("t.jsonl");
    let o = vchan(&["run", s(&p), "--trace-out", s(&t), "--metrics-out", s(&m)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
    let out = stdout(&o);
    assert!(out.contains(&format!("max node load            {}", metrics["max_node_load"])));
    assert!(out.contains(&format!("final tick {}", metrics["final_tick"])));
    for (node, count) in metrics["node_messages"].as_array().unwrap().iter().enumerate() {
        let res = metrics["node_resolutions"][node].as_u64().unwrap();
        let row = format!("{node:>6} {:>10} {res:>12}", count.as_u64().unwrap());
        assert!(out.contains(&row), "missing {row:?} in\n{out}");
    }
}

#[test]
fn run_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "swap.json", SWAP);
    let t = dir.path().join("t.jsonl");
    let m = dir.path().join("m.json");
    let args = ["run", s(&p), "--trace-out", s(&t), "--metrics-out", s(&m)];
    let first = vchan(&args);
    let trace1 = fs::read(&t).unwrap();
    let second = vchan(&args);
    assert_eq!(trace1, fs::read(&t).unwrap());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn faults_set_exit_status_but_trace_is_written() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "fault.json", UNRESOLVABLE);
    let t = dir.path().join("t.jsonl");
    let m = dir.path().join("m.json");
    let o = vchan(&["run", "--quiet", s(&p), "--trace-out", s(&t), "--metrics-out", s(&m)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let trace = fs::read_to_string(&t).unwrap();
    assert!(trace.contains("\"kind\":\"unresolvable\""));
    assert!(trace.contains("\"kind\":\"establish_fault\""));

    let o = vchan(&["run", "--quiet", s(&p), "--trace-out", s(&t), "--metrics-out", s(&m), "--allow-faults"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn strategy_flag_matches_edited_file() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "a.json", SWAP);
    let edited = SWAP.replacen("\"topology\"", "\"strategy\": \"central\",\n  \"topology\"", 1);
    let q = write(&dir, "b.json", &edited);
    let (t1, t2) = (dir.path().join("1.jsonl"), dir.path().join("2.jsonl"));
    let m = dir.path().join("m.json");
    vchan(&["run", s(&p), "--strategy", "central", "--trace-out", s(&t1), "--metrics-out", s(&m)]);
    vchan(&["run", s(&q), "--trace-out", s(&t2), "--metrics-out", s(&m)]);
    let a = fs::read(&t1).unwrap();
    assert!(String::from_utf8_lossy(&a).contains("\"strategy\":\"central\""));
    assert_eq!(a, fs::read(&t2).unwrap());
}

#[test]
fn tick_limit_from_environment() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "swap.json", SWAP);
    let t = dir.path().join("t.jsonl");
    let m = dir.path().join("m.json");
    let o = Command::new(env!("CARGO_BIN_EXE_vchan"))
        .args(["run", "--quiet", s(&p), "--trace-out", s(&t), "--metrics-out", s(&m)])
        .env("VCHAN_TICK_LIMIT", "4")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tick limit 4"), "{}", stderr(&o));
    let partial = fs::read_to_string(&t).unwrap();
    assert!(!partial.is_empty());
    assert!(!partial.contains("\"kind\":\"deliver\""));
}

#[test]
fn compare_uniform_load() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "uniform.json", &uniform_scenario());
    let json = dir.path().join("report.json");
    let o = vchan(&["compare", s(&p), "--out", s(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("verdict: equivalent outcomes"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let load = |name: &str| {
        report["strategies"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["strategy"] == name)
            .unwrap()["max_node_load"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(load("central"), 64);
    assert_eq!(load("distributed"), 8);
    assert!(load("distributed") < load("central"));
}

#[test]
fn compare_single_node_loads_identical() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"topology": {"kind": "ring", "n": 1, "units_per_node": 4},
        "program": [{"op": "allocate", "app": "a", "handles": ["x", "y"]},
                    {"op": "establish", "conn": "c", "from": "x", "to": "y"},
                    {"op": "send", "conn": "c", "data": "hi"}]}"#;
    let p = write(&dir, "one.json", text);
    let json = dir.path().join("report.json");
    let o = vchan(&["compare", "--quiet", s(&p), "--out", s(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let loads: Vec<&serde_json::Value> = report["strategies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| &s["max_node_load"])
        .collect();
    assert!(loads.iter().all(|l| *l == loads[0]), "{loads:?}");
}

#[test]
fn compare_reports_identical_fault_sets() {
    let dir = TempDir::new().unwrap();
    let text = r#"{"topology": {"kind": "mesh2d", "rows": 2, "cols": 2, "units_per_node": 2},
        "program": [{"op": "allocate", "app": "a", "handles": ["x"]},
                    {"op": "establish", "conn": "c", "from": "x", "to": "v:0309"}]}"#;
    let p = write(&dir, "fault.json", text);
    let o = vchan(&["compare", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("identical fault sets"), "{}", stdout(&o));
}

fn dot_edges(topology: &str) -> usize {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "t.json", &format!(r#"{{"topology": {topology}}}"#));
    let o = vchan(&["topology-dot", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    stdout(&o).lines().filter(|l| l.contains("--")).count()
}

#[test]
fn topology_dot_edge_counts() {
    assert_eq!(dot_edges(r#"{"kind": "ring", "n": 3, "units_per_node": 1}"#), 3);
    assert_eq!(dot_edges(r#"{"kind": "complete", "n": 4, "units_per_node": 1}"#), 6);
    assert_eq!(dot_edges(r#"{"kind": "mesh2d", "rows": 2, "cols": 2, "units_per_node": 1}"#), 4);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(vchan(&["simulate"]).status.code(), Some(2));
}
