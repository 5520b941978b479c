//! Command-line surface: exit codes, artifact schemas, and byte-identical
//! reproducibility.

mod common;

use std::process::{Command, Output};

use keysim::report::{BenchDoc, GraphDoc, ReportDoc, ValuesDoc};

use common::fixture_path;

fn keysim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keysim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    fixture_path(name).display().to_string()
}

#[test]
fn self_comparison_reports_aggregate_one() {
    let spec = format!("{}:add8", fixture("bench_x86.bundle"));
    let out = keysim(&["compare", &spec, &spec]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: ReportDoc = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.schema_version, 1);
    assert_eq!(doc.aggregate, 1.0);
    assert_eq!(doc.verdict, keysim::compare::Verdict::Similar);
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = keysim(&["exec", &fixture("bench_x86.bundle")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_compare_spec_is_usage_error() {
    let out = keysim(&["compare", "no-colon", "also-none"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage error"));
}

#[test]
fn missing_file_is_input_error() {
    let out = keysim(&["exec", "/nonexistent.bundle", "--func", "f"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_function_is_input_error() {
    let out = keysim(&["exec", &fixture("bench_x86.bundle"), "--func", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn malformed_bundle_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bundle");
    std::fs::write(&path, "program p\nfunction f arch=mips entry=0\n").unwrap();
    let out = keysim(&["exec", path.to_str().unwrap(), "--func", "f"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown arch tag"));
}

#[test]
fn simplify_command_canonicalizes() {
    let out = keysim(&["simplify", "(var0 ^ var1) ^ var1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "var0");

    let out = keysim(&["simplify", "var1 + var0 + 0x0"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "var0 + var1");

    let out = keysim(&["simplify", "var0 +"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exec_dump_is_reproducible_and_schema_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out = keysim(&[
            "exec",
            &fixture("loops.bundle"),
            "--func",
            "selfinc_arm",
            "--runs",
            "4",
            "--dump",
            path.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(
        bytes_a, bytes_b,
        "identical argv must produce identical artifacts"
    );

    let doc: ValuesDoc = serde_json::from_slice(&bytes_a).unwrap();
    assert_eq!(doc.schema_version, 1);
    assert_eq!(doc.function, "selfinc_arm");
    assert_eq!(doc.runs, 4);
    let add_values = &doc.values["0x8004"];
    assert_eq!(add_values, &vec!["iter(var0 + 0x1)".to_string()]);
}

#[test]
fn keyir_dump_matches_schema() {
    let out = keysim(&[
        "keyir",
        &fixture("keygraph.bundle"),
        "--func",
        "call_store_ret",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc: GraphDoc = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.schema_version, 1);
    let kinds: Vec<&str> = doc.nodes.iter().map(|n| n.kind.as_str()).collect();
    assert_eq!(kinds, vec!["call", "memwrite", "return"]);
    assert_eq!(doc.edges, vec![[0, 1], [1, 2]]);
}

#[test]
fn bench_reports_accuracy_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("bench_a.json");
    let b = dir.path().join("bench_b.json");
    for path in [&a, &b] {
        let out = keysim(&[
            "bench",
            &fixture("bench_pairs.tsv"),
            "--report",
            path.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let doc: BenchDoc = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(doc.schema_version, 1);
    assert!(doc.accuracy >= 0.8);
    let total = doc.confusion.tp + doc.confusion.tn + doc.confusion.fp + doc.confusion.fn_;
    assert_eq!(total as usize, doc.pairs.len());
}

#[test]
fn lift_prints_unsupported_diagnostic_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("odd.bundle");
    std::fs::write(
        &path,
        "program p\nfunction f arch=x86_64 entry=0\nblock 0 @0x1000\n  0x1000 cpuid\n  0x1002 ret\n",
    )
    .unwrap();
    let out = keysim(&["lift", path.to_str().unwrap(), "--func", "f"]);
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("0x1000: unsupported mnemonic 'cpuid'"),
        "stderr: {stderr}"
    );
}

#[test]
fn exhausted_step_budget_surfaces_as_diagnostic() {
    let out = keysim(&[
        "exec",
        &fixture("loops.bundle"),
        "--func",
        "nested",
        "--runs",
        "1",
        "--step-budget",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc: ValuesDoc = serde_json::from_slice(&out.stdout).unwrap();
    assert!(
        doc.diagnostics.iter().any(|d| d.contains("step budget")),
        "{:?}",
        doc.diagnostics
    );
}

#[test]
fn zero_runs_is_usage_error() {
    let out = keysim(&[
        "exec",
        &fixture("bench_x86.bundle"),
        "--func",
        "add8",
        "--runs",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
