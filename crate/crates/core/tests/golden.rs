//! Pinned CLI output. Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`.

mod common;

use common::{acc, golden_path, GOLDEN};

#[test]
fn cli_output_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (file, args) in GOLDEN {
        let out = acc(args);
        assert_eq!(out.code, 0, "{args:?}\n{}", out.stderr);
        let path = golden_path(file);
        if update {
            std::fs::write(&path, &out.stdout).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(want == out.stdout, "{file} differs from the golden copy");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(acc(&["frobnicate"]).code, 2);
    assert_eq!(acc(&["check", "examples/missing.ac"]).code, 2);
    assert_eq!(acc(&["graph", "--bound", "0", "examples/ping.ac"]).code, 2);
}

#[test]
fn analysis_failures_exit_with_one() {
    let dir = std::env::temp_dir().join(format!("acc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.ac");
    // the payload is a string where the protocol expects an int
    std::fs::write(
        &bad,
        "protocol P at lB roles A starter, B@lB { A -> B { o(int) } }\n\
         start k: p[A] <-> lB.q[B];\nk: p[A].\"x\" -> q[B].o(y)\n",
    )
    .unwrap();
    let out = acc(&["--json", "check", bad.to_str().unwrap()]);
    assert_eq!(out.code, 1);
    let j: serde_json::Value = serde_json::from_str(out.stderr.trim()).unwrap();
    assert_eq!(j["stage"], "typing");
}

#[test]
fn project_writes_endpoints_and_manifest() {
    let dir = std::env::temp_dir().join(format!("acc-project-{}", std::process::id()));
    let out = acc(&["project", "--out-dir", dir.to_str().unwrap(), "examples/filetransfer.ac"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let eps = m["endpoints"].as_array().unwrap();
    // c, then the services at lA, lC, lDM and lL
    assert_eq!(eps.len(), 5);
    for e in eps {
        let text = std::fs::read_to_string(dir.join(e["file"].as_str().unwrap())).unwrap();
        applied_chor::parser::parse_program(&text).unwrap();
    }
}

#[test]
fn compile_output_parses_and_simulates() {
    let dir = std::env::temp_dir().join(format!("acc-compile-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let net = dir.join("ping.dcc");
    let out = acc(&["compile", "--out", net.to_str().unwrap(), "examples/ping.ac"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let sim = acc(&["simulate", "--seed", "3", net.to_str().unwrap()]);
    assert_eq!(sim.code, 0, "{}", sim.stderr);
    assert_eq!(sim.stdout.lines().last(), Some("outcome terminated"));
}

#[test]
fn deployment_snapshot_round_trips_through_compile() {
    let (_, s) = common::example("ping");
    let dir = std::env::temp_dir().join(format!("acc-snap-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let snap = dir.join("d.json");
    std::fs::write(&snap, s.d.to_json().to_string()).unwrap();
    let a = acc(&["compile", "examples/ping.ac"]);
    let b = acc(&["compile", "--deployment", snap.to_str().unwrap(), "examples/ping.ac"]);
    assert_eq!(b.code, 0, "{}", b.stderr);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn graph_dump_is_one_object_per_node() {
    let out = acc(&["graph", "examples/ping.ac"]);
    assert_eq!(out.code, 0);
    let nodes: Vec<serde_json::Value> = out.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(nodes.len(), 6);
    assert!(nodes.iter().all(|n| n["hash"].as_str().is_some_and(|h| h.len() == 16)));
    let terminal: Vec<&serde_json::Value> = nodes.iter().filter(|n| n["terminated"] == true).collect();
    assert_eq!(terminal.len(), 1);
    assert!(terminal[0]["edges"].as_array().unwrap().is_empty());
}
