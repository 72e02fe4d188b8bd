//! Acceptance criteria 1 to 8. Each test prints a single line
//! `criterion N: PASS|FAIL ...` and fails when the criterion does not hold.

mod common;

use std::time::{Duration, Instant};

use applied_chor::chor::Chor;
use applied_chor::compiler::{compile_network, Mutations};
use applied_chor::deployment::ProcEntry;
use applied_chor::epp::epp;
use applied_chor::harness::{
    compile_correspondence, epp_correspondence, epp_correspondence_with, epp_dropping_a_branch, handshake_check,
    subject_reduction, Graph, Verdict,
};
use applied_chor::keygen::{CounterKeys, ReusingKeys};
use applied_chor::names::{Loc, Op, Proc};
use applied_chor::parser::parse_program;
use applied_chor::program::Program;
use applied_chor::semantics::{enumerate, run, Outcome, RunningChor, Scheduler};
use applied_chor::tree::{Path, Tree};
use applied_chor::typing::{advance, check_deployment, check_running, coherence, typecheck_program, Env, Witnesses};

use common::{acc, corpus, example, golden_path, EXAMPLES, GOLDEN};

const CORPUS: u64 = 24;
const BOUND: usize = 50_000;

fn report(n: u8, what: &str, failures: &[String], detail: String) {
    if failures.is_empty() {
        println!("criterion {n}: PASS {what} ({detail})");
    } else {
        println!("criterion {n}: FAIL {what} ({detail})");
        panic!("criterion {n} failed:\n{}", failures.join("\n"));
    }
}

/// The examples and the generated corpus, parsed and typed.
fn suite() -> Vec<(String, Program, RunningChor, Env)> {
    let mut out = Vec::new();
    let (p, s) = example("filetransfer");
    let g = typecheck_program(&p).unwrap();
    out.push(("filetransfer".to_string(), p, s, g));
    for gen in corpus(CORPUS) {
        assert!(gen.processes <= 4 && gen.sessions <= 2 && gen.communications <= 6, "{}", gen.name);
        let p = parse_program(&gen.src).unwrap_or_else(|e| panic!("{}: {e}\n{}", gen.name, gen.src));
        let g = typecheck_program(&p).unwrap_or_else(|e| panic!("{}: {e}\n{}", gen.name, gen.src));
        let s = RunningChor::initial(&p).unwrap();
        out.push((gen.name, p, s, g));
    }
    out
}

fn projected(s: &RunningChor) -> RunningChor {
    RunningChor { d: s.d.clone(), c: epp(&s.c).unwrap() }
}

#[test]
fn criterion_1_subject_reduction() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut states = 0;
    let all = suite();
    for (name, _, s, g) in &all {
        match subject_reduction(g, s, &CounterKeys, BOUND) {
            Ok(n) => states += n,
            Err(e) => failures.push(format!(
                "{name}: {} {} leads to\n{}\n{}",
                e.rule,
                e.label,
                e.state,
                e.report.map(|r| r.to_string()).unwrap_or_default()
            )),
        }
    }
    let took = t.elapsed();
    if took > Duration::from_secs(60) {
        failures.push(format!("took {took:?}"));
    }
    report(1, "subject reduction", &failures, format!("{} programs, {states} states, {took:.1?}", all.len()));
}

#[test]
fn criterion_2_deadlock_freedom() {
    let mut failures = Vec::new();
    let mut runs = 0;
    let all = suite();
    for (name, _, s, g) in &all {
        if let Err(d) = coherence(g, &Witnesses::new()) {
            failures.push(format!("{name}: not coherent: {d}"));
            continue;
        }
        let gr = Graph::explore(s, &CounterKeys, BOUND);
        if gr.truncated {
            failures.push(format!("{name}: graph truncated"));
        }
        for i in gr.stuck() {
            failures.push(format!("{name}: no redex in\n{}", gr.nodes[i].c));
        }
        for (i, e) in &gr.races {
            failures.push(format!("{name}: {e} in\n{}", gr.nodes[*i].c));
        }
        for seed in 0..10 {
            let t = run(s, &Scheduler::Seeded(seed), 10_000, &CounterKeys);
            runs += 1;
            if t.outcome != Outcome::Terminated || !t.last.c.is_terminated() {
                failures.push(format!("{name} seed {seed}: {}", t.outcome));
            }
        }
    }
    report(2, "deadlock freedom", &failures, format!("{} programs, {runs} runs", all.len()));
}

/// `k: p[A].y -> q[B].o(x)` over a deployment where `p` holds `y` and the
/// session is open, as reached from a typed program.
fn wrong_deployment_base() -> (Env, RunningChor) {
    let p = parse_program(
        "protocol P at lB roles A starter, B@lB { B -> A { i(int); A -> B { o(int) } } }
         deployment { p @ lA; }
         start k: p[A] <-> lB.q[B];
         k: q[B].5 -> p[A].i(y);
         k: p[A].y -> q[B].o(x)",
    )
    .unwrap();
    let mut g = typecheck_program(&p).unwrap();
    let mut s = RunningChor::initial(&p).unwrap();
    let w = Witnesses::new();
    // start, then the send and the reception of `i`
    for _ in 0..3 {
        let en = enumerate(&s, &CounterKeys);
        assert_eq!(en.redexes.len(), 1);
        let r = &en.redexes[0];
        g = advance(&g, r).into_iter().find(|g2| check_running(g2, &r.next, &w).is_ok()).unwrap();
        s = r.next.clone();
    }
    assert!(matches!(&s.c, Chor::Com { op, .. } if op.as_str() == "o"), "{}", s.c);
    assert!(check_deployment(&g, &s.d).is_empty());
    (g, s)
}

#[test]
fn criterion_3_wrong_deployments() {
    let (g, base) = wrong_deployment_base();
    let k = match &base.c {
        Chor::Com { k, .. } => k.as_str().to_string(),
        _ => unreachable!(),
    };
    let (pp, qq) = (Proc::new("p"), Proc::new("q#1"));
    assert!(base.d.procs.contains_key(&qq), "{:?}", base.d.procs.keys());
    let at = |s: &str| Path::parse(&format!("{k}.{s}"));

    let mut uninit = base.clone();
    uninit.d.procs.get_mut(&pp).unwrap().state.remove(&Path::parse("y"));

    let mut descriptor = base.clone();
    descriptor.d.procs.get_mut(&pp).unwrap().state.replace_in_place(&at("B.l"), Tree::loc("lX"));

    let mut race = base.clone();
    let twin: ProcEntry = race.d.procs[&qq].clone();
    race.d.add_process(Proc::new("r"), Loc::new("lB"), twin);

    let mut violation = base.clone();
    let key = violation.d.state(&pp).unwrap().resolve(&at("A.B")).unwrap().clone();
    assert!(violation.d.procs.get_mut(&qq).unwrap().queues.enqueue(&key, (Op::new("o2"), Tree::int(0))));

    let cases: [(&str, RunningChor, u8, fn(&Outcome) -> bool); 4] = [
        ("uninitialised variable", uninit, 2, |o| *o == Outcome::Stuck),
        ("incompatible descriptor", descriptor, 3, |o| *o == Outcome::Stuck),
        ("correlation race", race, 1, |o| matches!(o, Outcome::CorrelationRace(_))),
        ("protocol violation", violation, 5, |o| *o == Outcome::Stuck),
    ];
    let mut failures = Vec::new();
    let mut detected = 0;
    for (what, s, clause, expected) in cases {
        let ds = check_deployment(&g, &s.d);
        let rejected = ds.iter().any(|d| d.premise == Some(clause));
        let t = run(&s, &Scheduler::Script(vec![]), 100, &CounterKeys);
        if rejected && expected(&t.outcome) {
            detected += 1;
        } else {
            let ds: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
            failures.push(format!(
                "{what}: clause {clause} wanted, got [{}]; interpreter: {}",
                ds.join("; "),
                t.outcome
            ));
        }
    }
    report(3, "wrong deployments", &failures, format!("{detected}/4 detected"));
}

fn timed(v: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let t = Instant::now();
    let v = v();
    (v, t.elapsed())
}

#[test]
fn criterion_4_epp_correspondence() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for name in EXAMPLES {
        let (_, s) = example(name);
        let (v, took) = timed(|| epp_correspondence(&s, &CounterKeys, BOUND));
        if !v.is_pass() || took > Duration::from_secs(120) {
            failures.push(format!("{name}: {v} in {took:?}"));
        }
        detail.push(format!("{name} {v}"));
    }
    report(4, "EPP correspondence", &failures, detail.join(", "));
}

#[test]
fn criterion_5_compile_correspondence() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for name in EXAMPLES {
        let (p, s) = example(name);
        let v = compile_correspondence(&p, &projected(&s), &CounterKeys, Mutations::default(), BOUND);
        if !v.is_pass() {
            failures.push(format!("{name}: {v}"));
        }
        detail.push(format!("{name} {v}"));
    }
    report(5, "compile correspondence", &failures, detail.join(", "));
}

#[test]
fn criterion_6_handshake() {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut all: Vec<(String, Program, RunningChor)> = EXAMPLES
        .iter()
        .map(|n| {
            let (p, s) = example(n);
            (n.to_string(), p, s)
        })
        .collect();
    all.extend(suite().into_iter().skip(1).map(|(n, p, s, _)| (n, p, s)));
    for (name, p, s) in &all {
        let net = compile_network(p, &projected(s), Mutations::default()).unwrap();
        let v = handshake_check(&net, &CounterKeys, BOUND);
        if !v.is_pass() {
            failures.push(format!("{name}: {v}"));
        }
        checked += 1;
    }
    report(6, "handshake", &failures, format!("{checked} programs"));
}

#[test]
fn criterion_7_golden_determinism() {
    let mut failures = Vec::new();
    for (file, args) in GOLDEN {
        let a = acc(args);
        let b = acc(args);
        if a.code != 0 {
            failures.push(format!("{args:?} exited {}: {}", a.code, a.stderr));
        }
        if a.stdout != b.stdout {
            failures.push(format!("{args:?} is not deterministic"));
        }
        match std::fs::read_to_string(golden_path(file)) {
            Ok(want) if want == a.stdout => {}
            Ok(_) => failures.push(format!("{file} differs from the golden copy")),
            Err(e) => failures.push(format!("{file}: {e}")),
        }
    }
    let run = acc(GOLDEN[3].1);
    if run.stdout.lines().last() != Some("outcome terminated") {
        failures.push("seeded run does not terminate".into());
    }
    report(7, "golden determinism", &failures, format!("{} outputs", GOLDEN.len()));
}

#[test]
fn criterion_8_mutation_sensitivity() {
    let (p, s) = example("filetransfer");
    let ps = projected(&s);
    let net = compile_network(&p, &ps, Mutations::default()).unwrap();
    let mutants = [
        ("dropped Recv branch", epp_correspondence_with(&s, &CounterKeys, BOUND, epp_dropping_a_branch)),
        ("skipped a3", compile_correspondence(&p, &ps, &CounterKeys, Mutations { skip_a3: true }, BOUND)),
        ("reused key", handshake_check(&net, &ReusingKeys, BOUND)),
    ];
    let mut failures = Vec::new();
    for (what, v) in &mutants {
        if !v.is_fail() {
            failures.push(format!("{what} went unnoticed: {v}"));
        }
    }
    let caught = mutants.len() - failures.len();
    report(8, "mutation sensitivity", &failures, format!("{caught}/3 detected"));
}
