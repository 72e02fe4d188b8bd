mod common;

use applied_chor::chor::Chor;
use applied_chor::compiler::Mutations;
use applied_chor::deployment::Deployment;
use applied_chor::harness::{compile_correspondence, epp_correspondence, Graph, Verdict};
use applied_chor::keygen::CounterKeys;
use applied_chor::parser::parse_program;
use applied_chor::program::Program;
use applied_chor::semantics::{Rule, RunningChor};

fn empty() -> RunningChor {
    RunningChor { d: Deployment::new(), c: Chor::Inact }
}

#[test]
fn inaction_has_a_single_node() {
    let g = Graph::explore(&empty(), &CounterKeys, 10);
    assert_eq!((g.nodes.len(), g.edges.len(), g.truncated), (1, 0, false));
    assert!(g.stuck().is_empty());
}

#[test]
fn inaction_passes_both_correspondences() {
    assert!(epp_correspondence(&empty(), &CounterKeys, 10).is_pass());
    assert!(compile_correspondence(&Program::default(), &empty(), &CounterKeys, Mutations::default(), 10).is_pass());
}

#[test]
fn independent_receptions_form_a_diamond() {
    let p = parse_program(
        "protocol P at lB, lC roles A starter, B@lB, C@lC { A -> B { o(int); A -> C { o(int) } } }
         start k: p[A] <-> lB.q[B], lC.r[C];
         k: p[A].1 -> q[B].o(x);
         k: p[A].2 -> r[C].o(y)",
    )
    .unwrap();
    let g = Graph::explore(&RunningChor::initial(&p).unwrap(), &CounterKeys, 100);
    // start; send to q; then {recv q, send to r} in either order, joined,
    // and the two orders of the receptions
    assert_eq!(g.nodes.len(), 8);
    assert_eq!(g.edges.len(), 9);
    let joins = (0..g.nodes.len()).filter(|i| g.edges.iter().filter(|e| e.to == *i).count() == 2).count();
    // the diamond join and the final state
    assert_eq!(joins, 2);
    let recvs = g.edges.iter().filter(|e| e.rule == Rule::Recv).count();
    assert_eq!(recvs, 5);
}

#[test]
fn bound_truncates_exploration() {
    let (_, s) = common::example("filetransfer");
    let g = Graph::explore(&s, &CounterKeys, 20);
    assert!(g.truncated);
    assert_eq!(g.nodes.len(), 20);
    assert!(matches!(epp_correspondence(&s, &CounterKeys, 20), Verdict::Inconclusive { .. }));
}

#[test]
fn one_packet_transfer_fits_under_ten_thousand_nodes() {
    let src = common::example_source("filetransfer").replace("n: 2", "n: 1");
    let s = RunningChor::initial(&parse_program(&src).unwrap()).unwrap();
    let g = Graph::explore(&s, &CounterKeys, 10_000);
    assert!(!g.truncated);
    assert!(g.nodes.len() < 10_000);
}
