use applied_chor::keygen::CounterKeys;
use applied_chor::names::Proc;
use applied_chor::parser::parse_program;
use applied_chor::semantics::{run, Outcome, RunningChor, Scheduler};
use applied_chor::tree::{Path, Value};

fn load(name: &str) -> RunningChor {
    let src = std::fs::read_to_string(format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    RunningChor::initial(&parse_program(&src).unwrap()).unwrap()
}

#[test]
fn examples_terminate_under_random_schedules() {
    for f in ["ping.ac", "ring.ac", "filetransfer.ac"] {
        let s = load(f);
        for seed in 0..20 {
            let t = run(&s, &Scheduler::Seeded(seed), 5000, &CounterKeys);
            assert_eq!(t.outcome, Outcome::Terminated, "{f} seed {seed}\n{}", t.lines().join("\n"));
        }
    }
}

#[test]
fn ping_pong_value() {
    let t = run(&load("ping.ac"), &Scheduler::Seeded(0), 100, &CounterKeys);
    assert_eq!(t.outcome, Outcome::Terminated);
    assert_eq!(t.last.d.state(&Proc::new("p")).unwrap().value_at(&Path::parse("y")), Some(&Value::Int(2)));
}

#[test]
fn file_transfer_is_saved() {
    for seed in 0..10 {
        let t = run(&load("filetransfer.ac"), &Scheduler::Seeded(seed), 5000, &CounterKeys);
        let c = t.last.d.state(&Proc::new("c")).unwrap();
        // two packets with data 100 and 101
        assert_eq!(c.value_at(&Path::parse("cs")), Some(&Value::Int(201)));
        assert_eq!(c.value_at(&Path::parse("res")), Some(&Value::Int(1)));
    }
}
