//! Shared helpers: example loading and a generator of small well-typed
//! programs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use applied_chor::parser::parse_program;
use applied_chor::program::Program;
use applied_chor::semantics::RunningChor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXAMPLES: [&str; 3] = ["ping", "ring", "filetransfer"];

pub fn example_source(name: &str) -> String {
    std::fs::read_to_string(format!("{}/examples/{name}.ac", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn example(name: &str) -> (Program, RunningChor) {
    let p = parse_program(&example_source(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let s = RunningChor::initial(&p).unwrap();
    (p, s)
}

#[derive(Clone, Copy, PartialEq)]
enum Ty {
    Int,
    Str,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Str => "str",
        }
    }
}

struct Session {
    /// `(role, process, location)`; the first entry is the starter.
    parts: Vec<(&'static str, &'static str, &'static str)>,
}

enum Event {
    Start(usize),
    Com {
        s: usize,
        from: usize,
        to: usize,
        payload: String,
        op: &'static str,
        var: String,
        ty: Ty,
        guard: Option<String>,
    },
}

pub struct Generated {
    pub name: String,
    pub src: String,
    pub communications: usize,
    pub sessions: usize,
    pub processes: usize,
}

fn render(evs: &[Event], sessions: &[Session], ind: usize) -> String {
    let pad = "  ".repeat(ind);
    let Some((first, rest)) = evs.split_first() else { return String::new() };
    let tail = render(rest, sessions, ind + usize::from(matches!(first, Event::Com { guard: Some(_), .. })));
    let sep = |s: String| if tail.is_empty() { s } else { format!("{s};\n{tail}") };
    match first {
        Event::Start(s) => {
            let ps = &sessions[*s].parts;
            let svc: Vec<String> = ps[1..].iter().map(|(r, p, l)| format!("{l}.{p}[{r}]")).collect();
            sep(format!("{pad}start k{s}: {}[{}] <-> {}", ps[0].1, ps[0].0, svc.join(", ")))
        }
        Event::Com { s, from, to, payload, op, var, guard, .. } => {
            let ps = &sessions[*s].parts;
            let (fr, fp, _) = ps[*from];
            let (tr, tp, _) = ps[*to];
            let com = |op: &str, pad: &str| format!("{pad}k{s}: {fp}[{fr}].{payload} -> {tp}[{tr}].{op}({var})");
            match guard {
                None => sep(com(op, &pad)),
                Some(g) => {
                    let inner = "  ".repeat(ind + 1);
                    let arm = |op: &str| {
                        if tail.is_empty() {
                            com(op, &inner)
                        } else {
                            format!("{};\n{tail}", com(op, &inner))
                        }
                    };
                    format!("{pad}if {fp}.{g} {{\n{}\n{pad}}} else {{\n{}\n{pad}}}", arm("hi"), arm("lo"))
                }
            }
        }
    }
}

fn global(evs: &[Event], s: usize, sessions: &[Session]) -> String {
    let mut it = evs.iter().enumerate().filter(|(_, e)| matches!(e, Event::Com { s: t, .. } if *t == s));
    let Some((i, Event::Com { from, to, op, ty, guard, .. })) = it.next() else { return String::new() };
    let rest = global(&evs[i + 1..], s, sessions);
    let ps = &sessions[s].parts;
    let arm = |op: &str| {
        if rest.is_empty() {
            format!("{op}({})", ty.name())
        } else {
            format!("{op}({}); {rest}", ty.name())
        }
    };
    let arms = if guard.is_some() { format!("{}, {}", arm("hi"), arm("lo")) } else { arm(op) };
    format!("{} -> {} {{ {arms} }}", ps[*from].0, ps[*to].0)
}

/// A program with at most four processes, two sessions and six
/// communications; every payload is typed by what the sender holds.
pub fn generate(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(g) = attempt(&mut rng, seed) {
            return g;
        }
    }
}

/// Fails when a declared role takes no part in its session.
fn attempt(rng: &mut ChaCha8Rng, seed: u64) -> Option<Generated> {
    let mut sessions = vec![Session { parts: vec![("A", "p", "lA"), ("B", "q", "lB")] }];
    if rng.gen_bool(0.5) {
        sessions[0].parts.push(("C", "r", "lC"));
    }
    if sessions[0].parts.len() < 4 && rng.gen_bool(0.5) {
        let starter = if rng.gen_bool(0.5) { ("A", "p", "lA") } else { ("A", "q", "lB") };
        sessions.push(Session { parts: vec![starter, ("B", "s", "lD")] });
    }
    let ns = sessions.len();
    let m = rng.gen_range(ns.max(2)..=6);
    let mut order: Vec<usize> = (0..m).map(|i| if i < ns { i } else { rng.gen_range(0..ns) }).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let first1 = order.iter().position(|&s| s == 1);
    let start1 = first1.map(|f| rng.gen_range(0..=f));

    let mut vars: BTreeMap<&str, Vec<(String, Ty)>> = BTreeMap::new();
    let mut evs = vec![Event::Start(0)];
    let mut guarded = false;
    for (i, &s) in order.iter().enumerate() {
        if start1 == Some(i) {
            evs.push(Event::Start(1));
        }
        let n = sessions[s].parts.len();
        let from = rng.gen_range(0..n);
        let to = (from + rng.gen_range(1..n)) % n;
        let sender = sessions[s].parts[from].1;
        let ints: Vec<String> =
            vars.get(sender).into_iter().flatten().filter(|(_, t)| *t == Ty::Int).map(|(v, _)| v.clone()).collect();
        let (payload, ty) = match rng.gen_range(0..10) {
            0 | 1 => (format!("\"s{i}\""), Ty::Str),
            2..=5 if !ints.is_empty() => {
                (format!("({} + {})", ints[rng.gen_range(0..ints.len())], rng.gen_range(0..5)), Ty::Int)
            }
            _ => (rng.gen_range(0..10).to_string(), Ty::Int),
        };
        let guard = if !guarded && !ints.is_empty() && rng.gen_bool(0.4) {
            guarded = true;
            Some(format!("{} < {}", ints[rng.gen_range(0..ints.len())], rng.gen_range(0..8)))
        } else {
            None
        };
        let var = format!("v{i}");
        vars.entry(sessions[s].parts[to].1).or_default().push((var.clone(), ty));
        let op = ["o", "m", "d"][rng.gen_range(0..3)];
        evs.push(Event::Com { s, from, to, payload, op, var, ty, guard });
    }

    for (s, sess) in sessions.iter().enumerate() {
        for r in 0..sess.parts.len() {
            if !evs
                .iter()
                .any(|e| matches!(e, Event::Com { s: t, from, to, .. } if *t == s && (*from == r || *to == r)))
            {
                return None;
            }
        }
    }

    let mut src = format!("# generated, seed {seed}\n\n");
    for (s, sess) in sessions.iter().enumerate() {
        let locs: Vec<&str> = sess.parts[1..].iter().map(|x| x.2).collect();
        let roles: Vec<String> = sess.parts[1..].iter().map(|(r, _, l)| format!("{r}@{l}")).collect();
        src += &format!(
            "protocol P{s} at {} roles A starter, {} {{\n  {}\n}}\n\n",
            locs.join(", "),
            roles.join(", "),
            global(&evs, s, &sessions)
        );
    }
    src += "deployment {\n  p @ lA;\n}\n\n";
    src += &render(&evs, &sessions, 0);
    src.push('\n');
    let processes = 1 + sessions.iter().map(|s| s.parts.len() - 1).sum::<usize>();
    Some(Generated { name: format!("gen{seed}"), src, communications: m, sessions: ns, processes })
}

pub fn corpus(n: u64) -> Vec<Generated> {
    (0..n).map(generate).collect()
}

/// The CLI invocations whose output is pinned under `tests/golden/`.
pub const GOLDEN: [(&str, &[&str]); 4] = [
    ("filetransfer.check.txt", &["check", "examples/filetransfer.ac"]),
    ("filetransfer.project.ac", &["project", "examples/filetransfer.ac"]),
    ("filetransfer.compile.dcc", &["compile", "examples/filetransfer.ac"]),
    ("filetransfer.run-seed42.txt", &["run", "--seed", "42", "--max-steps", "500", "examples/filetransfer.ac"]),
];

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn acc(args: &[&str]) -> CliOutput {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_acc"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .expect("acc runs");
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn golden_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}
