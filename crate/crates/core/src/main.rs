use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use applied_chor::compiler::{compile_network, Mutations};
use applied_chor::dcc::Network;
use applied_chor::dcc_runtime::{self, DccOutcome};
use applied_chor::deployment::Deployment;
use applied_chor::epp::{endpoints, epp, Owner};
use applied_chor::harness::{compile_correspondence, epp_correspondence, handshake_check, DccGraph, Graph, Verdict};
use applied_chor::keygen::{CounterKeys, KeyGen, SeededKeys};
use applied_chor::parser::{parse_network, parse_program};
use applied_chor::program::Program;
use applied_chor::semantics::{self, Outcome, RunningChor, Scheduler};
use applied_chor::typing::{check_running, coherence, typecheck_program, Diagnostic, Witnesses};

#[derive(Parser)]
#[command(name = "acc", version, about = "Applied choreographies: checker, projector, compiler and simulator")]
struct Cli {
    /// Machine-readable output and diagnostics.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Typecheck a program, check coherence and its initial deployment.
    Check { file: PathBuf },
    /// Project a program onto its endpoints.
    Project {
        file: PathBuf,
        /// Write one file per endpoint and a manifest into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compile a program and its deployment into a DCC network.
    Compile {
        file: PathBuf,
        /// Deployment snapshot (JSON) replacing the default deployment.
        #[arg(long)]
        deployment: Option<PathBuf>,
        #[arg(long)]
        emit_manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a choreography.
    Run(RunArgs),
    /// Run the compiled network of a program, or a `.dcc` network.
    Simulate(RunArgs),
    /// Dump the reduction graph as one JSON object per node.
    Graph {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "ac")]
        level: Level,
        #[arg(long, default_value_t = 10_000)]
        bound: usize,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Run the correspondence suite.
    Verify {
        file: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        bound: usize,
        #[command(flatten)]
        keys: KeyArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    #[arg(long, conflicts_with = "script")]
    seed: Option<u64>,
    /// Comma separated redex indices.
    #[arg(long, value_delimiter = ',')]
    script: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Explore every interleaving instead of a single run.
    #[arg(long)]
    exhaustive: bool,
    #[command(flatten)]
    keys: KeyArgs,
}

#[derive(Args)]
struct KeyArgs {
    /// Draw correlation keys from a seeded stream instead of counters.
    #[arg(long)]
    key_seed: Option<u64>,
}

impl KeyArgs {
    fn keygen(&self) -> Box<dyn KeyGen> {
        match self.key_seed {
            Some(s) => Box::new(SeededKeys::new(s)),
            None => Box::new(CounterKeys),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Ac,
    Epp,
    Dcc,
}

enum Failure {
    Usage(String),
    Analysis(Json),
}

type Res = Result<String, Failure>;

fn usage(m: impl ToString) -> Failure {
    Failure::Usage(m.to_string())
}

fn analysis(stage: &str, m: impl ToString) -> Failure {
    Failure::Analysis(json!({ "stage": stage, "message": m.to_string() }))
}

fn diagnostics(stage: &str, ds: &[Diagnostic]) -> Failure {
    let text: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
    Failure::Analysis(json!({
        "stage": stage,
        "message": text.join("\n"),
        "diagnostics": ds.iter().map(Diagnostic::to_json).collect::<Vec<_>>(),
    }))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, s: &str) -> Result<(), Failure> {
    fs::write(path, s).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Program, Failure> {
    parse_program(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn initial(p: &Program) -> Result<RunningChor, Failure> {
    RunningChor::initial(p).map_err(|e| analysis("deployment", e))
}

fn projected(s: &RunningChor) -> Result<RunningChor, Failure> {
    Ok(RunningChor { d: s.d.clone(), c: epp(&s.c).map_err(|e| analysis("projection", e))? })
}

fn network(p: &Program, s: &RunningChor) -> Result<Network, Failure> {
    compile_network(p, &projected(s)?, Mutations::default()).map_err(|e| analysis("compile", e))
}

fn hash(s: &str) -> String {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn pretty(j: &Json) -> String {
    serde_json::to_string_pretty(j).expect("json values serialise")
}

fn check(file: &Path, as_json: bool) -> Res {
    let p = load(file)?;
    let g = typecheck_program(&p).map_err(|d| diagnostics("typing", &[d]))?;
    let w = Witnesses::new();
    coherence(&g, &w).map_err(|d| diagnostics("coherence", &[d]))?;
    let rep = check_running(&g, &initial(&p)?, &w);
    if !rep.is_ok() {
        return Err(diagnostics("deployment", &rep.diagnostics));
    }
    Ok(if as_json { pretty(&json!({ "ok": true })) } else { "ok".into() })
}

fn owner_name(o: &Owner) -> String {
    match o {
        Owner::Process(p) => p.to_string(),
        Owner::Service(l) => format!("service-{l}"),
    }
}

fn project(file: &Path, out_dir: Option<&Path>, as_json: bool) -> Res {
    let p = load(file)?;
    let eps = endpoints(&p.chor).map_err(|e| analysis("projection", e))?;
    let placement = p.placement();
    let mut manifest = Vec::new();
    let mut files = Vec::new();
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    for e in &eps {
        let mut name = owner_name(&e.owner);
        let n = seen.entry(name.clone()).or_default();
        if *n > 0 {
            name = format!("{name}-{n}");
        }
        *n += 1;
        let (kind, loc) = match &e.owner {
            Owner::Process(q) => ("process", placement.get(q).map(|l| l.to_string())),
            Owner::Service(l) => ("service", Some(l.to_string())),
        };
        let roles: Vec<String> = match &e.chor {
            applied_chor::chor::Chor::Acc { services, .. } => services.iter().map(|s| s.role.to_string()).collect(),
            _ => Vec::new(),
        };
        let fp = e.chor.free_processes();
        let sub = Program {
            protocols: p.protocols.clone(),
            placements: placement
                .iter()
                .filter(|(q, _)| fp.contains(*q))
                .map(|(q, l)| (q.clone(), l.clone()))
                .collect(),
            chor: e.chor.clone(),
        };
        manifest.push(
            json!({ "endpoint": name, "kind": kind, "location": loc, "roles": roles, "file": format!("{name}.ac") }),
        );
        files.push((format!("{name}.ac"), sub.to_string()));
    }
    let manifest = json!({ "source": file.display().to_string(), "endpoints": manifest });
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
        for (f, text) in &files {
            write(&dir.join(f), text)?;
        }
        write(&dir.join("manifest.json"), &pretty(&manifest))?;
    }
    if as_json {
        return Ok(pretty(&manifest));
    }
    let whole = Program { chor: epp(&p.chor).map_err(|e| analysis("projection", e))?, ..p };
    Ok(whole.to_string())
}

fn compile(file: &Path, snapshot: Option<&Path>, manifest: Option<&Path>, out: Option<&Path>, as_json: bool) -> Res {
    let p = load(file)?;
    let mut s = initial(&p)?;
    if let Some(path) = snapshot {
        let j: Json = serde_json::from_str(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        s.d = Deployment::from_json(&j).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let net = network(&p, &s)?;
    if let Some(path) = manifest {
        let m: serde_json::Map<String, Json> = net
            .services
            .iter()
            .map(|(l, sv)| (l.to_string(), json!({ "accepts": sv.start.is_some(), "processes": sv.processes.len() })))
            .collect();
        write(path, &pretty(&Json::Object(m)))?;
    }
    let text = if as_json { pretty(&net.to_json()) } else { net.to_string() };
    match out {
        Some(path) => write(path, &text).map(|_| String::new()),
        None => Ok(text),
    }
}

fn scheduler(a: &RunArgs) -> Scheduler {
    match (&a.script, a.seed) {
        (Some(s), _) => Scheduler::Script(s.clone()),
        (None, seed) => Scheduler::Seeded(seed.unwrap_or(0)),
    }
}

fn summary(states: usize, edges: usize, stuck: usize, races: usize, truncated: bool, as_json: bool) -> Res {
    let ok = stuck == 0 && races == 0 && !truncated;
    let j = json!({ "states": states, "edges": edges, "stuck": stuck, "races": races, "truncated": truncated });
    let text = if as_json {
        pretty(&j)
    } else {
        format!("states {states}\nedges {edges}\nstuck {stuck}\nraces {races}\ntruncated {truncated}")
    };
    if ok {
        Ok(text)
    } else {
        Err(Failure::Analysis(json!({ "stage": "exploration", "message": text, "graph": j })))
    }
}

fn run(a: &RunArgs, as_json: bool) -> Res {
    let p = load(&a.file)?;
    let s = initial(&p)?;
    let keys = a.keys.keygen();
    if a.exhaustive {
        let g = Graph::explore(&s, keys.as_ref(), a.max_steps);
        let races: std::collections::BTreeSet<usize> = g.races.iter().map(|(i, _)| *i).collect();
        return summary(g.nodes.len(), g.edges.len(), g.stuck().len(), races.len(), g.truncated, as_json);
    }
    let t = semantics::run(&s, &scheduler(a), a.max_steps, keys.as_ref());
    let text = if as_json {
        let steps: Vec<Json> =
            t.steps.iter().map(|x| json!({ "rule": x.rule.to_string(), "effect": x.label, "changed": x.changed.iter().map(|p| p.to_string()).collect::<Vec<_>>() })).collect();
        pretty(&json!({ "steps": steps, "outcome": t.outcome.to_string(), "deployment": t.last.d.to_json() }))
    } else {
        t.lines().join("\n")
    };
    match t.outcome {
        Outcome::Terminated => Ok(text),
        _ => Err(Failure::Analysis(json!({ "stage": "run", "message": text }))),
    }
}

fn load_network(a: &RunArgs) -> Result<Network, Failure> {
    if a.file.extension().is_some_and(|e| e == "dcc") {
        return parse_network(&read(&a.file)?).map_err(|e| usage(format!("{}: {e}", a.file.display())));
    }
    let p = load(&a.file)?;
    network(&p, &initial(&p)?)
}

fn simulate(a: &RunArgs, as_json: bool) -> Res {
    let net = load_network(a)?;
    let keys = a.keys.keygen();
    if a.exhaustive {
        let g = DccGraph::explore(&net, keys.as_ref(), a.max_steps);
        let stuck = (0..g.nodes.len())
            .filter(|i| !g.edges.iter().any(|e| e.0 == *i) && !dcc_runtime::is_terminated(&g.nodes[*i]))
            .count();
        let races: std::collections::BTreeSet<usize> = g.diagnostics.iter().map(|(i, _)| *i).collect();
        return summary(g.nodes.len(), g.edges.len(), stuck, races.len(), g.truncated, as_json);
    }
    let t = dcc_runtime::run(&net, &scheduler(a), a.max_steps, keys.as_ref());
    let text = if as_json {
        let steps: Vec<Json> =
            t.steps.iter().map(|x| json!({ "rule": x.rule.to_string(), "effect": x.label })).collect();
        pretty(&json!({ "steps": steps, "outcome": t.outcome.to_string(), "network": t.last.to_json() }))
    } else {
        t.lines().join("\n")
    };
    match t.outcome {
        DccOutcome::Terminated => Ok(text),
        _ => Err(Failure::Analysis(json!({ "stage": "simulate", "message": text }))),
    }
}

fn ac_node(s: &RunningChor) -> String {
    format!("{}\n{}", s.c, s.d.to_json())
}

fn graph(file: &Path, level: Level, bound: usize, keys: &KeyArgs) -> Res {
    if bound == 0 {
        return Err(usage("the bound must be positive"));
    }
    let p = load(file)?;
    let s = initial(&p)?;
    let keygen = keys.keygen();
    let mut lines = Vec::new();
    let truncated = match level {
        Level::Ac | Level::Epp => {
            let start = if matches!(level, Level::Epp) { projected(&s)? } else { s };
            let g = Graph::explore(&start, keygen.as_ref(), bound);
            for (i, n) in g.nodes.iter().enumerate() {
                let edges: Vec<Json> = g
                    .edges
                    .iter()
                    .filter(|e| e.from == i)
                    .map(|e| json!({ "to": e.to, "rule": e.rule.to_string(), "effect": e.label }))
                    .collect();
                let text = ac_node(n);
                lines.push(json!({ "id": i, "hash": hash(&text), "terminated": n.is_terminated(), "term": n.c.to_string(), "deployment": n.d.to_json(), "edges": edges }));
            }
            g.truncated
        }
        Level::Dcc => {
            let net = network(&p, &s)?;
            let g = DccGraph::explore(&net, keygen.as_ref(), bound);
            for (i, n) in g.nodes.iter().enumerate() {
                let edges: Vec<Json> = g
                    .edges
                    .iter()
                    .filter(|e| e.0 == i)
                    .map(|e| json!({ "to": e.1, "rule": e.2.to_string(), "effect": e.3 }))
                    .collect();
                lines.push(json!({ "id": i, "hash": hash(&n.to_string()), "terminated": dcc_runtime::is_terminated(n), "network": n.to_json(), "edges": edges }));
            }
            g.truncated
        }
    };
    if truncated {
        eprintln!("graph truncated at {} nodes", lines.len());
    }
    Ok(lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n"))
}

fn verify(file: &Path, bound: usize, keys: &KeyArgs, as_json: bool) -> Res {
    if bound == 0 {
        return Err(usage("the bound must be positive"));
    }
    check(file, false)?;
    let p = load(file)?;
    let s = initial(&p)?;
    let keygen = keys.keygen();
    let ps = projected(&s)?;
    let net = network(&p, &s)?;
    let results: Vec<(&str, Verdict)> = vec![
        ("epp-correspondence", epp_correspondence(&s, keygen.as_ref(), bound)),
        ("compile-correspondence", compile_correspondence(&p, &ps, keygen.as_ref(), Mutations::default(), bound)),
        ("handshake", handshake_check(&net, keygen.as_ref(), bound)),
    ];
    let ok = results.iter().all(|(_, v)| v.is_pass());
    let text = if as_json {
        let m: serde_json::Map<String, Json> = results
            .iter()
            .map(|(n, v)| {
                let j = match v {
                    Verdict::Pass { states } => json!({ "verdict": "pass", "states": states }),
                    Verdict::Inconclusive { states } => json!({ "verdict": "inconclusive", "states": states }),
                    Verdict::Fail { reason, path } => json!({ "verdict": "fail", "reason": reason, "path": path }),
                };
                (n.to_string(), j)
            })
            .collect();
        pretty(&Json::Object(m))
    } else {
        results.iter().map(|(n, v)| format!("{n}: {v}")).collect::<Vec<_>>().join("\n")
    };
    if ok {
        Ok(text)
    } else {
        Err(Failure::Analysis(json!({ "stage": "verify", "message": text })))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let j = cli.json;
    let res = match &cli.verb {
        Verb::Check { file } => check(file, j),
        Verb::Project { file, out_dir } => project(file, out_dir.as_deref(), j),
        Verb::Compile { file, deployment, emit_manifest, out } => {
            compile(file, deployment.as_deref(), emit_manifest.as_deref(), out.as_deref(), j)
        }
        Verb::Run(a) => run(a, j),
        Verb::Simulate(a) => simulate(a, j),
        Verb::Graph { file, level, bound, keys } => graph(file, *level, *bound, keys),
        Verb::Verify { file, bound, keys } => verify(file, *bound, keys, j),
    };
    match res {
        Ok(out) => {
            if !out.is_empty() {
                let _ = writeln!(std::io::stdout(), "{out}");
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            if j {
                eprintln!("{}", json!({ "error": "usage", "message": m }));
            } else {
                eprintln!("error: {m}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Analysis(d)) => {
            if j {
                eprintln!("{d}");
            } else {
                eprintln!("{}", d["message"].as_str().unwrap_or_default());
            }
            ExitCode::from(1)
        }
    }
}
