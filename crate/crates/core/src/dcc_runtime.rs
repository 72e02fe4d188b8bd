//! Interpreter for networks of the dynamic correlation calculus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcc::{Behaviour, DccProcess, Network};
use crate::expr::Expr;
use crate::keygen::KeyGen;
use crate::names::{base_name, Loc};
use crate::semantics::Scheduler;
use crate::tree::{Path, Tree, Value};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DccRule {
    Recv,
    Cq,
    Send,
    Start,
    Assign,
    Cond,
    Unfold,
}

impl DccRule {
    /// Steps that neither communicate nor touch queues.
    pub fn is_administrative(self) -> bool {
        matches!(self, DccRule::Assign | DccRule::Cond | DccRule::Unfold)
    }
}

impl fmt::Display for DccRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DccRule::Recv => "DCC-Recv",
            DccRule::Cq => "DCC-Cq",
            DccRule::Send => "DCC-Send",
            DccRule::Start => "DCC-Start",
            DccRule::Assign => "DCC-Assign",
            DccRule::Cond => "DCC-Cond",
            DccRule::Unfold => "DCC-Call",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DccRedex {
    pub rule: DccRule,
    pub loc: Loc,
    /// Index of the acting process within its service.
    pub index: usize,
    pub label: String,
    pub next: Network,
}

/// Sends that resolve a service but cannot be delivered.
#[derive(Clone, PartialEq, Eq, Debug, thiserror::Error)]
pub enum DccDiagnostic {
    #[error("no queue at {loc} correlates with {key}")]
    NoCorrelatingQueue { loc: Loc, key: Tree },
    #[error("correlation race at {loc}: {count} processes correlate with {key}")]
    CorrelationRace { loc: Loc, key: Tree, count: usize },
}

#[derive(Clone, Debug, Default)]
pub struct DccEnumeration {
    pub redexes: Vec<DccRedex>,
    pub diagnostics: Vec<DccDiagnostic>,
}

enum Frame {
    Seq(Behaviour),
    Def(crate::names::ProcName, Behaviour),
}

/// Splits a behaviour into the term in head position and its context.
fn focus(b: &Behaviour) -> (&Behaviour, Vec<Frame>) {
    let mut frames = Vec::new();
    let mut cur = b;
    loop {
        match cur {
            Behaviour::Seq(a, rest) => {
                frames.push(Frame::Seq((**rest).clone()));
                cur = a;
            }
            Behaviour::Def { name, body, cont } => {
                frames.push(Frame::Def(name.clone(), (**body).clone()));
                cur = cont;
            }
            _ => return (cur, frames),
        }
    }
}

fn plug(head: Behaviour, frames: &[Frame]) -> Behaviour {
    let mut out = head;
    for f in frames.iter().rev() {
        out = match f {
            Frame::Seq(rest) => Behaviour::seq(out, rest.clone()),
            Frame::Def(name, body) => {
                Behaviour::Def { name: name.clone(), body: Box::new(body.clone()), cont: Box::new(out) }
            }
        };
    }
    out.normalize()
}

fn eval_loc(e: &Expr, st: &Tree) -> Option<Loc> {
    match e.try_eval(st)?.value() {
        Some(Value::Loc(l)) => Some(l.clone()),
        _ => None,
    }
}

/// All keys of all queues in the service at `l`.
pub fn service_keys(net: &Network, l: &Loc) -> BTreeSet<Tree> {
    net.services.get(l).map(|s| s.processes.iter().flat_map(|p| p.queues.keys().cloned()).collect()).unwrap_or_default()
}

/// The processes of the service at `loc` with a queue correlating with `key`.
/// Routing looks at nothing else.
pub fn route(net: &Network, loc: &Loc, key: &Tree) -> Vec<usize> {
    net.services
        .get(loc)
        .map(|s| s.processes.iter().enumerate().filter(|(_, p)| p.queues.contains(key)).map(|(i, _)| i).collect())
        .unwrap_or_default()
}

fn with_process(net: &Network, l: &Loc, i: usize, p: DccProcess) -> Network {
    let mut n = net.clone();
    n.services.get_mut(l).unwrap().processes[i] = p;
    n
}

fn process_moves(net: &Network, l: &Loc, i: usize, keygen: &dyn KeyGen, en: &mut DccEnumeration) {
    let proc = &net.services[l].processes[i];
    let (head, frames) = focus(&proc.behaviour);
    let st = &proc.state;
    let mut push = |rule: DccRule, label: String, next: Network| {
        en.redexes.push(DccRedex { rule, loc: l.clone(), index: i, label: format!("{l}[{i}] {label}"), next });
    };
    let resume = |p: &DccProcess, head: Behaviour| DccProcess { behaviour: plug(head, &frames), ..p.clone() };
    match head {
        Behaviour::Inact | Behaviour::Seq(..) | Behaviour::Def { .. } => {}
        Behaviour::Call(x) => {
            let body = frames.iter().rev().find_map(|f| match f {
                Frame::Def(n, b) if n == x => Some(b.clone()),
                _ => None,
            });
            if let Some(b) = body {
                push(DccRule::Unfold, format!("call {x}"), with_process(net, l, i, resume(proc, b)));
            }
        }
        Behaviour::Assign(x, e) => {
            if let Some(v) = e.try_eval(st) {
                let mut p = resume(proc, Behaviour::Inact);
                p.state = st.replace(x, v);
                push(DccRule::Assign, format!("{x} := {e}"), with_process(net, l, i, p));
            }
        }
        Behaviour::Cond { guard, then, els } => {
            if let Some(Value::Bool(b)) = guard.try_eval(st).as_ref().and_then(|t| t.value()) {
                let b = *b;
                let taken = if b { (**then).clone() } else { (**els).clone() };
                let label = format!("if ({guard}) -> {}", if b { "then" } else { "else" });
                push(DccRule::Cond, label, with_process(net, l, i, resume(proc, taken)));
            }
        }
        Behaviour::CQueue(x) => {
            let key = keygen.fresh_key(l, &service_keys(net, l));
            let mut p = resume(proc, Behaviour::Inact);
            p.state = st.replace(x, key.clone());
            p.queues.open(key.clone());
            push(DccRule::Cq, format!("cqueue({x}) = {}", key.to_text()), with_process(net, l, i, p));
        }
        Behaviour::Input { op, var, from } => {
            let Some(key) = from.try_eval(st) else { return };
            if matches!(proc.queues.head(&key), Some((o, _)) if o == op) {
                let mut p = resume(proc, Behaviour::Inact);
                let (_, t) = p.queues.dequeue(&key).unwrap();
                p.state = st.replace(var, t);
                push(DccRule::Recv, format!("recv {op}({var}) from {}", key.to_text()), with_process(net, l, i, p));
            }
        }
        Behaviour::Choice { from, branches } => {
            let Some(key) = from.try_eval(st) else { return };
            let Some((o, _)) = proc.queues.head(&key) else { return };
            let Some(b) = branches.iter().find(|b| &b.op == o) else { return };
            let mut p = resume(proc, b.cont.clone());
            let (_, t) = p.queues.dequeue(&key).unwrap();
            if let Some(x) = &b.var {
                p.state = st.replace(x, t);
            }
            push(DccRule::Recv, format!("choice {o} from {}", key.to_text()), with_process(net, l, i, p));
        }
        Behaviour::Output { to, op, payload, key } => {
            let (Some(target), Some(k), Some(msg)) = (eval_loc(to, st), key.try_eval(st), payload.try_eval(st)) else {
                return;
            };
            if !net.services.contains_key(&target) {
                return;
            }
            let qs = route(net, &target, &k);
            match qs.len() {
                0 => en.diagnostics.push(DccDiagnostic::NoCorrelatingQueue { loc: target, key: k }),
                1 => {
                    let mut n = with_process(net, l, i, resume(proc, Behaviour::Inact));
                    n.services.get_mut(&target).unwrap().processes[qs[0]].queues.enqueue(&k, (op.clone(), msg.clone()));
                    push(DccRule::Send, format!("send {op}({}) to {target} key {}", msg.to_text(), k.to_text()), n);
                }
                count => en.diagnostics.push(DccDiagnostic::CorrelationRace { loc: target, key: k, count }),
            }
        }
        Behaviour::Request { to, payload } => {
            let (Some(target), Some(msg)) = (eval_loc(to, st), payload.try_eval(st)) else { return };
            let Some(sb) = net.services.get(&target).and_then(|s| s.start.as_ref()) else { return };
            let spawned = DccProcess {
                behaviour: sb.body.normalize(),
                state: Tree::empty().replace(&sb.var, msg.clone()),
                queues: Default::default(),
            };
            let mut n = with_process(net, l, i, resume(proc, Behaviour::Inact));
            n.services.get_mut(&target).unwrap().processes.push(spawned);
            push(DccRule::Start, format!("request {target}"), n);
        }
    }
}

/// All enabled steps of a network.
pub fn enumerate(net: &Network, keygen: &dyn KeyGen) -> DccEnumeration {
    let mut en = DccEnumeration::default();
    for (l, s) in &net.services {
        for i in 0..s.processes.len() {
            process_moves(net, l, i, keygen, &mut en);
        }
    }
    en
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("the redex is not enabled in this network")]
pub struct StaleDccRedex;

pub fn step(net: &Network, r: &DccRedex, keygen: &dyn KeyGen) -> Result<Network, StaleDccRedex> {
    if enumerate(net, keygen).redexes.iter().any(|x| x == r) {
        Ok(r.next.clone())
    } else {
        Err(StaleDccRedex)
    }
}

pub fn is_terminated(net: &Network) -> bool {
    net.services.values().all(|s| s.processes.iter().all(|p| p.behaviour.normalize() == Behaviour::Inact))
}

/// Keys owned by more than one process of a service.
pub fn key_clashes(net: &Network) -> Vec<(Loc, Tree)> {
    let mut out = Vec::new();
    for (l, s) in &net.services {
        let mut seen = BTreeSet::new();
        for p in &s.processes {
            for k in p.queues.keys() {
                if !seen.insert(k) {
                    out.push((l.clone(), k.clone()));
                }
            }
        }
    }
    out
}

fn rename_keys(t: &Tree, map: &BTreeMap<Tree, Tree>) -> Tree {
    if let Some(to) = map.get(t) {
        return to.clone();
    }
    t.map_values(&mut |v| match v {
        Value::Key(..) => map.get(&Tree::leaf(v.clone())).and_then(|k| k.value().cloned()).unwrap_or_else(|| v.clone()),
        _ => v.clone(),
    })
}

fn mask_keys(t: &Tree) -> Tree {
    t.map_values(&mut |v| match v {
        Value::Key(l, _) => Value::Key(l.clone(), 0),
        _ => v.clone(),
    })
}

fn masked(p: &DccProcess) -> (Behaviour, Tree, Vec<(Tree, Vec<(String, Tree)>)>) {
    let mut qs: Vec<(Tree, Vec<(String, Tree)>)> = p
        .queues
        .0
        .iter()
        .map(|(k, q)| (mask_keys(k), q.iter().map(|(o, t)| (o.to_string(), mask_keys(t))).collect()))
        .collect();
    qs.sort();
    (p.behaviour.clone(), mask_keys(&p.state), qs)
}

fn collect_keys(t: &Tree, out: &mut Vec<Tree>) {
    t.for_each_value(&mut |v| {
        if let Value::Key(..) = v {
            out.push(Tree::leaf(v.clone()));
        }
    });
}

/// A representative of the network up to process order and a bijective
/// renaming of correlation keys within each location.
pub fn canonical(net: &Network) -> Network {
    let mut n = net.clone();
    for s in n.services.values_mut() {
        for p in &mut s.processes {
            p.behaviour = p.behaviour.normalize();
        }
        s.processes.sort_by_cached_key(masked);
    }
    let mut order = Vec::new();
    for s in n.services.values() {
        for p in &s.processes {
            collect_keys(&p.state, &mut order);
        }
        for p in &s.processes {
            for (k, q) in &p.queues.0 {
                order.push(k.clone());
                for (_, t) in q {
                    collect_keys(t, &mut order);
                }
            }
        }
    }
    let mut map: BTreeMap<Tree, Tree> = BTreeMap::new();
    let mut next: BTreeMap<Loc, u64> = BTreeMap::new();
    for k in order {
        if map.contains_key(&k) {
            continue;
        }
        if let Some(Value::Key(l, _)) = k.value() {
            let c = next.entry(l.clone()).or_insert(0);
            map.insert(k.clone(), Tree::key(l, *c));
            *c += 1;
        }
    }
    for s in n.services.values_mut() {
        for p in &mut s.processes {
            p.state = rename_keys(&p.state, &map);
            p.queues = p.queues.map_trees(&mut |t| rename_keys(t, &map));
        }
        s.processes.sort();
    }
    n
}

fn strip_fresh(s: &str) -> String {
    base_name(s).to_string()
}

/// The canonical form used to compare a running network with the image of
/// a choreography: handshake bookkeeping under `$` labels is dropped and
/// fresh-name suffixes are erased from session paths.
pub fn observable(net: &Network) -> Network {
    let mut n = net.clone();
    let strip_path = |p: &Path| Path::from_segments(p.segments().iter().map(|s| strip_fresh(s)));
    for s in n.services.values_mut() {
        if let Some(sb) = &mut s.start {
            sb.var = strip_path(&sb.var);
            sb.body = sb.body.map_paths(&strip_path);
        }
        for p in &mut s.processes {
            p.behaviour = p.behaviour.map_paths(&strip_path);
            p.state = p.state.without_labels(&|l: &str| l.starts_with('$')).map_labels(&strip_fresh);
        }
    }
    canonical(&n)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DccOutcome {
    Terminated,
    Stuck(Vec<DccDiagnostic>),
    BudgetExhausted,
    CorrelationRace(DccDiagnostic),
}

impl fmt::Display for DccOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DccOutcome::Terminated => f.write_str("terminated"),
            DccOutcome::Stuck(ds) if ds.is_empty() => f.write_str("stuck"),
            DccOutcome::Stuck(ds) => {
                let v: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
                write!(f, "stuck: {}", v.join("; "))
            }
            DccOutcome::BudgetExhausted => f.write_str("step budget exhausted"),
            DccOutcome::CorrelationRace(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DccTraceStep {
    pub rule: DccRule,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct DccTrace {
    pub steps: Vec<DccTraceStep>,
    pub outcome: DccOutcome,
    pub last: Network,
}

impl DccTrace {
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.steps.iter().enumerate().map(|(i, s)| format!("step {} rule={} {}", i + 1, s.rule, s.label)).collect();
        out.push(format!("outcome {}", self.outcome));
        out
    }
}

pub fn run(start: &Network, sched: &Scheduler, max_steps: usize, keygen: &dyn KeyGen) -> DccTrace {
    let mut rng = match sched {
        Scheduler::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Scheduler::Script(_) => None,
    };
    let mut cur = start.clone();
    let mut steps = Vec::new();
    loop {
        let en = enumerate(&cur, keygen);
        if let Some(d) = en.diagnostics.iter().find(|d| matches!(d, DccDiagnostic::CorrelationRace { .. })) {
            return DccTrace { steps, outcome: DccOutcome::CorrelationRace(d.clone()), last: cur };
        }
        if en.redexes.is_empty() {
            let outcome = if is_terminated(&cur) { DccOutcome::Terminated } else { DccOutcome::Stuck(en.diagnostics) };
            return DccTrace { steps, outcome, last: cur };
        }
        if steps.len() >= max_steps {
            return DccTrace { steps, outcome: DccOutcome::BudgetExhausted, last: cur };
        }
        let i = match (sched, rng.as_mut()) {
            (_, Some(r)) => r.gen_range(0..en.redexes.len()),
            (Scheduler::Script(s), None) => s.get(steps.len()).copied().filter(|i| *i < en.redexes.len()).unwrap_or(0),
            _ => 0,
        };
        let r = &en.redexes[i];
        steps.push(DccTraceStep { rule: r.rule, label: r.label.clone() });
        cur = r.next.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcc::{DBranch, Service, StartBehaviour};
    use crate::deployment::QueueMap;
    use crate::keygen::CounterKeys;
    use crate::parser::parse_behaviour;

    fn b(s: &str) -> Behaviour {
        parse_behaviour(s).unwrap()
    }

    fn proc_(beh: Behaviour, state: Tree, keys: &[Tree]) -> DccProcess {
        let mut q = QueueMap::new();
        for k in keys {
            q.open(k.clone());
        }
        DccProcess { behaviour: beh, state, queues: q }
    }

    fn net(services: Vec<(&str, Option<StartBehaviour>, Vec<DccProcess>)>) -> Network {
        Network {
            services: services
                .into_iter()
                .map(|(l, start, processes)| (Loc::new(l), Service { start, processes }))
                .collect(),
        }
    }

    #[test]
    fn empty_network_has_no_redex() {
        assert!(enumerate(&Network::default(), &CounterKeys).redexes.is_empty());
        let t = run(&Network::default(), &Scheduler::Seeded(0), 10, &CounterKeys);
        assert_eq!(t.outcome, DccOutcome::Terminated);
    }

    #[test]
    fn choice_takes_matching_branch_and_drops_others() {
        let key = Tree::key(&Loc::new("l"), 0);
        let mut p = proc_(
            Behaviour::Choice {
                from: Expr::path("k"),
                branches: vec![
                    DBranch { op: "a".into(), var: Some(Path::parse("x")), cont: b("y := 1") },
                    DBranch { op: "b".into(), var: Some(Path::parse("x")), cont: b("y := 2") },
                ],
            },
            Tree::empty().replace(&Path::parse("k"), key.clone()),
            std::slice::from_ref(&key),
        );
        p.queues.enqueue(&key, ("b".into(), Tree::int(7)));
        let n = net(vec![("l", None, vec![p])]);
        let en = enumerate(&n, &CounterKeys);
        assert_eq!(en.redexes.len(), 1);
        let p2 = &en.redexes[0].next.services[&Loc::new("l")].processes[0];
        assert_eq!(p2.behaviour, b("y := 2"));
        assert_eq!(p2.state.value_at(&Path::parse("x")), Some(&Value::Int(7)));
        assert!(p2.queues.get(&key).unwrap().is_empty());
    }

    #[test]
    fn output_reaches_only_the_correlating_queue() {
        let l2 = Loc::new("l2");
        let k0 = Tree::key(&l2, 0);
        let k1 = Tree::key(&l2, 1);
        let st = Tree::empty().replace(&Path::parse("dest"), Tree::loc("l2")).replace(&Path::parse("kk"), k1.clone());
        let sender = proc_(b("send o(5) to dest key kk"), st, &[]);
        let n = net(vec![
            ("l1", None, vec![sender]),
            (
                "l2",
                None,
                vec![
                    proc_(Behaviour::Inact, Tree::empty(), &[k0.clone()]),
                    proc_(Behaviour::Inact, Tree::empty(), &[k1.clone()]),
                ],
            ),
        ]);
        let en = enumerate(&n, &CounterKeys);
        assert_eq!(en.redexes.len(), 1);
        let ps = &en.redexes[0].next.services[&l2].processes;
        assert!(ps[0].queues.get(&k0).unwrap().is_empty());
        assert_eq!(ps[1].queues.get(&k1).unwrap().len(), 1);
    }

    #[test]
    fn output_without_correlating_queue_is_diagnosed() {
        let st = Tree::empty()
            .replace(&Path::parse("dest"), Tree::loc("l2"))
            .replace(&Path::parse("kk"), Tree::key(&Loc::new("l2"), 3));
        let n = net(vec![("l1", None, vec![proc_(b("send o(5) to dest key kk"), st, &[])]), ("l2", None, vec![])]);
        let en = enumerate(&n, &CounterKeys);
        assert!(en.redexes.is_empty());
        assert!(matches!(en.diagnostics[0], DccDiagnostic::NoCorrelatingQueue { .. }));
    }

    #[test]
    fn request_spawns_with_the_start_behaviour() {
        let sb = StartBehaviour { var: Path::parse("x"), body: b("y := x.v") };
        let st = Tree::empty().replace(&Path::parse("dest"), Tree::loc("srv"));
        let n = net(vec![("cl", None, vec![proc_(b("request dest ({v: 3})"), st, &[])]), ("srv", Some(sb), vec![])]);
        let en = enumerate(&n, &CounterKeys);
        let spawned = &en.redexes[0].next.services[&Loc::new("srv")].processes[0];
        assert_eq!(spawned.behaviour, b("y := x.v"));
        assert_eq!(spawned.state.value_at(&Path::parse("x.v")), Some(&Value::Int(3)));
        assert!(spawned.queues.0.is_empty());
    }

    #[test]
    fn successive_cqueues_mint_distinct_keys() {
        let n = net(vec![("l", None, vec![proc_(b("cqueue(a); cqueue(b)"), Tree::empty(), &[])])]);
        let t = run(&n, &Scheduler::Script(vec![]), 10, &CounterKeys);
        let p = &t.last.services[&Loc::new("l")].processes[0];
        assert_ne!(p.state.resolve(&Path::parse("a")), p.state.resolve(&Path::parse("b")));
        assert_eq!(p.queues.0.len(), 2);
    }

    #[test]
    fn canonical_ignores_key_numbering() {
        let l = Loc::new("l");
        let mk = |n| {
            let k = Tree::key(&l, n);
            net(vec![(
                "l",
                None,
                vec![proc_(Behaviour::Inact, Tree::empty().replace(&Path::parse("k"), k.clone()), &[k])],
            )])
        };
        assert_ne!(mk(0), mk(5));
        assert_eq!(canonical(&mk(0)), canonical(&mk(5)));
    }
}
