//! Exhaustive exploration of reduction graphs and the checks run over them:
//! subject reduction, progress and operational correspondence of projection.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use crate::chor::{Branch, Chor};
use crate::compiler::{compile_network, Mutations};
use crate::dcc::Network;
use crate::dcc_runtime::{self, canonical, observable, DccDiagnostic, DccRule};
use crate::program::Program;
use crate::tree::{Tree, Value};

use crate::deployment::EffectError;
use crate::epp::{epp, prunes, EppError};
use crate::keygen::KeyGen;
use crate::semantics::{enumerate, Rule, RunningChor};
use crate::typing::{advance, check_running, Env, Report, Witnesses};

pub const DEFAULT_BOUND: usize = 50_000;

#[derive(Clone, Debug)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rule: Rule,
    pub label: String,
}

/// The reachable states of a running choreography, breadth first.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub nodes: Vec<RunningChor>,
    pub edges: Vec<Edge>,
    pub races: Vec<(usize, EffectError)>,
    pub truncated: bool,
}

impl Graph {
    pub fn explore(start: &RunningChor, keygen: &dyn KeyGen, bound: usize) -> Graph {
        let mut g = Graph::default();
        let mut index: HashMap<RunningChor, usize> = HashMap::new();
        index.insert(start.clone(), 0);
        g.nodes.push(start.clone());
        let mut i = 0;
        while i < g.nodes.len() {
            let en = enumerate(&g.nodes[i], keygen);
            g.races.extend(en.races.into_iter().map(|e| (i, e)));
            for r in en.redexes {
                let to = match index.get(&r.next) {
                    Some(&j) => j,
                    None => {
                        if g.nodes.len() >= bound {
                            g.truncated = true;
                            continue;
                        }
                        g.nodes.push(r.next.clone());
                        index.insert(r.next, g.nodes.len() - 1);
                        g.nodes.len() - 1
                    }
                };
                g.edges.push(Edge { from: i, to, rule: r.rule, label: r.label });
            }
            i += 1;
        }
        g
    }

    /// States with no successor that still have something to do.
    pub fn stuck(&self) -> Vec<usize> {
        let mut has_out = vec![false; self.nodes.len()];
        for e in &self.edges {
            has_out[e.from] = true;
        }
        (0..self.nodes.len()).filter(|&i| !has_out[i] && !self.nodes[i].is_terminated()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SubjectReductionFailure {
    pub rule: Rule,
    pub label: String,
    pub state: String,
    pub report: Option<Report>,
}

/// Checks that every reachable state is typable by some environment obtained
/// by stepping the environment of its predecessor. Returns the number of
/// states visited.
pub fn subject_reduction(
    gamma: &Env,
    start: &RunningChor,
    keygen: &dyn KeyGen,
    bound: usize,
) -> Result<usize, SubjectReductionFailure> {
    let w = Witnesses::new();
    let rep = check_running(gamma, start, &w);
    if !rep.is_ok() {
        return Err(SubjectReductionFailure {
            rule: Rule::Start,
            label: "initial state".into(),
            state: start.c.to_string(),
            report: Some(rep),
        });
    }
    let mut seen = HashSet::from([start.clone()]);
    let mut todo = VecDeque::from([(start.clone(), gamma.clone())]);
    while let Some((s, g)) = todo.pop_front() {
        for r in enumerate(&s, keygen).redexes {
            let cands = advance(&g, &r);
            let mut last = None;
            let mut found = None;
            for g2 in cands {
                let rep = check_running(&g2, &r.next, &w);
                if rep.is_ok() {
                    found = Some(g2);
                    break;
                }
                last = Some(rep);
            }
            let Some(g2) = found else {
                return Err(SubjectReductionFailure {
                    rule: r.rule,
                    label: r.label,
                    state: r.next.c.to_string(),
                    report: last,
                });
            };
            if seen.len() < bound && seen.insert(r.next.clone()) {
                todo.push_back((r.next, g2));
            }
        }
    }
    Ok(seen.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass {
        states: usize,
    },
    /// The first counterexample found, with the labels leading to it.
    Fail {
        reason: String,
        path: Vec<String>,
    },
    /// The bound was hit before a counterexample was found.
    Inconclusive {
        states: usize,
    },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass { states } => write!(f, "pass ({states} states)"),
            Verdict::Inconclusive { states } => write!(f, "inconclusive (bound reached at {states} states)"),
            Verdict::Fail { reason, path } => {
                write!(f, "fail: {reason}")?;
                for (i, l) in path.iter().enumerate() {
                    write!(f, "\n  {}. {l}", i + 1)?;
                }
                Ok(())
            }
        }
    }
}

/// BFS bookkeeping for counterexample paths.
struct Tracker {
    parent: Vec<Option<(usize, String)>>,
}

impl Tracker {
    fn path(&self, mut i: usize) -> Vec<String> {
        let mut out = Vec::new();
        while let Some((j, l)) = &self.parent[i] {
            out.push(l.clone());
            i = *j;
        }
        out.reverse();
        out
    }
}

/// A complete action of the source is performed by its sending half in the
/// projection; starts become requests met by accepts.
fn matches_step(source: Rule, projected: Rule) -> bool {
    source == projected || matches!((source, projected), (Rule::Start, Rule::PStart) | (Rule::Com, Rule::Send))
}

pub type Projector = fn(&Chor) -> Result<Chor, EppError>;

/// Walks the source and its projection in lockstep. Every step of either
/// side must be matched by a step of the other with the same effect and the
/// same resulting deployment, after which the projection of the new source
/// state must be pruned by the new projected state.
pub fn epp_correspondence(start: &RunningChor, keygen: &dyn KeyGen, bound: usize) -> Verdict {
    epp_correspondence_with(start, keygen, bound, epp)
}

pub fn epp_correspondence_with(start: &RunningChor, keygen: &dyn KeyGen, bound: usize, project: Projector) -> Verdict {
    let fail = |reason: String, path: Vec<String>| Verdict::Fail { reason, path };
    let projected = match project(&start.c) {
        Ok(c) => RunningChor { d: start.d.clone(), c },
        Err(e) => return fail(e.to_string(), Vec::new()),
    };
    let mut index: HashMap<(RunningChor, RunningChor), usize> = HashMap::new();
    let mut pairs = vec![(start.clone(), projected)];
    let mut tr = Tracker { parent: vec![None] };
    index.insert(pairs[0].clone(), 0);
    let mut truncated = false;
    let mut i = 0;
    while i < pairs.len() {
        let (s, p) = pairs[i].clone();
        let ss = enumerate(&s, keygen).redexes;
        let ps = enumerate(&p, keygen).redexes;
        let mut next = Vec::new();
        for r in &ss {
            let proj = match project(&r.next.c) {
                Ok(c) => c,
                Err(e) => return fail(format!("after {}: {e}", r.label), tr.path(i)),
            };
            let m = ps.iter().find(|q| {
                matches_step(r.rule, q.rule) && q.label == r.label && q.next.d == r.next.d && prunes(&proj, &q.next.c)
            });
            match m {
                Some(q) => next.push((r.label.clone(), (r.next.clone(), q.next.clone()))),
                None => {
                    let reason = format!("source step {} {} has no counterpart in the projection", r.rule, r.label);
                    return fail(reason, tr.path(i));
                }
            }
        }
        for q in &ps {
            let ok = ss.iter().any(|r| {
                matches_step(r.rule, q.rule)
                    && q.label == r.label
                    && q.next.d == r.next.d
                    && project(&r.next.c).is_ok_and(|proj| prunes(&proj, &q.next.c))
            });
            if !ok {
                let reason = format!("projected step {} {} has no counterpart in the source", q.rule, q.label);
                return fail(reason, tr.path(i));
            }
        }
        for (label, pair) in next {
            if index.contains_key(&pair) {
                continue;
            }
            if pairs.len() >= bound {
                truncated = true;
                continue;
            }
            index.insert(pair.clone(), pairs.len());
            pairs.push(pair);
            tr.parent.push(Some((i, label)));
        }
        i += 1;
    }
    if truncated {
        Verdict::Inconclusive { states: pairs.len() }
    } else {
        Verdict::Pass { states: pairs.len() }
    }
}

/// A deliberately wrong projection: the first reception offering several
/// operations loses its first branch.
pub fn epp_dropping_a_branch(c: &Chor) -> Result<Chor, EppError> {
    fn drop_first(c: &Chor, done: &mut bool) -> Chor {
        if *done {
            return c.clone();
        }
        match c {
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } if branches.len() > 1 => {
                *done = true;
                Chor::Recv {
                    k: k.clone(),
                    sender_role: sender_role.clone(),
                    receiver: receiver.clone(),
                    receiver_role: receiver_role.clone(),
                    branches: branches[1..].to_vec(),
                }
            }
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => Chor::Recv {
                k: k.clone(),
                sender_role: sender_role.clone(),
                receiver: receiver.clone(),
                receiver_role: receiver_role.clone(),
                branches: branches
                    .iter()
                    .map(|b| Branch { op: b.op.clone(), var: b.var.clone(), cont: drop_first(&b.cont, done) })
                    .collect(),
            },
            Chor::Par(a, b) => {
                let a = drop_first(a, done);
                Chor::par(a, drop_first(b, done))
            }
            Chor::Cond { proc, guard, then, els } => {
                let t = drop_first(then, done);
                Chor::Cond {
                    proc: proc.clone(),
                    guard: guard.clone(),
                    then: Box::new(t),
                    els: Box::new(drop_first(els, done)),
                }
            }
            Chor::Def { name, params, body, cont } => {
                let b = drop_first(body, done);
                Chor::Def {
                    name: name.clone(),
                    params: params.clone(),
                    body: Box::new(b),
                    cont: Box::new(drop_first(cont, done)),
                }
            }
            _ => match c.prefix_cont() {
                Some(k) => c.with_prefix_cont(drop_first(k, done)),
                None => c.clone(),
            },
        }
    }
    Ok(drop_first(&epp(c)?, &mut false))
}

/// The reachable networks of a DCC program, up to process order and key
/// renaming.
#[derive(Clone, Debug, Default)]
pub struct DccGraph {
    pub nodes: Vec<Network>,
    pub edges: Vec<(usize, usize, DccRule, String)>,
    pub diagnostics: Vec<(usize, DccDiagnostic)>,
    pub truncated: bool,
}

impl DccGraph {
    pub fn explore(start: &Network, keygen: &dyn KeyGen, bound: usize) -> DccGraph {
        let mut g = DccGraph::default();
        let root = canonical(start);
        let mut index: HashMap<Network, usize> = HashMap::from([(root.clone(), 0)]);
        g.nodes.push(root);
        let mut i = 0;
        while i < g.nodes.len() {
            let en = dcc_runtime::enumerate(&g.nodes[i], keygen);
            g.diagnostics.extend(en.diagnostics.into_iter().map(|d| (i, d)));
            for r in en.redexes {
                let n = canonical(&r.next);
                let to = match index.get(&n) {
                    Some(&j) => j,
                    None => {
                        if g.nodes.len() >= bound {
                            g.truncated = true;
                            continue;
                        }
                        index.insert(n.clone(), g.nodes.len());
                        g.nodes.push(n);
                        g.nodes.len() - 1
                    }
                };
                g.edges.push((i, to, r.rule, r.label));
            }
            i += 1;
        }
        g
    }

    fn successors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (e, (a, b, _, _)) in self.edges.iter().enumerate() {
            out[*a].push((*b, e));
        }
        out
    }
}

/// Checks a composition of endpoint choreographies against its compiled
/// network. Completeness: from every network observably equal to the image
/// of a choreography state, each choreography step is matched by one or
/// more network steps reaching the image of the successor without passing
/// through other images. Soundness: every reachable network can still reach
/// the image of some reachable choreography state.
pub fn compile_correspondence(
    program: &Program,
    start: &RunningChor,
    keygen: &dyn KeyGen,
    mutations: Mutations,
    bound: usize,
) -> Verdict {
    let fail = |reason: String, path: Vec<String>| Verdict::Fail { reason, path };
    let ac = Graph::explore(start, keygen, bound);
    let mut images: HashMap<Network, Vec<usize>> = HashMap::new();
    let mut image_of = Vec::with_capacity(ac.nodes.len());
    for (i, s) in ac.nodes.iter().enumerate() {
        match compile_network(program, s, mutations) {
            Ok(n) => {
                let o = observable(&n);
                images.entry(o.clone()).or_default().push(i);
                image_of.push(o);
            }
            Err(e) => return fail(format!("cannot compile a reachable state: {e}"), Vec::new()),
        }
    }
    let root = match compile_network(program, start, mutations) {
        Ok(n) => n,
        Err(e) => return fail(e.to_string(), Vec::new()),
    };
    let g = DccGraph::explore(&root, keygen, bound);
    let obs: Vec<Network> = g.nodes.iter().map(observable).collect();
    let is_image: Vec<bool> = obs.iter().map(|o| images.contains_key(o)).collect();
    let succ = g.successors();

    let mut parent: Vec<Option<(usize, String)>> = vec![None; g.nodes.len()];
    {
        let mut seen = vec![false; g.nodes.len()];
        seen[0] = true;
        let mut q = VecDeque::from([0]);
        while let Some(i) = q.pop_front() {
            for &(j, e) in &succ[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some((i, g.edges[e].3.clone()));
                    q.push_back(j);
                }
            }
        }
    }
    let tr = Tracker { parent };

    if let Some((i, d)) = g.diagnostics.iter().find(|(_, d)| matches!(d, DccDiagnostic::CorrelationRace { .. })) {
        return fail(d.to_string(), tr.path(*i));
    }

    // images reachable through non-image networks, per image network
    let mut by_obs: HashMap<&Network, Vec<usize>> = HashMap::new();
    for (i, o) in obs.iter().enumerate() {
        if is_image[i] {
            by_obs.entry(o).or_default().push(i);
        }
    }
    let next_images = |x: usize| -> HashSet<&Network> {
        let mut out = HashSet::new();
        let mut seen = HashSet::from([x]);
        let mut q = VecDeque::from([x]);
        while let Some(i) = q.pop_front() {
            for &(j, _) in &succ[i] {
                if is_image[j] {
                    out.insert(&obs[j]);
                } else if seen.insert(j) {
                    q.push_back(j);
                }
            }
        }
        out
    };
    for (i, img) in image_of.iter().enumerate() {
        let xs = by_obs.get(img).cloned().unwrap_or_default();
        if xs.is_empty() {
            if g.truncated {
                continue;
            }
            return fail(format!("the image of choreography state {i} is never reached"), Vec::new());
        }
        let outs: Vec<&Edge> = ac.edges.iter().filter(|e| e.from == i).collect();
        if outs.is_empty() {
            continue;
        }
        for x in xs {
            let reach = next_images(x);
            for e in &outs {
                if !reach.contains(&image_of[e.to]) {
                    let reason = format!("choreography step {} {} is not matched by the network", e.rule, e.label);
                    return fail(reason, tr.path(x));
                }
            }
        }
    }

    let mut pred = vec![Vec::new(); g.nodes.len()];
    for (a, b, _, _) in &g.edges {
        pred[*b].push(*a);
    }
    let mut good = is_image.clone();
    let mut q: VecDeque<usize> = (0..g.nodes.len()).filter(|&i| good[i]).collect();
    while let Some(i) = q.pop_front() {
        for &j in &pred[i] {
            if !good[j] {
                good[j] = true;
                q.push_back(j);
            }
        }
    }
    if let Some(bad) = (0..g.nodes.len()).find(|&i| !good[i]) {
        if !g.truncated {
            return fail(
                "a reachable network can no longer reach the image of a choreography state".into(),
                tr.path(bad),
            );
        }
    }
    if g.truncated || ac.truncated {
        Verdict::Inconclusive { states: g.nodes.len() }
    } else {
        Verdict::Pass { states: g.nodes.len() }
    }
}

/// Complete session descriptors held in a state: top-level subtrees whose
/// children are roles with a location, and with a key for every ordered
/// pair of roles.
pub fn complete_descriptors(state: &Tree) -> Vec<(String, Tree)> {
    let mut out = Vec::new();
    for (k, t) in state.children() {
        if k.starts_with('$') || t.children().len() < 2 {
            continue;
        }
        let roles: Vec<&String> = t.children().keys().collect();
        let located = t.children().values().all(|r| matches!(r.child("l").and_then(Tree::value), Some(Value::Loc(_))));
        let keyed = roles.iter().all(|x| {
            roles.iter().all(|y| {
                x == y || matches!(t.child(x).and_then(|r| r.child(y)).and_then(Tree::value), Some(Value::Key(..)))
            })
        });
        if located && keyed {
            out.push((k.clone(), t.clone()));
        }
    }
    out
}

/// The session-support conditions read on a network: every role's location
/// hosts a service, the keys of the queues of one role are pairwise
/// distinct, and each key correlates with exactly one process there.
pub fn supports(net: &Network, t: &Tree) -> Result<(), String> {
    let roles: Vec<&String> = t.children().keys().collect();
    for y in &roles {
        let Some(Value::Loc(ly)) = t.child(y).and_then(|r| r.child("l")).and_then(Tree::value) else {
            return Err(format!("{y} has no location"));
        };
        if !net.services.contains_key(ly) {
            return Err(format!("{y} is placed at {ly}, which hosts no service"));
        }
        let mut keys = HashSet::new();
        for x in &roles {
            if x == y {
                continue;
            }
            let key = t.child(x).and_then(|r| r.child(y)).cloned().unwrap_or_default();
            if !keys.insert(key.clone()) {
                return Err(format!("{y} receives from two roles on the same key {}", key.to_text()));
            }
            let n = dcc_runtime::route(net, ly, &key).len();
            if n != 1 {
                return Err(format!("key {x}.{y} = {} correlates with {n} processes at {ly}", key.to_text()));
            }
        }
    }
    Ok(())
}

/// Explores a compiled network and checks, in every reachable state, that
/// each complete session descriptor satisfies the session-support
/// conditions and that no two processes of a service share a key.
pub fn handshake_check(start: &Network, keygen: &dyn KeyGen, bound: usize) -> Verdict {
    let g = DccGraph::explore(start, keygen, bound);
    let succ = g.successors();
    let mut parent: Vec<Option<(usize, String)>> = vec![None; g.nodes.len()];
    let mut seen = vec![false; g.nodes.len()];
    seen[0] = true;
    let mut q = VecDeque::from([0]);
    while let Some(i) = q.pop_front() {
        for &(j, e) in &succ[i] {
            if !seen[j] {
                seen[j] = true;
                parent[j] = Some((i, g.edges[e].3.clone()));
                q.push_back(j);
            }
        }
    }
    let tr = Tracker { parent };
    for (i, n) in g.nodes.iter().enumerate() {
        if let Some((l, key)) = dcc_runtime::key_clashes(n).first() {
            return Verdict::Fail {
                reason: format!("two processes at {l} own key {}", key.to_text()),
                path: tr.path(i),
            };
        }
        for (l, s) in &n.services {
            for p in &s.processes {
                for (k, t) in complete_descriptors(&p.state) {
                    if let Err(e) = supports(n, &t) {
                        return Verdict::Fail {
                            reason: format!("descriptor {k} of a process at {l}: {e}"),
                            path: tr.path(i),
                        };
                    }
                }
            }
        }
    }
    if g.truncated {
        Verdict::Inconclusive { states: g.nodes.len() }
    } else {
        Verdict::Pass { states: g.nodes.len() }
    }
}
