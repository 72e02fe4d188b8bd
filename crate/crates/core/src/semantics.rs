//! Reduction semantics of running choreographies.
//!
//! Redexes are found by collecting the actions a term can perform and lifting
//! them out of the prefixes, conditionals and receptions that precede them,
//! which realises the swap relation without materialising it: an action can
//! overtake a prefix whenever the swap would be allowed. Recursive calls are
//! unfolded on demand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chor::{AnyName, Branch, Chor, LocProc, LocRole, Renaming};
use crate::deployment::{DeployError, Deployment, Effect, EffectError};
use crate::expr::Expr;
use crate::keygen::KeyGen;
use crate::names::{Op, Proc, ProcName, Role, Session};
use crate::program::Program;
use crate::tree::{Path, Value};

/// `D, C`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct RunningChor {
    pub d: Deployment,
    pub c: Chor,
}

impl RunningChor {
    /// The default deployment of a program paired with its term.
    pub fn initial(p: &Program) -> Result<RunningChor, DeployError> {
        let d = Deployment::default_for(&p.chor, &p.placement())?;
        Ok(RunningChor { d, c: p.chor.normal_form() })
    }

    pub fn is_terminated(&self) -> bool {
        self.c.is_terminated()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Rule {
    Start,
    PStart,
    Com,
    Send,
    Recv,
    Cond,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Start => "C-Start",
            Rule::PStart => "C-PStart",
            Rule::Com => "C-Com",
            Rule::Send => "C-Send",
            Rule::Recv => "C-Recv",
            Rule::Cond => "C-Cond",
        })
    }
}

/// One enabled reduction together with its outcome.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Redex {
    pub rule: Rule,
    /// The deployment effect; `None` for conditionals.
    pub effect: Option<Effect>,
    /// Rendered effect or branch choice.
    pub label: String,
    pub next: RunningChor,
}

#[derive(Clone, Debug, Default)]
pub struct Enumeration {
    pub redexes: Vec<Redex>,
    /// Sends whose target could not be decided: two co-located processes
    /// correlate with the same key.
    pub races: Vec<EffectError>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
enum Label {
    Send { k: Session, sender: Proc, sender_role: Role, expr: Expr, receiver_role: Role, op: Op, com: bool },
    Recv { k: Session, sender_role: Role, receiver: Proc, receiver_role: Role, op: Op, var: Option<Path> },
    Cond { proc: Proc, guard: Expr, then: bool },
    Start { k: Session, parts: Vec<LocProc> },
    Req { k: Session, starter: Proc, role: Role, services: Vec<LocRole> },
}

fn expr_heads(e: &Expr) -> impl Iterator<Item = AnyName> + '_ {
    e.reads().into_iter().filter_map(|p| p.first().map(|h| AnyName::S(Session::new(h))))
}

impl Label {
    fn active(&self) -> &Proc {
        match self {
            Label::Send { sender, .. } => sender,
            Label::Recv { receiver, .. } => receiver,
            Label::Cond { proc, .. } => proc,
            Label::Start { parts, .. } => &parts[0].proc,
            Label::Req { starter, .. } => starter,
        }
    }

    fn free_names(&self) -> BTreeSet<AnyName> {
        let mut s = BTreeSet::new();
        s.insert(AnyName::P(self.active().clone()));
        match self {
            Label::Send { k, expr, .. } => {
                s.insert(AnyName::S(k.clone()));
                s.extend(expr_heads(expr));
            }
            Label::Recv { k, .. } => {
                s.insert(AnyName::S(k.clone()));
            }
            Label::Cond { guard, .. } => s.extend(expr_heads(guard)),
            Label::Start { .. } | Label::Req { .. } => {}
        }
        s
    }

    /// Can this action overtake the prefix `eta`?
    fn lifts_past(&self, eta: &Chor) -> bool {
        !eta.prefix_processes().contains(self.active()) && self.free_names().is_disjoint(&eta.prefix_binders())
    }
}

type Env<'a> = BTreeMap<ProcName, &'a Chor>;

struct Ctx<'a> {
    d: &'a Deployment,
    taken_p: BTreeSet<String>,
    taken_s: BTreeSet<String>,
}

fn all_sessions(c: &Chor) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    c.visit(&mut |c| match c {
        Chor::Start { k, .. }
        | Chor::Com { k, .. }
        | Chor::Req { k, .. }
        | Chor::Acc { k, .. }
        | Chor::Send { k, .. }
        | Chor::Recv { k, .. } => {
            out.insert(k.to_string());
        }
        _ => {}
    });
    out
}

impl<'a> Ctx<'a> {
    fn new(d: &'a Deployment, c: &Chor) -> Self {
        Ctx { d, taken_p: c.all_processes().into_iter().map(|p| p.to_string()).collect(), taken_s: all_sessions(c) }
    }

    /// Fresh names for a session start: the new session and one process per
    /// service.
    fn fresh(&self, k: &Session, services: &[Proc]) -> (Session, Vec<Proc>) {
        let k2 = self.d.fresh_session(k.base(), &self.taken_s);
        let mut taken = self.taken_p.clone();
        let qs = services
            .iter()
            .map(|q| {
                let q2 = self.d.fresh_proc(q.base(), &taken);
                taken.insert(q2.to_string());
                q2
            })
            .collect();
        (k2, qs)
    }

    fn actions(&self, c: &Chor, env: &Env<'_>, visiting: &mut Vec<ProcName>) -> Vec<(Label, Chor)> {
        match c {
            Chor::Inact | Chor::Acc { .. } => Vec::new(),
            Chor::Par(a, b) => {
                let mut out: Vec<(Label, Chor)> = self
                    .actions(a, env, visiting)
                    .into_iter()
                    .map(|(l, a2)| (l, Chor::par(a2, (**b).clone())))
                    .collect();
                out.extend(self.actions(b, env, visiting).into_iter().map(|(l, b2)| (l, Chor::par((**a).clone(), b2))));
                out
            }
            Chor::Def { name, params, body, cont } => {
                let mut env2 = env.clone();
                env2.insert(name.clone(), body);
                self.actions(cont, &env2, visiting)
                    .into_iter()
                    .map(|(l, c2)| {
                        (
                            l,
                            Chor::Def {
                                name: name.clone(),
                                params: params.clone(),
                                body: body.clone(),
                                cont: Box::new(c2),
                            },
                        )
                    })
                    .collect()
            }
            Chor::Call { name, .. } => {
                if visiting.contains(name) {
                    return Vec::new();
                }
                let Some(body) = env.get(name) else { return Vec::new() };
                visiting.push(name.clone());
                let out = self.actions(body, env, visiting);
                visiting.pop();
                out
            }
            Chor::Cond { proc, guard, then, els } => {
                let mut out = vec![
                    (Label::Cond { proc: proc.clone(), guard: guard.clone(), then: true }, (**then).clone()),
                    (Label::Cond { proc: proc.clone(), guard: guard.clone(), then: false }, (**els).clone()),
                ];
                let t = self.actions(then, env, visiting);
                let e = self.actions(els, env, visiting);
                for (l1, c1) in &t {
                    if l1.active() == proc {
                        continue;
                    }
                    for (l2, c2) in &e {
                        if l1 == l2 {
                            out.push((
                                l1.clone(),
                                Chor::Cond {
                                    proc: proc.clone(),
                                    guard: guard.clone(),
                                    then: Box::new(c1.clone()),
                                    els: Box::new(c2.clone()),
                                },
                            ));
                        }
                    }
                }
                out
            }
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
                let mut out = Vec::new();
                for b in branches {
                    out.push((
                        Label::Recv {
                            k: k.clone(),
                            sender_role: sender_role.clone(),
                            receiver: receiver.clone(),
                            receiver_role: receiver_role.clone(),
                            op: b.op.clone(),
                            var: b.var.clone(),
                        },
                        b.cont.clone(),
                    ));
                }
                // actions common to every branch overtake the reception
                let per: Vec<Vec<(Label, Chor)>> = branches
                    .iter()
                    .map(|b| {
                        self.actions(&b.cont, env, visiting).into_iter().filter(|(l, _)| l.lifts_past(c)).collect()
                    })
                    .collect();
                let mut combos: Vec<(Label, Vec<Chor>)> =
                    per[0].iter().map(|(l, c)| (l.clone(), vec![c.clone()])).collect();
                for bs in &per[1..] {
                    let mut next = Vec::new();
                    for (l, cs) in &combos {
                        for (l2, c2) in bs {
                            if l == l2 {
                                let mut cs2 = cs.clone();
                                cs2.push(c2.clone());
                                next.push((l.clone(), cs2));
                            }
                        }
                    }
                    combos = next;
                }
                for (l, conts) in combos {
                    let branches2 = branches
                        .iter()
                        .zip(conts)
                        .map(|(b, cont)| Branch { op: b.op.clone(), var: b.var.clone(), cont })
                        .collect();
                    out.push((
                        l,
                        Chor::Recv {
                            k: k.clone(),
                            sender_role: sender_role.clone(),
                            receiver: receiver.clone(),
                            receiver_role: receiver_role.clone(),
                            branches: branches2,
                        },
                    ));
                }
                out
            }
            _ => {
                let cont = c.prefix_cont().expect("prefix");
                let mut out = Vec::new();
                if let Some(own) = self.own_action(c) {
                    out.push(own);
                }
                for (l, c2) in self.actions(cont, env, visiting) {
                    if l.lifts_past(c) {
                        out.push((l, c.with_prefix_cont(c2)));
                    }
                }
                out
            }
        }
    }

    fn own_action(&self, c: &Chor) -> Option<(Label, Chor)> {
        match c {
            Chor::Start { k, starter, role, services, cont } => {
                let loc = self.d.location_of(starter)?.clone();
                let procs: Vec<Proc> = services.iter().map(|s| s.proc.clone()).collect();
                let (k2, qs) = self.fresh(k, &procs);
                let mut r = Renaming::default();
                r.sessions.insert(k.clone(), k2.clone());
                let mut parts = vec![LocProc { loc, proc: starter.clone(), role: role.clone() }];
                for (s, q2) in services.iter().zip(qs) {
                    r.procs.insert(s.proc.clone(), q2.clone());
                    parts.push(LocProc { loc: s.loc.clone(), proc: q2, role: s.role.clone() });
                }
                Some((Label::Start { k: k2, parts }, cont.rename(&r)))
            }
            Chor::Req { k, starter, role, services, cont } => {
                let (k2, _) = self.fresh(k, &[]);
                let mut r = Renaming::default();
                r.sessions.insert(k.clone(), k2.clone());
                Some((
                    Label::Req { k: k2, starter: starter.clone(), role: role.clone(), services: services.clone() },
                    cont.rename(&r),
                ))
            }
            Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont } => Some((
                Label::Send {
                    k: k.clone(),
                    sender: sender.clone(),
                    sender_role: sender_role.clone(),
                    expr: expr.clone(),
                    receiver_role: receiver_role.clone(),
                    op: op.clone(),
                    com: true,
                },
                Chor::Recv {
                    k: k.clone(),
                    sender_role: sender_role.clone(),
                    receiver: receiver.clone(),
                    receiver_role: receiver_role.clone(),
                    branches: vec![Branch { op: op.clone(), var: var.clone(), cont: (**cont).clone() }],
                },
            )),
            Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont } => Some((
                Label::Send {
                    k: k.clone(),
                    sender: sender.clone(),
                    sender_role: sender_role.clone(),
                    expr: expr.clone(),
                    receiver_role: receiver_role.clone(),
                    op: op.clone(),
                    com: false,
                },
                (**cont).clone(),
            )),
            _ => None,
        }
    }

    /// Spawns for a request: every way of covering the requested services
    /// exactly by top-level accepts.
    fn accept_covers<'c>(&self, accs: &[&'c Chor], wanted: &BTreeSet<LocRole>) -> Vec<Vec<&'c Chor>> {
        fn go<'c>(
            accs: &[&'c Chor],
            i: usize,
            left: &BTreeSet<LocRole>,
            chosen: &mut Vec<&'c Chor>,
            out: &mut Vec<Vec<&'c Chor>>,
        ) {
            if left.is_empty() {
                out.push(chosen.clone());
                return;
            }
            if i == accs.len() {
                return;
            }
            if let Chor::Acc { services, .. } = accs[i] {
                let offered: BTreeSet<LocRole> = services.iter().map(LocProc::loc_role).collect();
                if offered.is_subset(left) {
                    let rest: BTreeSet<LocRole> = left.difference(&offered).cloned().collect();
                    chosen.push(accs[i]);
                    go(accs, i + 1, &rest, chosen, out);
                    chosen.pop();
                }
            }
            go(accs, i + 1, left, chosen, out);
        }
        let mut out = Vec::new();
        go(accs, 0, wanted, &mut Vec::new(), &mut out);
        out
    }
}

fn effect_of(l: &Label) -> Option<Effect> {
    match l {
        Label::Send { k, sender, sender_role, expr, receiver_role, op, .. } => Some(Effect::Send {
            k: k.clone(),
            sender: sender.clone(),
            sender_role: sender_role.clone(),
            expr: expr.clone(),
            receiver_role: receiver_role.clone(),
            op: op.clone(),
        }),
        Label::Recv { k, sender_role, receiver, receiver_role, op, var } => Some(Effect::Recv {
            k: k.clone(),
            sender_role: sender_role.clone(),
            receiver: receiver.clone(),
            receiver_role: receiver_role.clone(),
            op: op.clone(),
            var: var.clone(),
        }),
        Label::Start { k, parts } => Some(Effect::Start { k: k.clone(), parts: parts.clone() }),
        Label::Cond { .. } | Label::Req { .. } => None,
    }
}

/// All successors of a running choreography by one reduction.
pub fn enumerate(s: &RunningChor, keygen: &dyn KeyGen) -> Enumeration {
    let ctx = Ctx::new(&s.d, &s.c);
    let mut en = Enumeration::default();
    let mut seen = BTreeSet::new();
    let mut push = |en: &mut Enumeration, rule: Rule, effect: Option<Effect>, label: String, d: Deployment, c: Chor| {
        let next = RunningChor { d, c: c.normal_form() };
        if seen.insert((rule, label.clone(), next.clone())) {
            en.redexes.push(Redex { rule, effect, label, next });
        }
    };
    let accs: Vec<&Chor> = s.c.components().into_iter().filter(|c| matches!(c, Chor::Acc { .. })).collect();
    for (l, residual) in ctx.actions(&s.c, &Env::new(), &mut Vec::new()) {
        match &l {
            Label::Send { k, sender, sender_role, expr, receiver_role, op, com } => {
                match s.d.apply_send(k, sender, sender_role, expr, receiver_role, op) {
                    Ok(d) => {
                        let eff = effect_of(&l).unwrap();
                        let rule = if *com { Rule::Com } else { Rule::Send };
                        push(&mut en, rule, Some(eff.clone()), eff.to_string(), d, residual);
                    }
                    Err(e @ EffectError::CorrelationRace { .. }) => {
                        if !en.races.contains(&e) {
                            en.races.push(e);
                        }
                    }
                    Err(EffectError::Stuck(_)) => {}
                }
            }
            Label::Recv { k, sender_role, receiver, receiver_role, op, var } => {
                if let Ok(d) = s.d.apply_recv(k, sender_role, receiver, receiver_role, op, var.as_ref()) {
                    let eff = effect_of(&l).unwrap();
                    push(&mut en, Rule::Recv, Some(eff.clone()), eff.to_string(), d, residual);
                }
            }
            Label::Cond { proc, guard, then } => {
                let Some(st) = s.d.state(proc) else { continue };
                if let Ok(t) = guard.eval(st) {
                    if t.is_leaf() && t.value() == Some(&Value::Bool(*then)) {
                        let label =
                            format!("if {proc}.{} -> {}", guard.atom_string(), if *then { "then" } else { "else" });
                        push(&mut en, Rule::Cond, None, label, s.d.clone(), residual);
                    }
                }
            }
            Label::Start { k, parts } => {
                if let Ok(d) = s.d.apply_start(k, parts, keygen) {
                    let eff = effect_of(&l).unwrap();
                    push(&mut en, Rule::Start, Some(eff.clone()), eff.to_string(), d, residual);
                }
            }
            Label::Req { k, starter, role, services } => {
                let Some(loc) = s.d.location_of(starter).cloned() else { continue };
                let wanted: BTreeSet<LocRole> = services.iter().cloned().collect();
                for cover in ctx.accept_covers(&accs, &wanted) {
                    let procs: Vec<Proc> = cover
                        .iter()
                        .flat_map(|a| match a {
                            Chor::Acc { services, .. } => services.iter().map(|s| s.proc.clone()).collect::<Vec<_>>(),
                            _ => Vec::new(),
                        })
                        .collect();
                    let (_, fresh) = ctx.fresh(k, &procs);
                    let mut fresh = fresh.into_iter();
                    let mut by_role: BTreeMap<LocRole, Proc> = BTreeMap::new();
                    let mut spawned = Vec::new();
                    for a in &cover {
                        let Chor::Acc { k: ka, services: ss, cont } = a else { unreachable!() };
                        let mut r = Renaming::default();
                        r.sessions.insert(ka.clone(), k.clone());
                        for s in ss {
                            let q2 = fresh.next().unwrap();
                            r.procs.insert(s.proc.clone(), q2.clone());
                            by_role.insert(s.loc_role(), q2);
                        }
                        spawned.push(cont.rename(&r));
                    }
                    let mut parts = vec![LocProc { loc: loc.clone(), proc: starter.clone(), role: role.clone() }];
                    for lr in services {
                        parts.push(LocProc { loc: lr.loc.clone(), proc: by_role[lr].clone(), role: lr.role.clone() });
                    }
                    if let Ok(d) = s.d.apply_start(k, &parts, keygen) {
                        let eff = Effect::Start { k: k.clone(), parts };
                        spawned.insert(0, residual.clone());
                        push(&mut en, Rule::PStart, Some(eff.clone()), eff.to_string(), d, Chor::par_all(spawned));
                    }
                }
            }
        }
    }
    en
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("the redex is not enabled in this state")]
pub struct StaleRedex;

/// Fires a redex previously enumerated for `s`.
pub fn step(s: &RunningChor, r: &Redex, keygen: &dyn KeyGen) -> Result<RunningChor, StaleRedex> {
    if enumerate(s, keygen).redexes.iter().any(|x| x == r) {
        Ok(r.next.clone())
    } else {
        Err(StaleRedex)
    }
}

#[derive(Clone, Debug)]
pub enum Scheduler {
    /// Uniform choice with a seeded generator.
    Seeded(u64),
    /// The `n`-th entry picks the redex index at step `n`; past the end of
    /// the script the first redex is taken.
    Script(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// No redex and the term is `0`.
    Terminated,
    /// No redex but work is left.
    Stuck,
    BudgetExhausted,
    CorrelationRace(EffectError),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Terminated => f.write_str("terminated"),
            Outcome::Stuck => f.write_str("stuck"),
            Outcome::BudgetExhausted => f.write_str("step budget exhausted"),
            Outcome::CorrelationRace(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceStep {
    pub rule: Rule,
    pub label: String,
    /// Processes whose state or queues changed, or which were created.
    pub changed: Vec<Proc>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    pub last: RunningChor,
}

impl Trace {
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ch: Vec<&str> = s.changed.iter().map(|p| p.as_str()).collect();
                format!("step {} rule={} effect={} changed={}", i + 1, s.rule, s.label, ch.join(","))
            })
            .collect();
        out.push(format!("outcome {}", self.outcome));
        out
    }
}

fn changed(a: &Deployment, b: &Deployment) -> Vec<Proc> {
    b.procs.iter().filter(|(p, e)| a.procs.get(*p) != Some(e)).map(|(p, _)| p.clone()).collect()
}

pub fn run(start: &RunningChor, sched: &Scheduler, max_steps: usize, keygen: &dyn KeyGen) -> Trace {
    let mut rng = match sched {
        Scheduler::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Scheduler::Script(_) => None,
    };
    let mut cur = start.clone();
    let mut steps = Vec::new();
    loop {
        let en = enumerate(&cur, keygen);
        if let Some(e) = en.races.first() {
            return Trace { steps, outcome: Outcome::CorrelationRace(e.clone()), last: cur };
        }
        if en.redexes.is_empty() {
            let outcome = if cur.is_terminated() { Outcome::Terminated } else { Outcome::Stuck };
            return Trace { steps, outcome, last: cur };
        }
        if steps.len() >= max_steps {
            return Trace { steps, outcome: Outcome::BudgetExhausted, last: cur };
        }
        let i = match (sched, rng.as_mut()) {
            (_, Some(r)) => r.gen_range(0..en.redexes.len()),
            (Scheduler::Script(s), None) => s.get(steps.len()).copied().filter(|i| *i < en.redexes.len()).unwrap_or(0),
            _ => 0,
        };
        let r = &en.redexes[i];
        steps.push(TraceStep { rule: r.rule, label: r.label.clone(), changed: changed(&cur.d, &r.next.d) });
        cur = r.next.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::CounterKeys;
    use crate::parser::parse_program;

    fn init(src: &str) -> RunningChor {
        RunningChor::initial(&parse_program(src).unwrap()).unwrap()
    }

    const TWO: &str = "protocol P at lB, lC, lD roles A starter, B@lB, C@lC, D@lD {
        A -> B { o(int); C -> D { o(int) } } }
        deployment { p @ lA; }
        start k: p[A] <-> lB.q[B], lC.r[C], lD.s[D];
        k: p[A].1 -> q[B].o(x);
        k: r[C].2 -> s[D].o(y)";

    #[test]
    fn inact_has_no_redex() {
        let s = RunningChor { d: Deployment::new(), c: Chor::Inact };
        assert!(enumerate(&s, &CounterKeys).redexes.is_empty());
        let t = run(&s, &Scheduler::Seeded(1), 10, &CounterKeys);
        assert!(t.steps.is_empty());
        assert_eq!(t.outcome, Outcome::Terminated);
    }

    #[test]
    fn disjoint_prefixes_both_enabled() {
        let s = init(TWO);
        let en = enumerate(&s, &CounterKeys);
        assert_eq!(en.redexes.len(), 1);
        assert_eq!(en.redexes[0].rule, Rule::Start);
        let s1 = en.redexes[0].next.clone();
        let en = enumerate(&s1, &CounterKeys);
        let mut labels: Vec<String> = en.redexes.iter().map(|r| format!("{} {}", r.rule, r.label)).collect();
        labels.sort();
        assert_eq!(labels, vec!["C-Com k#1: p[A].1 -> B.o", "C-Com k#1: r#1[C].2 -> D.o"]);
    }

    #[test]
    fn com_leaves_partial_reception() {
        let s = init(
            "protocol P at lB roles A starter, B@lB { A -> B { o(int) } }
             deployment { p @ lA; }
             start k: p[A] <-> lB.q[B]; k: p[A].7 -> q[B].o(x)",
        );
        let s1 = enumerate(&s, &CounterKeys).redexes.remove(0).next;
        let r = enumerate(&s1, &CounterKeys).redexes.remove(0);
        assert_eq!(r.rule, Rule::Com);
        assert_eq!(r.next.c.to_string(), "k#1: A -> q#1[B] {\n  o(x)\n}");
        let r2 = enumerate(&r.next, &CounterKeys).redexes.remove(0);
        assert_eq!(r2.rule, Rule::Recv);
        assert!(r2.next.is_terminated());
        assert_eq!(r2.next.d.state(&Proc::new("q#1")).unwrap().value_at(&Path::parse("x")), Some(&Value::Int(7)));
    }

    #[test]
    fn accepts_persist_after_pstart() {
        let s = init(
            "protocol P at lB roles A starter, B@lB { A -> B { o(int) } }
             deployment { p @ lA; }
             req k: p[A] <-> lB.B; k: p[A].1 -> B.o
             | acc j: lB.q[B]; j: A -> q[B] { o(x) }",
        );
        let en = enumerate(&s, &CounterKeys);
        assert_eq!(en.redexes.len(), 1);
        let r = &en.redexes[0];
        assert_eq!(r.rule, Rule::PStart);
        let comps: Vec<String> = r.next.c.components().iter().map(|c| c.to_string()).collect();
        assert!(comps.iter().any(|c| c.starts_with("acc j: lB.q[B]")));
        assert!(comps.iter().any(|c| c.starts_with("k#1: A -> q#1[B]")));
        assert!(comps.iter().any(|c| c.starts_with("k#1: p[A].1 -> B.o")));
    }

    #[test]
    fn undefined_guard_blocks() {
        let s = init("deployment { p @ lA; } if p.x = 1 { 0 } else { 0 }");
        assert!(enumerate(&s, &CounterKeys).redexes.is_empty());
        let t = run(&s, &Scheduler::Seeded(3), 10, &CounterKeys);
        assert_eq!(t.outcome, Outcome::Stuck);
    }
}
