//! Terms of the dynamic correlation calculus: behaviours, services and
//! networks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use crate::deployment::QueueMap;
use crate::expr::Expr;
use crate::names::{Loc, Op, ProcName};
use crate::tree::{Path, Tree};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DBranch {
    pub op: Op,
    pub var: Option<Path>,
    pub cont: Behaviour,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Behaviour {
    /// `recv o(x) from e`: consume `o` from the queue correlating with `e`.
    Input {
        op: Op,
        var: Path,
        from: Expr,
    },
    /// `send o(payload) to to key key`.
    Output {
        to: Expr,
        op: Op,
        payload: Expr,
        key: Expr,
    },
    Choice {
        from: Expr,
        branches: Vec<DBranch>,
    },
    /// Asks the service at `to` to spawn a process.
    Request {
        to: Expr,
        payload: Expr,
    },
    /// Creates an empty queue and stores its fresh key at the path.
    CQueue(Path),
    Assign(Path, Expr),
    Cond {
        guard: Expr,
        then: Box<Behaviour>,
        els: Box<Behaviour>,
    },
    Def {
        name: ProcName,
        body: Box<Behaviour>,
        cont: Box<Behaviour>,
    },
    Call(ProcName),
    Seq(Box<Behaviour>, Box<Behaviour>),
    Inact,
}

/// `start(x) { B }`: the behaviour run by every spawned process.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct StartBehaviour {
    pub var: Path,
    pub body: Behaviour,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DccProcess {
    pub behaviour: Behaviour,
    pub state: Tree,
    pub queues: QueueMap,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Service {
    pub start: Option<StartBehaviour>,
    pub processes: Vec<DccProcess>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Network {
    pub services: BTreeMap<Loc, Service>,
}

impl Behaviour {
    pub fn seq(a: Behaviour, b: Behaviour) -> Behaviour {
        match (a, b) {
            (Behaviour::Inact, b) => b,
            (a, Behaviour::Inact) => a,
            (a, b) => Behaviour::Seq(Box::new(a), Box::new(b)),
        }
    }

    /// Right-nested sequence of the given behaviours.
    pub fn seq_all(items: Vec<Behaviour>) -> Behaviour {
        items.into_iter().rev().fold(Behaviour::Inact, |acc, b| Behaviour::seq(b, acc))
    }

    /// Canonical form: sequences re-associated to the right, `0` units
    /// dropped, unused definitions erased.
    pub fn normalize(&self) -> Behaviour {
        match self {
            Behaviour::Seq(a, b) => {
                let b = b.normalize();
                match a.normalize() {
                    Behaviour::Seq(x, y) => Behaviour::seq(*x, Behaviour::seq(*y, b).normalize()),
                    a => Behaviour::seq(a, b),
                }
            }
            Behaviour::Choice { from, branches } => Behaviour::Choice {
                from: from.clone(),
                branches: branches
                    .iter()
                    .map(|br| DBranch { op: br.op.clone(), var: br.var.clone(), cont: br.cont.normalize() })
                    .collect(),
            },
            Behaviour::Cond { guard, then, els } => Behaviour::Cond {
                guard: guard.clone(),
                then: Box::new(then.normalize()),
                els: Box::new(els.normalize()),
            },
            Behaviour::Def { name, body, cont } => {
                let cont = cont.normalize();
                if !cont.calls().contains(name) {
                    return cont;
                }
                Behaviour::Def { name: name.clone(), body: Box::new(body.normalize()), cont: Box::new(cont) }
            }
            _ => self.clone(),
        }
    }

    pub fn calls(&self) -> BTreeSet<ProcName> {
        let mut out = BTreeSet::new();
        self.visit(&mut |b| {
            if let Behaviour::Call(x) = b {
                out.insert(x.clone());
            }
        });
        out
    }

    pub fn visit(&self, f: &mut impl FnMut(&Behaviour)) {
        f(self);
        match self {
            Behaviour::Choice { branches, .. } => branches.iter().for_each(|b| b.cont.visit(f)),
            Behaviour::Cond { then, els, .. } => {
                then.visit(f);
                els.visit(f);
            }
            Behaviour::Def { body, cont, .. } => {
                body.visit(f);
                cont.visit(f);
            }
            Behaviour::Seq(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    /// Rewrites every path and expression with the given functions.
    pub fn map_paths(&self, f: &impl Fn(&Path) -> Path) -> Behaviour {
        let e = |x: &Expr| x.map_paths(f);
        match self {
            Behaviour::Input { op, var, from } => Behaviour::Input { op: op.clone(), var: f(var), from: e(from) },
            Behaviour::Output { to, op, payload, key } => {
                Behaviour::Output { to: e(to), op: op.clone(), payload: e(payload), key: e(key) }
            }
            Behaviour::Choice { from, branches } => Behaviour::Choice {
                from: e(from),
                branches: branches
                    .iter()
                    .map(|b| DBranch { op: b.op.clone(), var: b.var.as_ref().map(f), cont: b.cont.map_paths(f) })
                    .collect(),
            },
            Behaviour::Request { to, payload } => Behaviour::Request { to: e(to), payload: e(payload) },
            Behaviour::CQueue(x) => Behaviour::CQueue(f(x)),
            Behaviour::Assign(x, v) => Behaviour::Assign(f(x), e(v)),
            Behaviour::Cond { guard, then, els } => {
                Behaviour::Cond { guard: e(guard), then: Box::new(then.map_paths(f)), els: Box::new(els.map_paths(f)) }
            }
            Behaviour::Def { name, body, cont } => Behaviour::Def {
                name: name.clone(),
                body: Box::new(body.map_paths(f)),
                cont: Box::new(cont.map_paths(f)),
            },
            Behaviour::Seq(a, b) => Behaviour::Seq(Box::new(a.map_paths(f)), Box::new(b.map_paths(f))),
            Behaviour::Call(_) | Behaviour::Inact => self.clone(),
        }
    }

    /// Rewrites procedure names.
    pub fn map_procs(&self, f: &impl Fn(&ProcName) -> ProcName) -> Behaviour {
        match self {
            Behaviour::Call(x) => Behaviour::Call(f(x)),
            Behaviour::Def { name, body, cont } => {
                Behaviour::Def { name: f(name), body: Box::new(body.map_procs(f)), cont: Box::new(cont.map_procs(f)) }
            }
            Behaviour::Choice { from, branches } => Behaviour::Choice {
                from: from.clone(),
                branches: branches
                    .iter()
                    .map(|b| DBranch { op: b.op.clone(), var: b.var.clone(), cont: b.cont.map_procs(f) })
                    .collect(),
            },
            Behaviour::Cond { guard, then, els } => Behaviour::Cond {
                guard: guard.clone(),
                then: Box::new(then.map_procs(f)),
                els: Box::new(els.map_procs(f)),
            },
            Behaviour::Seq(a, b) => Behaviour::Seq(Box::new(a.map_procs(f)), Box::new(b.map_procs(f))),
            _ => self.clone(),
        }
    }

    fn write(&self, out: &mut String, ind: usize) {
        let pad = "  ".repeat(ind);
        match self {
            Behaviour::Seq(a, b) => {
                a.write(out, ind);
                out.push_str(";\n");
                b.write(out, ind);
            }
            Behaviour::Inact => {
                let _ = write!(out, "{pad}0");
            }
            Behaviour::Input { op, var, from } => {
                let _ = write!(out, "{pad}recv {op}({var}) from {}", from.atom_string());
            }
            Behaviour::Output { to, op, payload, key } => {
                let _ = write!(out, "{pad}send {op}({payload}) to {} key {}", to.atom_string(), key.atom_string());
            }
            Behaviour::Request { to, payload } => {
                let _ = write!(out, "{pad}request {} ({payload})", to.atom_string());
            }
            Behaviour::CQueue(x) => {
                let _ = write!(out, "{pad}cqueue({x})");
            }
            Behaviour::Assign(x, e) => {
                let _ = write!(out, "{pad}{x} := {e}");
            }
            Behaviour::Call(x) => {
                let _ = write!(out, "{pad}call {x}");
            }
            Behaviour::Choice { from, branches } => {
                let _ = writeln!(out, "{pad}choice from {} {{", from.atom_string());
                for b in branches {
                    let _ = write!(out, "{pad}  {}", b.op);
                    if let Some(x) = &b.var {
                        let _ = write!(out, "({x})");
                    }
                    out.push_str(" {\n");
                    b.cont.write(out, ind + 2);
                    let _ = writeln!(out, "\n{pad}  }}");
                }
                let _ = write!(out, "{pad}}}");
            }
            Behaviour::Cond { guard, then, els } => {
                let _ = writeln!(out, "{pad}if ({guard}) {{");
                then.write(out, ind + 1);
                let _ = writeln!(out, "\n{pad}}} else {{");
                els.write(out, ind + 1);
                let _ = write!(out, "\n{pad}}}");
            }
            Behaviour::Def { name, body, cont } => {
                let _ = writeln!(out, "{pad}def {name} {{");
                body.write(out, ind + 1);
                let _ = writeln!(out, "\n{pad}}} in {{");
                cont.write(out, ind + 1);
                let _ = write!(out, "\n{pad}}}");
            }
        }
    }

    pub fn to_text(&self, ind: usize) -> String {
        let mut s = String::new();
        self.write(&mut s, ind);
        s
    }
}

impl fmt::Display for Behaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text(0))
    }
}

impl Network {
    /// Total number of processes.
    pub fn process_count(&self) -> usize {
        self.services.values().map(|s| s.processes.len()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (l, s) in &self.services {
            let procs: Vec<serde_json::Value> = s
                .processes
                .iter()
                .map(|p| {
                    serde_json::json!({
                        "behaviour": p.behaviour.to_string(),
                        "state": p.state.to_json(),
                        "queues": p.queues.to_json(),
                    })
                })
                .collect();
            m.insert(l.to_string(), serde_json::json!({"processes": procs}));
        }
        serde_json::Value::Object(m)
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (l, s)) in self.services.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "service {l} {{")?;
            match &s.start {
                Some(sb) => {
                    writeln!(f, "  start({}) {{", sb.var)?;
                    writeln!(f, "{}", sb.body.to_text(2))?;
                    writeln!(f, "  }}")?;
                }
                None => writeln!(f, "  start none")?,
            }
            writeln!(f, "  processes [")?;
            for p in &s.processes {
                writeln!(f, "    process {{")?;
                writeln!(f, "{}", p.behaviour.to_text(3))?;
                writeln!(f, "    }} state {} queues {}", p.state.to_text(), p.queues.to_json())?;
            }
            writeln!(f, "  ]")?;
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}
