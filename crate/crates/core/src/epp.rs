//! EndPoint Projection: process projection, merging of endpoint
//! choreographies, grouping of service processes and the pruning preorder.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::chor::{Branch, Chor, LocProc, Renaming};
use crate::names::{Loc, Proc, ProcName};
use crate::program::Program;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EppError {
    #[error("cannot merge the behaviours of {proc}:\n  {left}\nand\n  {right}")]
    Unmergeable { proc: Proc, left: String, right: String },
}

fn first_line(c: &Chor) -> String {
    c.to_string().lines().next().unwrap_or("").to_string()
}

/// `C ⊔ C'`. On failure returns the smallest pair of subterms that differ.
pub fn merge(a: &Chor, b: &Chor) -> Result<Chor, (Chor, Chor)> {
    if a == b {
        return Ok(a.clone());
    }
    let fail = || Err((a.clone(), b.clone()));
    let bx = Box::new;
    match (a, b) {
        // an accept nobody contacts is harmless
        (Chor::Acc { .. }, Chor::Inact) => Ok(a.clone()),
        (Chor::Inact, Chor::Acc { .. }) => Ok(b.clone()),
        (Chor::Acc { k, services, cont }, Chor::Acc { k: k2, services: s2, cont: c2 }) => {
            let same_shape =
                services.len() == s2.len() && services.iter().zip(s2).all(|(x, y)| x.loc == y.loc && x.role == y.role);
            if !same_shape {
                return fail();
            }
            let mut r = Renaming::default();
            if k != k2 {
                r.sessions.insert(k2.clone(), k.clone());
            }
            for (x, y) in services.iter().zip(s2) {
                if x.proc != y.proc {
                    r.procs.insert(y.proc.clone(), x.proc.clone());
                }
            }
            let c2 = c2.rename(&r);
            Ok(Chor::Acc { k: k.clone(), services: services.clone(), cont: bx(merge(cont, &c2)?) })
        }
        (
            Chor::Recv { k, sender_role, receiver, receiver_role, branches },
            Chor::Recv { k: k2, sender_role: a2, receiver: q2, receiver_role: b2, branches: bs2 },
        ) if k == k2 && sender_role == a2 && receiver == q2 && receiver_role == b2 => {
            let mut out: Vec<Branch> = Vec::new();
            for x in branches {
                match bs2.iter().find(|y| y.op == x.op) {
                    Some(y) if y.var == x.var => {
                        out.push(Branch { op: x.op.clone(), var: x.var.clone(), cont: merge(&x.cont, &y.cont)? })
                    }
                    Some(y) => {
                        return Err((
                            Chor::Recv {
                                k: k.clone(),
                                sender_role: sender_role.clone(),
                                receiver: receiver.clone(),
                                receiver_role: receiver_role.clone(),
                                branches: vec![x.clone()],
                            },
                            Chor::Recv {
                                k: k.clone(),
                                sender_role: sender_role.clone(),
                                receiver: receiver.clone(),
                                receiver_role: receiver_role.clone(),
                                branches: vec![y.clone()],
                            },
                        ))
                    }
                    None => out.push(x.clone()),
                }
            }
            for y in bs2 {
                if !branches.iter().any(|x| x.op == y.op) {
                    out.push(y.clone());
                }
            }
            Ok(Chor::Recv {
                k: k.clone(),
                sender_role: sender_role.clone(),
                receiver: receiver.clone(),
                receiver_role: receiver_role.clone(),
                branches: out,
            })
        }
        (Chor::Cond { proc, guard, then, els }, Chor::Cond { proc: p2, guard: g2, then: t2, els: e2 })
            if proc == p2 && guard == g2 =>
        {
            Ok(Chor::Cond {
                proc: proc.clone(),
                guard: guard.clone(),
                then: bx(merge(then, t2)?),
                els: bx(merge(els, e2)?),
            })
        }
        (Chor::Def { name, params, body, cont }, Chor::Def { name: n2, params: p2, body: b2, cont: c2 })
            if name == n2 && params == p2 =>
        {
            Ok(Chor::Def {
                name: name.clone(),
                params: params.clone(),
                body: bx(merge(body, b2)?),
                cont: bx(merge(cont, c2)?),
            })
        }
        (Chor::Par(x1, y1), Chor::Par(x2, y2)) => Ok(Chor::par(merge(x1, x2)?, merge(y1, y2)?)),
        _ if a.is_prefix() && b.is_prefix() && !matches!(a, Chor::Recv { .. }) => {
            let (ca, cb) = (a.prefix_cont().unwrap(), b.prefix_cont().unwrap());
            if a.with_prefix_cont(Chor::Inact) != b.with_prefix_cont(Chor::Inact) {
                return fail();
            }
            Ok(a.with_prefix_cont(merge(ca, cb)?))
        }
        _ => fail(),
    }
}

fn merge_for(r: &Proc, a: &Chor, b: &Chor) -> Result<Chor, EppError> {
    merge(a, b).map_err(|(x, y)| EppError::Unmergeable { proc: r.clone(), left: first_line(&x), right: first_line(&y) })
}

/// The per-process name of a procedure. Already projected names are kept,
/// so projecting an endpoint again is the identity.
pub fn endpoint_procedure(x: &ProcName, r: &Proc) -> ProcName {
    if x.as_str().contains('@') {
        x.clone()
    } else {
        ProcName::new(format!("{x}@{}", r.base()))
    }
}

/// `⟦C⟧r`.
pub fn project_process(c: &Chor, r: &Proc) -> Result<Chor, EppError> {
    let bx = Box::new;
    Ok(match c {
        Chor::Inact => Chor::Inact,
        Chor::Par(a, b) => Chor::par(project_process(a, r)?, project_process(b, r)?),
        Chor::Start { k, starter, role, services, cont } => {
            if starter == r {
                Chor::Req {
                    k: k.clone(),
                    starter: starter.clone(),
                    role: role.clone(),
                    services: services.iter().map(LocProc::loc_role).collect(),
                    cont: bx(project_process(cont, r)?),
                }
            } else if let Some(s) = services.iter().find(|s| &s.proc == r) {
                Chor::Acc { k: k.clone(), services: vec![s.clone()], cont: bx(project_process(cont, r)?) }
            } else {
                project_process(cont, r)?
            }
        }
        Chor::Acc { k, services, cont } => match services.iter().find(|s| &s.proc == r) {
            Some(s) => Chor::Acc { k: k.clone(), services: vec![s.clone()], cont: bx(project_process(cont, r)?) },
            None => project_process(cont, r)?,
        },
        Chor::Req { starter, cont, .. } | Chor::Send { sender: starter, cont, .. } => {
            let rest = project_process(cont, r)?;
            if starter == r {
                c.with_prefix_cont(rest)
            } else {
                rest
            }
        }
        Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont } => {
            let rest = project_process(cont, r)?;
            if sender == r {
                Chor::Send {
                    k: k.clone(),
                    sender: sender.clone(),
                    sender_role: sender_role.clone(),
                    expr: expr.clone(),
                    receiver_role: receiver_role.clone(),
                    op: op.clone(),
                    cont: bx(rest),
                }
            } else if receiver == r {
                Chor::Recv {
                    k: k.clone(),
                    sender_role: sender_role.clone(),
                    receiver: receiver.clone(),
                    receiver_role: receiver_role.clone(),
                    branches: vec![Branch { op: op.clone(), var: var.clone(), cont: rest }],
                }
            } else {
                rest
            }
        }
        Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
            if receiver == r {
                let mut bs = Vec::with_capacity(branches.len());
                for b in branches {
                    bs.push(Branch { op: b.op.clone(), var: b.var.clone(), cont: project_process(&b.cont, r)? });
                }
                Chor::Recv {
                    k: k.clone(),
                    sender_role: sender_role.clone(),
                    receiver: receiver.clone(),
                    receiver_role: receiver_role.clone(),
                    branches: bs,
                }
            } else {
                let mut acc: Option<Chor> = None;
                for b in branches {
                    let p = project_process(&b.cont, r)?;
                    acc = Some(match acc {
                        None => p,
                        Some(prev) => merge_for(r, &prev, &p)?,
                    });
                }
                acc.unwrap_or(Chor::Inact)
            }
        }
        Chor::Cond { proc, guard, then, els } => {
            let (t, e) = (project_process(then, r)?, project_process(els, r)?);
            if proc == r {
                Chor::Cond { proc: proc.clone(), guard: guard.clone(), then: bx(t), els: bx(e) }
            } else {
                merge_for(r, &t, &e)?
            }
        }
        Chor::Def { name, params, body, cont } => {
            let rest = project_process(cont, r)?;
            if params.contains(r) {
                Chor::Def {
                    name: endpoint_procedure(name, r),
                    params: vec![r.clone()],
                    body: bx(project_process(body, r)?),
                    cont: bx(rest),
                }
            } else {
                rest
            }
        }
        Chor::Call { name, args } => {
            if args.contains(r) {
                Chor::Call { name: endpoint_procedure(name, r), args: vec![r.clone()] }
            } else {
                Chor::Inact
            }
        }
    })
}

/// `⌊C⌋l`: the service processes bound by starts and accepts at `l`.
pub fn grouping(c: &Chor, l: &Loc) -> BTreeSet<Proc> {
    let mut out = BTreeSet::new();
    c.visit(&mut |x| {
        if let Chor::Start { services, .. } | Chor::Acc { services, .. } = x {
            out.extend(services.iter().filter(|s| &s.loc == l).map(|s| s.proc.clone()));
        }
    });
    out
}

fn service_locations(c: &Chor) -> BTreeSet<Loc> {
    let mut out = BTreeSet::new();
    c.visit(&mut |x| {
        if let Chor::Start { services, .. } | Chor::Acc { services, .. } = x {
            out.extend(services.iter().map(|s| s.loc.clone()));
        }
    });
    out
}

/// Who an endpoint choreography describes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Owner {
    Process(Proc),
    Service(Loc),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endpoint {
    pub owner: Owner,
    pub chor: Chor,
}

/// The endpoint choreographies of `⟦C⟧`, in a stable order: active
/// processes first, then the service groups by location. Accepts at one
/// location that cannot be merged are kept side by side.
pub fn endpoints(c: &Chor) -> Result<Vec<Endpoint>, EppError> {
    let mut out = Vec::new();
    for p in c.free_processes() {
        let t = project_process(c, &p)?.normal_form();
        out.push(Endpoint { owner: Owner::Process(p), chor: t });
    }
    for l in service_locations(c) {
        let mut groups: Vec<Chor> = Vec::new();
        for q in grouping(c, &l) {
            for t in project_process(c, &q)?.normal_form().components() {
                match groups.iter().position(|g| merge(g, t).is_ok()) {
                    Some(i) => groups[i] = merge(&groups[i], t).unwrap(),
                    None => groups.push(t.clone()),
                }
            }
        }
        out.extend(groups.into_iter().map(|g| Endpoint { owner: Owner::Service(l.clone()), chor: g }));
    }
    Ok(out)
}

/// `⟦C⟧`.
pub fn epp(c: &Chor) -> Result<Chor, EppError> {
    Ok(Chor::par_all(endpoints(c)?.into_iter().map(|e| e.chor).collect()).normal_form())
}

pub fn epp_program(p: &Program) -> Result<Program, EppError> {
    Ok(Program { protocols: p.protocols.clone(), placements: p.placements.clone(), chor: epp(&p.chor)? })
}

/// No complete actions, and either a single accept whose continuation only
/// involves the accepted process, or a single free process.
pub fn is_endpoint(c: &Chor) -> bool {
    let mut complete = false;
    c.visit(&mut |x| complete |= matches!(x, Chor::Start { .. } | Chor::Com { .. }));
    if complete {
        return false;
    }
    match c {
        Chor::Acc { services, cont, .. } => {
            services.len() == 1 && cont.free_processes().iter().all(|p| *p == services[0].proc)
        }
        _ => c.free_processes().len() == 1,
    }
}

type Defs = BTreeMap<ProcName, Chor>;

struct Pruner {
    assumed: HashSet<(Chor, Chor)>,
}

impl Pruner {
    fn unfold(c: &Chor, defs: &Defs) -> Option<Chor> {
        match c {
            Chor::Call { name, .. } => defs.get(name).cloned(),
            _ => None,
        }
    }

    fn term(&mut self, a: &Chor, b: &Chor, da: &Defs, db: &Defs) -> bool {
        if a == b && da == db {
            return true;
        }
        if let (Chor::Call { .. }, _) | (_, Chor::Call { .. }) = (a, b) {
            if matches!((a, b), (Chor::Call { name: x, args: p }, Chor::Call { name: y, args: q }) if x == y && p == q && da.get(x) == db.get(y))
            {
                return true;
            }
            let key = (a.clone(), b.clone());
            if !self.assumed.insert(key) {
                return true;
            }
            let ua = Self::unfold(a, da).unwrap_or_else(|| a.clone());
            let ub = Self::unfold(b, db).unwrap_or_else(|| b.clone());
            if ua == *a && ub == *b {
                return false;
            }
            return self.term(&ua, &ub, da, db);
        }
        match (a, b) {
            (Chor::Def { name, body, cont, .. }, _) if !matches!(b, Chor::Def { name: n2, .. } if n2 == name) => {
                let mut d = da.clone();
                d.insert(name.clone(), (**body).clone());
                self.term(cont, b, &d, db)
            }
            (_, Chor::Def { name, body, cont, .. }) if !matches!(a, Chor::Def { name: n2, .. } if n2 == name) => {
                let mut d = db.clone();
                d.insert(name.clone(), (**body).clone());
                self.term(a, cont, da, &d)
            }
            (Chor::Def { name, params, body, cont }, Chor::Def { params: p2, body: b2, cont: c2, .. }) => {
                if params != p2 {
                    return false;
                }
                let mut d1 = da.clone();
                d1.insert(name.clone(), (**body).clone());
                let mut d2 = db.clone();
                d2.insert(name.clone(), (**b2).clone());
                self.term(cont, c2, &d1, &d2)
            }
            (
                Chor::Recv { k, sender_role, receiver, receiver_role, branches },
                Chor::Recv { k: k2, sender_role: a2, receiver: q2, receiver_role: b2, branches: bs2 },
            ) => {
                k == k2
                    && sender_role == a2
                    && receiver == q2
                    && receiver_role == b2
                    && branches.iter().all(|x| {
                        bs2.iter()
                            .find(|y| y.op == x.op)
                            .is_some_and(|y| y.var == x.var && self.term(&x.cont, &y.cont, da, db))
                    })
            }
            (Chor::Cond { proc, guard, then, els }, Chor::Cond { proc: p2, guard: g2, then: t2, els: e2 }) => {
                proc == p2 && guard == g2 && self.term(then, t2, da, db) && self.term(els, e2, da, db)
            }
            (Chor::Par(..), _) | (_, Chor::Par(..)) => self.components(a, b, da, db),
            (Chor::Inact, Chor::Inact) => true,
            _ if a.is_prefix() && b.is_prefix() => {
                a.with_prefix_cont(Chor::Inact) == b.with_prefix_cont(Chor::Inact)
                    && self.term(a.prefix_cont().unwrap(), b.prefix_cont().unwrap(), da, db)
            }
            _ => false,
        }
    }

    /// Every component of `a` is pruned by its own component of `b`; the
    /// components of `b` left over are accepts.
    fn components(&mut self, a: &Chor, b: &Chor, da: &Defs, db: &Defs) -> bool {
        let ca = a.components();
        let cb = b.components();
        let mut used = vec![false; cb.len()];
        fn go(
            p: &mut Pruner,
            i: usize,
            ca: &[&Chor],
            cb: &[&Chor],
            used: &mut Vec<bool>,
            da: &Defs,
            db: &Defs,
        ) -> bool {
            if i == ca.len() {
                return cb.iter().zip(used.iter()).all(|(c, u)| *u || matches!(c, Chor::Acc { .. } | Chor::Inact));
            }
            if *ca[i] == Chor::Inact {
                return go(p, i + 1, ca, cb, used, da, db);
            }
            for j in 0..cb.len() {
                if !used[j] && p.term(ca[i], cb[j], da, db) {
                    used[j] = true;
                    if go(p, i + 1, ca, cb, used, da, db) {
                        return true;
                    }
                    used[j] = false;
                }
            }
            false
        }
        go(self, 0, &ca, &cb, &mut used, da, db)
    }
}

/// `C ≺ C'`: `C'` behaves as `C` but may offer extra reception branches and
/// extra always-available accepts. Recursion is compared up to unfolding.
pub fn prunes(c: &Chor, c2: &Chor) -> bool {
    let (a, b) = (c.normal_form(), c2.normal_form());
    let mut p = Pruner { assumed: HashSet::new() };
    p.components(&a, &b, &Defs::new(), &Defs::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_chor;

    fn c(s: &str) -> Chor {
        parse_chor(s).unwrap()
    }

    #[test]
    fn inaction_projects_to_inaction() {
        assert_eq!(project_process(&Chor::Inact, &Proc::new("p")).unwrap(), Chor::Inact);
        assert_eq!(epp(&Chor::Inact).unwrap(), Chor::Inact);
        assert!(grouping(&Chor::Inact, &Loc::new("l")).is_empty());
    }

    #[test]
    fn com_splits() {
        let t = c("k: p[A].1 -> q[B].o(x)");
        assert_eq!(project_process(&t, &Proc::new("p")).unwrap().to_string(), "k: p[A].1 -> B.o");
        assert_eq!(project_process(&t, &Proc::new("q")).unwrap().to_string(), "k: A -> q[B] {\n  o(x)\n}");
        assert_eq!(project_process(&t, &Proc::new("r")).unwrap(), Chor::Inact);
    }

    #[test]
    fn merge_unions_branches() {
        let a = c("k: A -> q[B] { ok(x) }");
        let b = c("k: A -> q[B] { ko(y) }");
        let m = merge(&a, &b).unwrap();
        let Chor::Recv { branches, .. } = &m else { panic!() };
        assert_eq!(branches.len(), 2);
        assert_eq!(merge(&a, &a).unwrap(), a);
        assert!(merge(&c("k: p[A].1 -> B.o"), &c("k: p[A].1 -> B.o2")).is_err());
    }

    #[test]
    fn pruning_allows_extra_branches_and_accepts() {
        let small = c("k: A -> q[B] { ok(x) }");
        let big = c("k: A -> q[B] { ok(x), ko(y) } | acc j: l.r[C]; 0");
        assert!(prunes(&small, &small));
        assert!(prunes(&small, &big));
        assert!(!prunes(&big, &small));
    }
}
