//! Choreography terms, name bookkeeping, structural congruence and swaps.

use std::collections::{BTreeMap, BTreeSet};

use crate::expr::Expr;
use crate::names::{Loc, Op, Proc, ProcName, Role, Session};
use crate::tree::Path;

/// `l.q[B]`: a located service process playing a role.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LocProc {
    pub loc: Loc,
    pub proc: Proc,
    pub role: Role,
}

/// `l.B`: a located role, as listed by a request.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LocRole {
    pub loc: Loc,
    pub role: Role,
}

impl LocProc {
    pub fn new(loc: &str, proc: &str, role: &str) -> Self {
        LocProc { loc: Loc::new(loc), proc: Proc::new(proc), role: Role::new(role) }
    }

    pub fn loc_role(&self) -> LocRole {
        LocRole { loc: self.loc.clone(), role: self.role.clone() }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Branch {
    pub op: Op,
    /// `None` when the payload is discarded (an omitted variable).
    pub var: Option<Path>,
    pub cont: Chor,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub enum Chor {
    Start {
        k: Session,
        starter: Proc,
        role: Role,
        services: Vec<LocProc>,
        cont: Box<Chor>,
    },
    Com {
        k: Session,
        sender: Proc,
        sender_role: Role,
        expr: Expr,
        receiver: Proc,
        receiver_role: Role,
        op: Op,
        var: Option<Path>,
        cont: Box<Chor>,
    },
    Req {
        k: Session,
        starter: Proc,
        role: Role,
        services: Vec<LocRole>,
        cont: Box<Chor>,
    },
    Acc {
        k: Session,
        services: Vec<LocProc>,
        cont: Box<Chor>,
    },
    Send {
        k: Session,
        sender: Proc,
        sender_role: Role,
        expr: Expr,
        receiver_role: Role,
        op: Op,
        cont: Box<Chor>,
    },
    Recv {
        k: Session,
        sender_role: Role,
        receiver: Proc,
        receiver_role: Role,
        branches: Vec<Branch>,
    },
    Cond {
        proc: Proc,
        guard: Expr,
        then: Box<Chor>,
        els: Box<Chor>,
    },
    Par(Box<Chor>, Box<Chor>),
    Def {
        name: ProcName,
        params: Vec<Proc>,
        body: Box<Chor>,
        cont: Box<Chor>,
    },
    Call {
        name: ProcName,
        args: Vec<Proc>,
    },
    #[default]
    Inact,
}

/// A free or bound name of a term.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum AnyName {
    P(Proc),
    S(Session),
}

/// Simultaneous renaming of processes and sessions.
#[derive(Clone, Default, Debug)]
pub struct Renaming {
    pub procs: BTreeMap<Proc, Proc>,
    pub sessions: BTreeMap<Session, Session>,
}

impl Renaming {
    pub fn is_empty(&self) -> bool {
        self.procs.is_empty() && self.sessions.is_empty()
    }

    fn proc(&self, p: &Proc) -> Proc {
        self.procs.get(p).cloned().unwrap_or_else(|| p.clone())
    }

    fn session(&self, k: &Session) -> Session {
        self.sessions.get(k).cloned().unwrap_or_else(|| k.clone())
    }

    fn path(&self, x: &Path) -> Path {
        match x.first() {
            Some(h) => match self.sessions.get(&Session::new(h)) {
                Some(to) => x.rename_head(h, to.as_str()),
                None => x.clone(),
            },
            None => x.clone(),
        }
    }

    fn expr(&self, e: &Expr) -> Expr {
        if self.sessions.is_empty() {
            e.clone()
        } else {
            e.map_paths(&|p| self.path(p))
        }
    }

    /// The renaming with the given binders removed (they shadow the map).
    fn without(&self, k: Option<&Session>, ps: &[&Proc]) -> Renaming {
        let mut r = self.clone();
        if let Some(k) = k {
            r.sessions.remove(k);
        }
        for p in ps {
            r.procs.remove(*p);
        }
        r
    }
}

fn bx(c: Chor) -> Box<Chor> {
    Box::new(c)
}

impl Chor {
    pub fn par(a: Chor, b: Chor) -> Chor {
        Chor::Par(bx(a), bx(b))
    }

    /// Right-nested parallel composition; `0` for no components.
    pub fn par_all(mut cs: Vec<Chor>) -> Chor {
        match cs.len() {
            0 => Chor::Inact,
            1 => cs.pop().unwrap(),
            _ => {
                let last = cs.pop().unwrap();
                cs.into_iter().rev().fold(last, |acc, c| Chor::par(c, acc))
            }
        }
    }

    /// The parallel components, with nested `|` flattened.
    pub fn components(&self) -> Vec<&Chor> {
        let mut out = Vec::new();
        fn go<'a>(c: &'a Chor, out: &mut Vec<&'a Chor>) {
            match c {
                Chor::Par(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                _ => out.push(c),
            }
        }
        go(self, &mut out);
        out
    }

    pub fn is_prefix(&self) -> bool {
        matches!(self, Chor::Start { .. } | Chor::Com { .. } | Chor::Req { .. } | Chor::Acc { .. } | Chor::Send { .. })
            || matches!(self, Chor::Recv { branches, .. } if branches.len() == 1)
    }

    /// For an interaction prefix `η; C`, returns `C`.
    pub fn prefix_cont(&self) -> Option<&Chor> {
        match self {
            Chor::Start { cont, .. }
            | Chor::Com { cont, .. }
            | Chor::Req { cont, .. }
            | Chor::Acc { cont, .. }
            | Chor::Send { cont, .. } => Some(cont),
            Chor::Recv { branches, .. } if branches.len() == 1 => Some(&branches[0].cont),
            _ => None,
        }
    }

    /// Replaces the continuation of a prefix; `self` must be a prefix.
    pub fn with_prefix_cont(&self, c: Chor) -> Chor {
        let mut out = self.clone();
        match &mut out {
            Chor::Start { cont, .. }
            | Chor::Com { cont, .. }
            | Chor::Req { cont, .. }
            | Chor::Acc { cont, .. }
            | Chor::Send { cont, .. } => **cont = c,
            Chor::Recv { branches, .. } if branches.len() == 1 => branches[0].cont = c,
            _ => panic!("with_prefix_cont on a non-prefix term"),
        }
        out
    }

    /// `pn(η)`: the processes syntactically occurring in a prefix.
    pub fn prefix_processes(&self) -> BTreeSet<Proc> {
        let mut s = BTreeSet::new();
        match self {
            Chor::Start { starter, services, .. } => {
                s.insert(starter.clone());
                s.extend(services.iter().map(|x| x.proc.clone()));
            }
            Chor::Com { sender, receiver, .. } => {
                s.insert(sender.clone());
                s.insert(receiver.clone());
            }
            Chor::Req { starter, .. } => {
                s.insert(starter.clone());
            }
            Chor::Acc { services, .. } => s.extend(services.iter().map(|x| x.proc.clone())),
            Chor::Send { sender, .. } => {
                s.insert(sender.clone());
            }
            Chor::Recv { receiver, .. } => {
                s.insert(receiver.clone());
            }
            _ => {}
        }
        s
    }

    /// Names bound by a prefix.
    pub fn prefix_binders(&self) -> BTreeSet<AnyName> {
        let mut s = BTreeSet::new();
        match self {
            Chor::Start { k, services, .. } | Chor::Acc { k, services, .. } => {
                s.insert(AnyName::S(k.clone()));
                s.extend(services.iter().map(|x| AnyName::P(x.proc.clone())));
            }
            Chor::Req { k, .. } => {
                s.insert(AnyName::S(k.clone()));
            }
            _ => {}
        }
        s
    }

    /// Free names of a prefix head (ignoring its continuation).
    pub fn prefix_free_names(&self) -> BTreeSet<AnyName> {
        let mut s = BTreeSet::new();
        match self {
            Chor::Start { starter, .. } | Chor::Req { starter, .. } => {
                s.insert(AnyName::P(starter.clone()));
            }
            Chor::Com { k, sender, receiver, expr, .. } => {
                s.insert(AnyName::S(k.clone()));
                s.insert(AnyName::P(sender.clone()));
                s.insert(AnyName::P(receiver.clone()));
                s.extend(expr_sessions(expr));
            }
            Chor::Send { k, sender, expr, .. } => {
                s.insert(AnyName::S(k.clone()));
                s.insert(AnyName::P(sender.clone()));
                s.extend(expr_sessions(expr));
            }
            Chor::Recv { k, receiver, .. } => {
                s.insert(AnyName::S(k.clone()));
                s.insert(AnyName::P(receiver.clone()));
            }
            _ => {}
        }
        s
    }

    /// `fp(C)`: free process names.
    pub fn free_processes(&self) -> BTreeSet<Proc> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut BTreeSet::new(), &mut out, &mut BTreeSet::new(), &mut BTreeSet::new());
        out
    }

    /// Free session names.
    pub fn free_sessions(&self) -> BTreeSet<Session> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut BTreeSet::new(), &mut BTreeSet::new(), &mut BTreeSet::new(), &mut out);
        out
    }

    fn collect_free(
        &self,
        bp: &mut BTreeSet<Proc>,
        fp: &mut BTreeSet<Proc>,
        bs: &mut BTreeSet<Session>,
        fs: &mut BTreeSet<Session>,
    ) {
        let p = |x: &Proc, bp: &BTreeSet<Proc>, fp: &mut BTreeSet<Proc>| {
            if !bp.contains(x) {
                fp.insert(x.clone());
            }
        };
        let s = |k: &Session, bs: &BTreeSet<Session>, fs: &mut BTreeSet<Session>| {
            if !bs.contains(k) {
                fs.insert(k.clone());
            }
        };
        match self {
            Chor::Start { k, starter, services, cont, .. } => {
                p(starter, bp, fp);
                let (mut bp2, mut bs2) = (bp.clone(), bs.clone());
                bs2.insert(k.clone());
                bp2.extend(services.iter().map(|x| x.proc.clone()));
                cont.collect_free(&mut bp2, fp, &mut bs2, fs);
            }
            Chor::Acc { k, services, cont } => {
                let (mut bp2, mut bs2) = (bp.clone(), bs.clone());
                bs2.insert(k.clone());
                bp2.extend(services.iter().map(|x| x.proc.clone()));
                cont.collect_free(&mut bp2, fp, &mut bs2, fs);
            }
            Chor::Req { k, starter, cont, .. } => {
                p(starter, bp, fp);
                let mut bs2 = bs.clone();
                bs2.insert(k.clone());
                cont.collect_free(bp, fp, &mut bs2, fs);
            }
            Chor::Com { k, sender, receiver, cont, .. } => {
                p(sender, bp, fp);
                p(receiver, bp, fp);
                s(k, bs, fs);
                cont.collect_free(bp, fp, bs, fs);
            }
            Chor::Send { k, sender, cont, .. } => {
                p(sender, bp, fp);
                s(k, bs, fs);
                cont.collect_free(bp, fp, bs, fs);
            }
            Chor::Recv { k, receiver, branches, .. } => {
                p(receiver, bp, fp);
                s(k, bs, fs);
                for b in branches {
                    b.cont.collect_free(bp, fp, bs, fs);
                }
            }
            Chor::Cond { proc, then, els, .. } => {
                p(proc, bp, fp);
                then.collect_free(bp, fp, bs, fs);
                els.collect_free(bp, fp, bs, fs);
            }
            Chor::Par(a, b) => {
                a.collect_free(bp, fp, bs, fs);
                b.collect_free(bp, fp, bs, fs);
            }
            Chor::Def { params, body, cont, .. } => {
                cont.collect_free(bp, fp, bs, fs);
                let mut bp2 = bp.clone();
                bp2.extend(params.iter().cloned());
                body.collect_free(&mut bp2, fp, bs, fs);
            }
            Chor::Call { args, .. } => {
                for a in args {
                    p(a, bp, fp);
                }
            }
            Chor::Inact => {}
        }
    }

    /// Every process name occurring anywhere, bound or free.
    pub fn all_processes(&self) -> BTreeSet<Proc> {
        let mut out = BTreeSet::new();
        self.visit(&mut |c| match c {
            Chor::Cond { proc, .. } => {
                out.insert(proc.clone());
            }
            Chor::Def { params, .. } => out.extend(params.iter().cloned()),
            Chor::Call { args, .. } => out.extend(args.iter().cloned()),
            _ => out.extend(c.prefix_processes()),
        });
        out
    }

    /// Pre-order traversal of every subterm.
    pub fn visit(&self, f: &mut impl FnMut(&Chor)) {
        f(self);
        match self {
            Chor::Start { cont, .. }
            | Chor::Com { cont, .. }
            | Chor::Req { cont, .. }
            | Chor::Acc { cont, .. }
            | Chor::Send { cont, .. } => cont.visit(f),
            Chor::Recv { branches, .. } => branches.iter().for_each(|b| b.cont.visit(f)),
            Chor::Cond { then, els, .. } => {
                then.visit(f);
                els.visit(f);
            }
            Chor::Par(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Chor::Def { body, cont, .. } => {
                body.visit(f);
                cont.visit(f);
            }
            Chor::Call { .. } | Chor::Inact => {}
        }
    }

    /// Procedure names called in the term (outside nested redefinitions too).
    pub fn called(&self) -> BTreeSet<ProcName> {
        let mut out = BTreeSet::new();
        self.visit(&mut |c| {
            if let Chor::Call { name, .. } = c {
                out.insert(name.clone());
            }
        });
        out
    }

    /// Capture-avoiding renaming of free processes and sessions.
    pub fn rename(&self, r: &Renaming) -> Chor {
        if r.is_empty() {
            return self.clone();
        }
        match self {
            Chor::Start { k, starter, role, services, cont } => {
                let ps: Vec<&Proc> = services.iter().map(|x| &x.proc).collect();
                Chor::Start {
                    k: k.clone(),
                    starter: r.proc(starter),
                    role: role.clone(),
                    services: services.clone(),
                    cont: bx(cont.rename(&r.without(Some(k), &ps))),
                }
            }
            Chor::Acc { k, services, cont } => {
                let ps: Vec<&Proc> = services.iter().map(|x| &x.proc).collect();
                Chor::Acc { k: k.clone(), services: services.clone(), cont: bx(cont.rename(&r.without(Some(k), &ps))) }
            }
            Chor::Req { k, starter, role, services, cont } => Chor::Req {
                k: k.clone(),
                starter: r.proc(starter),
                role: role.clone(),
                services: services.clone(),
                cont: bx(cont.rename(&r.without(Some(k), &[]))),
            },
            Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont } => Chor::Com {
                k: r.session(k),
                sender: r.proc(sender),
                sender_role: sender_role.clone(),
                expr: r.expr(expr),
                receiver: r.proc(receiver),
                receiver_role: receiver_role.clone(),
                op: op.clone(),
                var: var.as_ref().map(|x| r.path(x)),
                cont: bx(cont.rename(r)),
            },
            Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont } => Chor::Send {
                k: r.session(k),
                sender: r.proc(sender),
                sender_role: sender_role.clone(),
                expr: r.expr(expr),
                receiver_role: receiver_role.clone(),
                op: op.clone(),
                cont: bx(cont.rename(r)),
            },
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => Chor::Recv {
                k: r.session(k),
                sender_role: sender_role.clone(),
                receiver: r.proc(receiver),
                receiver_role: receiver_role.clone(),
                branches: branches
                    .iter()
                    .map(|b| Branch {
                        op: b.op.clone(),
                        var: b.var.as_ref().map(|x| r.path(x)),
                        cont: b.cont.rename(r),
                    })
                    .collect(),
            },
            Chor::Cond { proc, guard, then, els } => Chor::Cond {
                proc: r.proc(proc),
                guard: r.expr(guard),
                then: bx(then.rename(r)),
                els: bx(els.rename(r)),
            },
            Chor::Par(a, b) => Chor::par(a.rename(r), b.rename(r)),
            // parameters name the processes involved; they are renamed with them
            Chor::Def { name, params, body, cont } => Chor::Def {
                name: name.clone(),
                params: params.iter().map(|p| r.proc(p)).collect(),
                body: bx(body.rename(r)),
                cont: bx(cont.rename(r)),
            },
            Chor::Call { name, args } => {
                Chor::Call { name: name.clone(), args: args.iter().map(|p| r.proc(p)).collect() }
            }
            Chor::Inact => Chor::Inact,
        }
    }

    /// Canonical representative modulo the structural congruence: parallel
    /// components flattened, `0` components dropped, unused definitions
    /// erased, components sorted. Recursion is not unfolded.
    pub fn normal_form(&self) -> Chor {
        let mut comps: Vec<Chor> = Vec::new();
        for c in self.components() {
            let n = c.normal_component();
            for cc in n.components() {
                if *cc != Chor::Inact {
                    comps.push(cc.clone());
                }
            }
        }
        comps.sort();
        Chor::par_all(comps)
    }

    fn normal_component(&self) -> Chor {
        match self {
            Chor::Par(..) => self.normal_form(),
            Chor::Def { name, params, body, cont } => {
                let cont = cont.normal_form();
                if !cont.called().contains(name) {
                    return cont;
                }
                Chor::Def { name: name.clone(), params: params.clone(), body: bx(body.normal_form()), cont: bx(cont) }
            }
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => Chor::Recv {
                k: k.clone(),
                sender_role: sender_role.clone(),
                receiver: receiver.clone(),
                receiver_role: receiver_role.clone(),
                branches: branches
                    .iter()
                    .map(|b| Branch { op: b.op.clone(), var: b.var.clone(), cont: b.cont.normal_form() })
                    .collect(),
            },
            Chor::Cond { proc, guard, then, els } => Chor::Cond {
                proc: proc.clone(),
                guard: guard.clone(),
                then: bx(then.normal_form()),
                els: bx(els.normal_form()),
            },
            Chor::Call { .. } | Chor::Inact => self.clone(),
            _ => {
                let cont = self.prefix_cont().expect("prefix").normal_form();
                self.with_prefix_cont(cont)
            }
        }
    }

    /// Normal form that additionally renames every binder and every receive
    /// variable to a positional canonical name.
    pub fn alpha_normal_form(&self) -> Chor {
        let mut counter = 0usize;
        self.normal_form().alpha(&mut counter, &BTreeMap::new()).normal_form()
    }

    fn alpha(&self, n: &mut usize, vars: &BTreeMap<String, String>) -> Chor {
        let fresh = |n: &mut usize, base: &str| {
            *n += 1;
            format!("{base}{}", *n)
        };
        let map_path = |x: &Path, vars: &BTreeMap<String, String>| match x.first() {
            Some(h) => match vars.get(h) {
                Some(to) => x.rename_head(h, to),
                None => x.clone(),
            },
            None => x.clone(),
        };
        let map_expr = |e: &Expr, vars: &BTreeMap<String, String>| e.map_paths(&|p| map_path(p, vars));
        match self {
            Chor::Start { k, services, .. } | Chor::Acc { k, services, .. } => {
                let mut r = Renaming::default();
                let k2 = Session::new(fresh(n, "k"));
                r.sessions.insert(k.clone(), k2.clone());
                let mut sv = services.clone();
                for s in sv.iter_mut() {
                    let q = Proc::new(fresh(n, "q"));
                    r.procs.insert(s.proc.clone(), q.clone());
                    s.proc = q;
                }
                let cont = self.prefix_cont().unwrap().rename(&r).alpha(n, vars);
                let mut head = self.with_prefix_cont(Chor::Inact);
                match &mut head {
                    Chor::Start { k, services, .. } | Chor::Acc { k, services, .. } => {
                        *k = k2;
                        *services = sv;
                    }
                    _ => unreachable!(),
                }
                head.with_prefix_cont(cont)
            }
            Chor::Req { k, starter, role, services, cont } => {
                let k2 = Session::new(fresh(n, "k"));
                let mut r = Renaming::default();
                r.sessions.insert(k.clone(), k2.clone());
                Chor::Req {
                    k: k2,
                    starter: starter.clone(),
                    role: role.clone(),
                    services: services.clone(),
                    cont: bx(cont.rename(&r).alpha(n, vars)),
                }
            }
            Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont } => {
                let mut vars2 = vars.clone();
                let var2 = var.as_ref().map(|x| {
                    let v = fresh(n, "x");
                    let head = x.first().unwrap_or_default().to_string();
                    vars2.insert(head.clone(), v.clone());
                    x.rename_head(&head, &v)
                });
                Chor::Com {
                    k: k.clone(),
                    sender: sender.clone(),
                    sender_role: sender_role.clone(),
                    expr: map_expr(expr, vars),
                    receiver: receiver.clone(),
                    receiver_role: receiver_role.clone(),
                    op: op.clone(),
                    var: var2,
                    cont: bx(cont.alpha(n, &vars2)),
                }
            }
            Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont } => Chor::Send {
                k: k.clone(),
                sender: sender.clone(),
                sender_role: sender_role.clone(),
                expr: map_expr(expr, vars),
                receiver_role: receiver_role.clone(),
                op: op.clone(),
                cont: bx(cont.alpha(n, vars)),
            },
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => Chor::Recv {
                k: k.clone(),
                sender_role: sender_role.clone(),
                receiver: receiver.clone(),
                receiver_role: receiver_role.clone(),
                branches: branches
                    .iter()
                    .map(|b| {
                        let mut vars2 = vars.clone();
                        let var2 = b.var.as_ref().map(|x| {
                            let v = fresh(n, "x");
                            let head = x.first().unwrap_or_default().to_string();
                            vars2.insert(head.clone(), v.clone());
                            x.rename_head(&head, &v)
                        });
                        Branch { op: b.op.clone(), var: var2, cont: b.cont.alpha(n, &vars2) }
                    })
                    .collect(),
            },
            Chor::Cond { proc, guard, then, els } => Chor::Cond {
                proc: proc.clone(),
                guard: map_expr(guard, vars),
                then: bx(then.alpha(n, vars)),
                els: bx(els.alpha(n, vars)),
            },
            Chor::Par(a, b) => Chor::par(a.alpha(n, vars), b.alpha(n, vars)),
            Chor::Def { name, params, body, cont } => Chor::Def {
                name: name.clone(),
                params: params.clone(),
                body: bx(body.alpha(n, vars)),
                cont: bx(cont.alpha(n, vars)),
            },
            Chor::Call { .. } | Chor::Inact => self.clone(),
        }
    }

    /// All one-step rewrites by the swap relation: adjacent prefixes on
    /// disjoint processes exchange places, and a prefix commutes with a
    /// conditional it does not influence. Closed under every context.
    pub fn swap_neighbours(&self) -> Vec<Chor> {
        let mut out = Vec::new();
        // at the root
        if let Some(c1) = self.prefix_cont() {
            if c1.is_prefix() && can_swap(self, c1) {
                let inner = c1.prefix_cont().unwrap().clone();
                let eta = self.with_prefix_cont(inner);
                out.push(c1.with_prefix_cont(eta));
            }
            if let Chor::Cond { proc, guard, then, els } = c1 {
                if cond_commutes(self, proc, guard) {
                    out.push(Chor::Cond {
                        proc: proc.clone(),
                        guard: guard.clone(),
                        then: bx(self.with_prefix_cont((**then).clone())),
                        els: bx(self.with_prefix_cont((**els).clone())),
                    });
                }
            }
        }
        if let Chor::Cond { proc, guard, then, els } = self {
            if then.is_prefix() && els.is_prefix() {
                let h1 = then.with_prefix_cont(Chor::Inact);
                let h2 = els.with_prefix_cont(Chor::Inact);
                if h1 == h2 && cond_commutes(then, proc, guard) {
                    let c = Chor::Cond {
                        proc: proc.clone(),
                        guard: guard.clone(),
                        then: bx(then.prefix_cont().unwrap().clone()),
                        els: bx(els.prefix_cont().unwrap().clone()),
                    };
                    out.push(h1.with_prefix_cont(c));
                }
            }
        }
        // congruence closure
        match self {
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
                for (i, b) in branches.iter().enumerate() {
                    for c in b.cont.swap_neighbours() {
                        let mut bs = branches.clone();
                        bs[i].cont = c;
                        out.push(Chor::Recv {
                            k: k.clone(),
                            sender_role: sender_role.clone(),
                            receiver: receiver.clone(),
                            receiver_role: receiver_role.clone(),
                            branches: bs,
                        });
                    }
                }
            }
            Chor::Cond { proc, guard, then, els } => {
                for c in then.swap_neighbours() {
                    out.push(Chor::Cond { proc: proc.clone(), guard: guard.clone(), then: bx(c), els: els.clone() });
                }
                for c in els.swap_neighbours() {
                    out.push(Chor::Cond { proc: proc.clone(), guard: guard.clone(), then: then.clone(), els: bx(c) });
                }
            }
            Chor::Par(a, b) => {
                for c in a.swap_neighbours() {
                    out.push(Chor::Par(bx(c), b.clone()));
                }
                for c in b.swap_neighbours() {
                    out.push(Chor::Par(a.clone(), bx(c)));
                }
            }
            Chor::Def { name, params, body, cont } => {
                for c in body.swap_neighbours() {
                    out.push(Chor::Def { name: name.clone(), params: params.clone(), body: bx(c), cont: cont.clone() });
                }
                for c in cont.swap_neighbours() {
                    out.push(Chor::Def { name: name.clone(), params: params.clone(), body: body.clone(), cont: bx(c) });
                }
            }
            Chor::Call { .. } | Chor::Inact => {}
            _ => {
                for c in self.prefix_cont().unwrap().swap_neighbours() {
                    out.push(self.with_prefix_cont(c));
                }
            }
        }
        out
    }

    /// True when the term is `0` up to congruence once idle top-level
    /// accepts (always-available services) are discarded.
    pub fn is_terminated(&self) -> bool {
        self.normal_form().components().into_iter().all(|c| matches!(c, Chor::Inact | Chor::Acc { .. }))
    }

    /// The number of constructors, for bounding searches.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

fn expr_sessions(e: &Expr) -> impl Iterator<Item = AnyName> + '_ {
    e.reads().into_iter().filter_map(|p| p.first().map(|h| AnyName::S(Session::new(h))))
}

/// Side condition of the prefix swap: disjoint processes and no name of
/// one prefix captured by the binders of the other.
fn can_swap(a: &Chor, b: &Chor) -> bool {
    if !a.prefix_processes().is_disjoint(&b.prefix_processes()) {
        return false;
    }
    let (ba, bb) = (a.prefix_binders(), b.prefix_binders());
    ba.is_disjoint(&b.prefix_free_names()) && bb.is_disjoint(&a.prefix_free_names()) && ba.is_disjoint(&bb)
}

fn cond_commutes(eta: &Chor, p: &Proc, guard: &Expr) -> bool {
    if eta.prefix_processes().contains(p) {
        return false;
    }
    let binders = eta.prefix_binders();
    !binders.contains(&AnyName::P(p.clone())) && expr_sessions(guard).all(|s| !binders.contains(&s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn com(k: &str, p: &str, q: &str, op: &str, cont: Chor) -> Chor {
        Chor::Com {
            k: k.into(),
            sender: p.into(),
            sender_role: "A".into(),
            expr: Expr::int(1),
            receiver: q.into(),
            receiver_role: "B".into(),
            op: op.into(),
            var: Some(Path::parse("x")),
            cont: bx(cont),
        }
    }

    #[test]
    fn fp_of_inact_is_empty() {
        assert!(Chor::Inact.free_processes().is_empty());
    }

    #[test]
    fn fp_of_com() {
        let c = com("k", "p", "q", "o", Chor::Inact);
        let expected: BTreeSet<Proc> = ["p", "q"].into_iter().map(Proc::from).collect();
        assert_eq!(c.free_processes(), expected);
    }

    #[test]
    fn pn_of_prefixes() {
        let send = Chor::Send {
            k: "k".into(),
            sender: "p".into(),
            sender_role: "A".into(),
            expr: Expr::int(1),
            receiver_role: "B".into(),
            op: "o".into(),
            cont: bx(Chor::Inact),
        };
        assert_eq!(send.prefix_processes(), BTreeSet::from([Proc::from("p")]));
        let recv = Chor::Recv {
            k: "k".into(),
            sender_role: "A".into(),
            receiver: "q".into(),
            receiver_role: "B".into(),
            branches: vec![Branch { op: "o".into(), var: None, cont: Chor::Inact }],
        };
        assert_eq!(recv.prefix_processes(), BTreeSet::from([Proc::from("q")]));
    }

    #[test]
    fn start_binds_services() {
        let c = Chor::Start {
            k: "k".into(),
            starter: "p".into(),
            role: "A".into(),
            services: vec![LocProc::new("l", "q", "B")],
            cont: bx(com("k", "p", "q", "o", Chor::Inact)),
        };
        assert_eq!(c.free_processes(), BTreeSet::from([Proc::from("p")]));
        assert!(c.free_sessions().is_empty());
    }

    #[test]
    fn par_assoc_normal_form() {
        let a = com("k", "p", "q", "a", Chor::Inact);
        let b = com("k", "r", "s", "b", Chor::Inact);
        let c = com("k", "t", "u", "c", Chor::Inact);
        let l = Chor::par(Chor::par(a.clone(), b.clone()), c.clone());
        let r = Chor::par(a, Chor::par(b, c));
        assert_eq!(l.normal_form(), r.normal_form());
    }

    #[test]
    fn dead_definition_erased() {
        let d = Chor::Def {
            name: "X".into(),
            params: vec!["p".into()],
            body: bx(Chor::Call { name: "X".into(), args: vec!["p".into()] }),
            cont: bx(Chor::Inact),
        };
        assert_eq!(d.normal_form(), Chor::Inact);
    }

    #[test]
    fn swap_disjoint_prefixes() {
        let c = com("k", "p", "q", "a", com("k", "r", "s", "b", Chor::Inact));
        let swapped = c.swap_neighbours();
        assert_eq!(swapped, vec![com("k", "r", "s", "b", com("k", "p", "q", "a", Chor::Inact))]);
        let shared = com("k", "p", "q", "a", com("k", "q", "s", "b", Chor::Inact));
        assert!(shared.swap_neighbours().is_empty());
    }

    #[test]
    fn renaming_respects_binders() {
        let inner = Chor::Start {
            k: "k".into(),
            starter: "p".into(),
            role: "A".into(),
            services: vec![LocProc::new("l", "q", "B")],
            cont: bx(com("k", "p", "q", "o", Chor::Inact)),
        };
        let mut r = Renaming::default();
        r.procs.insert("q".into(), "z".into());
        r.procs.insert("p".into(), "w".into());
        let out = inner.rename(&r);
        match out {
            Chor::Start { starter, cont, .. } => {
                assert_eq!(starter, Proc::from("w"));
                assert_eq!(cont.free_processes(), BTreeSet::from([Proc::from("w"), Proc::from("q")]));
            }
            _ => panic!(),
        }
    }
}
