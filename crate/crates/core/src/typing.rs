//! Static and runtime typing: `Γ ⊢ C`, `Γ ⊢ D`, partial coherence,
//! coherence and the running-choreography judgement.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::rc::Rc;

use serde_json::{json, Value as Json};

use crate::chor::{Chor, LocProc, LocRole};
use crate::deployment::{Deployment, Effect};
use crate::expr::{BinOp, Expr};
use crate::names::{Loc, Proc, ProcName, Role, Session};
use crate::program::{Program, Protocol};
use crate::semantics::{Redex, RunningChor};
use crate::tree::{Path, Value};
use crate::types::{bte, buffer_conforms, BasicType, BufferType, CarriedType, GAction, GlobalType, LBranch, LocalType};

/// `l̃ : ⟨G|A⟩⟨B̃⟩⟨C̃⟩`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ServiceTyping {
    pub protocol: String,
    /// Roles implemented by the accepts of the typed term.
    pub implemented: BTreeSet<Role>,
}

/// Everything `Γ` records about one open session.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SessionTyping {
    pub protocol: String,
    /// `k[A] : T`.
    pub locals: BTreeMap<Role, LocalType>,
    /// `b[k]^A_B : T`, keyed by (sender, receiver). Missing entries are empty.
    pub buffers: BTreeMap<(Role, Role), BufferType>,
    /// The runtime global type the typings were last synthesised from.
    pub witness: Option<GlobalType>,
}

impl SessionTyping {
    pub fn buffer(&self, from: &Role, to: &Role) -> BufferType {
        self.buffers.get(&(from.clone(), to.clone())).cloned().unwrap_or_default()
    }
}

/// `Γ`.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Env {
    pub protocols: BTreeMap<String, Protocol>,
    /// Service typings, for protocols reached through `req`/`acc`.
    pub services: BTreeMap<String, ServiceTyping>,
    pub sessions: BTreeMap<Session, SessionTyping>,
    /// `p : k[A]`.
    pub owners: BTreeMap<Proc, BTreeMap<Session, Role>>,
    /// `p.x : U`.
    pub vars: BTreeMap<Proc, BTreeMap<Path, CarriedType>>,
    /// `p @ l`.
    pub placements: BTreeMap<Proc, Loc>,
}

/// A failed premise.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Diagnostic {
    pub rule: String,
    pub premise: Option<u8>,
    pub msg: String,
    /// First line of the offending term, when there is one.
    pub term: Option<String>,
}

impl Diagnostic {
    fn new(rule: &str, premise: Option<u8>, msg: impl Into<String>) -> Self {
        Diagnostic { rule: rule.to_string(), premise, msg: msg.into(), term: None }
    }

    fn at(mut self, c: &Chor) -> Self {
        if self.term.is_none() {
            self.term = c.to_string().lines().next().map(str::to_string);
        }
        self
    }

    pub fn to_json(&self) -> Json {
        json!({ "rule": self.rule, "premise": self.premise, "message": self.msg, "term": self.term })
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rule)?;
        if let Some(n) = self.premise {
            write!(f, " ({n})")?;
        }
        write!(f, ": {}", self.msg)?;
        if let Some(t) = &self.term {
            write!(f, "\n  at: {t}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Report {
    pub diagnostics: Vec<Diagnostic>,
}

impl Report {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn to_json(&self) -> Json {
        json!({ "ok": self.is_ok(), "diagnostics": self.diagnostics.iter().map(Diagnostic::to_json).collect::<Vec<_>>() })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

fn accs(c: &Chor) -> Vec<&Chor> {
    c.components().into_iter().filter(|x| matches!(x, Chor::Acc { .. })).collect()
}

fn reqs(c: &Chor) -> Vec<(Role, Vec<LocRole>)> {
    let mut out = Vec::new();
    c.visit(&mut |x| {
        if let Chor::Req { role, services, .. } = x {
            out.push((role.clone(), services.clone()));
        }
    });
    out
}

impl Env {
    /// The environment a source program is checked against.
    pub fn for_program(p: &Program) -> Env {
        let mut g = Env {
            protocols: p.protocols.iter().map(|pr| (pr.name.clone(), pr.clone())).collect(),
            placements: p.placement(),
            ..Env::default()
        };
        for (role, services) in reqs(&p.chor) {
            if let Some(pr) = p.protocol_for_start(&role, &services) {
                g.services
                    .entry(pr.name.clone())
                    .or_insert(ServiceTyping { protocol: pr.name.clone(), implemented: BTreeSet::new() });
            }
        }
        for a in accs(&p.chor) {
            let Chor::Acc { services, .. } = a else { continue };
            let lrs: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
            if let Some(pr) = p.protocol_for_acc(&lrs) {
                let st = g
                    .services
                    .entry(pr.name.clone())
                    .or_insert(ServiceTyping { protocol: pr.name.clone(), implemented: BTreeSet::new() });
                st.implemented.extend(services.iter().map(|s| s.role.clone()));
            }
        }
        g
    }

    fn protocol_for_start(&self, starter: &Role, services: &[LocRole]) -> Option<&Protocol> {
        self.protocols.values().find(|p| p.matches(starter, services))
    }

    fn protocol_for_acc(&self, services: &[LocRole]) -> Option<&Protocol> {
        self.protocols.values().find(|p| p.offers(services))
    }

    pub fn role_of(&self, p: &Proc, k: &Session) -> Option<&Role> {
        self.owners.get(p)?.get(k)
    }

    fn knows(&self, p: &Proc) -> bool {
        self.placements.contains_key(p) || self.owners.contains_key(p) || self.vars.contains_key(p)
    }

    fn processes(&self) -> BTreeSet<Proc> {
        let mut s: BTreeSet<Proc> = self.placements.keys().cloned().collect();
        s.extend(self.owners.keys().cloned());
        s.extend(self.vars.keys().cloned());
        s
    }

    /// Binds a fresh session, dropping any typing of a shadowed one.
    fn open_session(
        &mut self,
        k: &Session,
        protocol: &Protocol,
        roles: &[(Proc, Role, Option<Loc>)],
    ) -> Result<(), Diagnostic> {
        for o in self.owners.values_mut() {
            o.remove(k);
        }
        let mut st = SessionTyping {
            protocol: protocol.name.clone(),
            locals: BTreeMap::new(),
            buffers: BTreeMap::new(),
            witness: None,
        };
        for (p, r, l) in roles {
            let t = protocol
                .global
                .project(r)
                .map_err(|e| Diagnostic::new("projection", None, format!("protocol {}: {e}", protocol.name)))?;
            st.locals.insert(r.clone(), t);
            self.owners.entry(p.clone()).or_default().insert(k.clone(), r.clone());
            if let Some(l) = l {
                self.placements.insert(p.clone(), l.clone());
            }
        }
        self.sessions.insert(k.clone(), st);
        Ok(())
    }

    fn local(&self, k: &Session, r: &Role) -> Option<&LocalType> {
        self.sessions.get(k)?.locals.get(r)
    }

    fn set_local(&mut self, k: &Session, r: &Role, t: LocalType) {
        if let Some(s) = self.sessions.get_mut(k) {
            s.locals.insert(r.clone(), t);
        }
    }

    /// `Γ, p.x : U`, replacing whatever was typed at or under `x`.
    pub fn set_var(&mut self, p: &Proc, x: &Path, u: CarriedType) {
        let vs = self.vars.entry(p.clone()).or_default();
        let segs = x.segments();
        vs.retain(|y, _| !y.segments().starts_with(segs));
        for n in (1..segs.len()).rev() {
            let prefix = Path::from_segments(segs[..n].iter().cloned());
            if let Some(CarriedType::Record(_)) = vs.get(&prefix) {
                let mut rec = vs.remove(&prefix).unwrap();
                set_field(&mut rec, &segs[n..], u);
                vs.insert(prefix, rec);
                return;
            }
            if vs.remove(&prefix).is_some() {
                break;
            }
        }
        vs.insert(x.clone(), u);
    }

    /// The type of `p.x`, if `Γ` determines one.
    pub fn var_type(&self, p: &Proc, x: &Path) -> Option<CarriedType> {
        let vs = self.vars.get(p)?;
        let segs = x.segments();
        for n in (1..=segs.len()).rev() {
            let prefix = Path::from_segments(segs[..n].iter().cloned());
            if let Some(u) = vs.get(&prefix) {
                return u.field(&segs[n..]).cloned();
            }
        }
        // a record assembled from typed children
        let mut fs = BTreeMap::new();
        for (y, u) in vs {
            if y.segments().len() == segs.len() + 1 && y.segments().starts_with(segs) {
                fs.insert(y.segments()[segs.len()].clone(), u.clone());
            }
        }
        (!fs.is_empty() && !segs.is_empty()).then_some(CarriedType::Record(fs))
    }

    /// `Γ` restricted to the given processes.
    fn restrict(&self, procs: &BTreeSet<Proc>) -> Env {
        Env {
            protocols: self.protocols.clone(),
            services: self.services.clone(),
            sessions: self.sessions.clone(),
            owners: self
                .owners
                .iter()
                .filter(|(p, _)| procs.contains(*p))
                .map(|(p, o)| (p.clone(), o.clone()))
                .collect(),
            vars: self.vars.iter().filter(|(p, _)| procs.contains(*p)).map(|(p, o)| (p.clone(), o.clone())).collect(),
            placements: self
                .placements
                .iter()
                .filter(|(p, _)| procs.contains(*p))
                .map(|(p, o)| (p.clone(), o.clone()))
                .collect(),
        }
    }

    fn rename_procs(&self, m: &BTreeMap<Proc, Proc>) -> Env {
        let f = |p: &Proc| m.get(p).cloned().unwrap_or_else(|| p.clone());
        Env {
            protocols: self.protocols.clone(),
            services: self.services.clone(),
            sessions: self.sessions.clone(),
            owners: self.owners.iter().map(|(p, o)| (f(p), o.clone())).collect(),
            vars: self.vars.iter().map(|(p, o)| (f(p), o.clone())).collect(),
            placements: self.placements.iter().map(|(p, o)| (f(p), o.clone())).collect(),
        }
    }

    /// Ownerships, variables, placements and owned local typings agree, the
    /// latter up to unfolding.
    fn same_fragment(&self, other: &Env) -> bool {
        if self.owners != other.owners || self.vars != other.vars || self.placements != other.placements {
            return false;
        }
        self.owners.values().flat_map(|o| o.iter()).all(|(k, r)| match (self.local(k, r), other.local(k, r)) {
            (Some(a), Some(b)) => a.equiv(b),
            (None, None) => true,
            _ => false,
        })
    }

    pub fn to_json(&self) -> Json {
        let sessions: serde_json::Map<String, Json> = self
            .sessions
            .iter()
            .map(|(k, s)| {
                let locals: serde_json::Map<String, Json> =
                    s.locals.iter().map(|(r, t)| (r.to_string(), Json::String(t.to_string()))).collect();
                let buffers: serde_json::Map<String, Json> = s
                    .buffers
                    .iter()
                    .filter(|(_, b)| !b.is_empty())
                    .map(|((a, b), t)| (format!("{a}->{b}"), Json::String(render_buffer(t))))
                    .collect();
                (k.to_string(), json!({ "protocol": s.protocol, "locals": locals, "buffers": buffers }))
            })
            .collect();
        let owners: serde_json::Map<String, Json> = self
            .owners
            .iter()
            .map(|(p, o)| (p.to_string(), o.iter().map(|(k, r)| Json::String(format!("{k}[{r}]"))).collect()))
            .collect();
        let vars: serde_json::Map<String, Json> = self
            .vars
            .iter()
            .flat_map(|(p, vs)| vs.iter().map(move |(x, u)| (format!("{p}.{x}"), Json::String(u.to_string()))))
            .collect();
        let services: serde_json::Map<String, Json> = self
            .services
            .iter()
            .map(|(n, s)| (n.clone(), s.implemented.iter().map(|r| Json::String(r.to_string())).collect()))
            .collect();
        let placements: serde_json::Map<String, Json> =
            self.placements.iter().map(|(p, l)| (p.to_string(), Json::String(l.to_string()))).collect();
        json!({ "services": services, "sessions": sessions, "owners": owners, "vars": vars, "placements": placements })
    }
}

fn render_buffer(b: &BufferType) -> String {
    b.iter().map(|(o, u)| format!("{o}({u})")).collect::<Vec<_>>().join("; ")
}

fn set_field(rec: &mut CarriedType, segs: &[String], u: CarriedType) {
    match segs.split_first() {
        None => *rec = u,
        Some((h, rest)) => {
            if !matches!(rec, CarriedType::Record(_)) {
                *rec = CarriedType::Record(BTreeMap::new());
            }
            if let CarriedType::Record(fs) = rec {
                let child = fs.entry(h.clone()).or_insert_with(|| CarriedType::Record(BTreeMap::new()));
                set_field(child, rest, u);
            }
        }
    }
}

/// Syntax-directed typing of an expression in the state of `p`.
pub fn type_expr(g: &Env, p: &Proc, e: &Expr) -> Result<CarriedType, String> {
    match e {
        Expr::Path(x) => g.var_type(p, x).ok_or_else(|| format!("{p}.{x} has no type")),
        Expr::Lit(v) => match v {
            Value::Int(_) => Ok(CarriedType::int()),
            Value::Str(_) => Ok(CarriedType::str()),
            Value::Bool(_) => Ok(CarriedType::bool()),
            Value::Loc(_) => Ok(CarriedType::Basic(BasicType::Loc)),
            Value::Key(..) => Err("correlation keys cannot be written in expressions".into()),
        },
        Expr::Record(fs) => {
            let mut out = BTreeMap::new();
            for (k, e) in fs {
                out.insert(k.clone(), type_expr(g, p, e)?);
            }
            Ok(CarriedType::Record(out))
        }
        Expr::Bin(op, l, r) => {
            let (a, b) = (type_expr(g, p, l)?, type_expr(g, p, r)?);
            use BasicType::*;
            use CarriedType::Basic as B;
            let out = match (op, &a, &b) {
                (BinOp::Add, B(Int), B(Int)) | (BinOp::Sub, B(Int), B(Int)) => Some(CarriedType::int()),
                (BinOp::Add, B(Str), B(Str)) => Some(CarriedType::str()),
                (BinOp::Lt, B(Int), B(Int)) | (BinOp::Lt, B(Str), B(Str)) => Some(CarriedType::bool()),
                (BinOp::And | BinOp::Or, B(Bool), B(Bool)) => Some(CarriedType::bool()),
                (BinOp::Eq | BinOp::Ne, B(x), B(y)) if x == y => Some(CarriedType::bool()),
                _ => None,
            };
            out.ok_or_else(|| format!("operator {} cannot combine {a} and {b}", op.symbol()))
        }
    }
}

struct Procedure<'c> {
    params: &'c [Proc],
    body: &'c Chor,
}

#[derive(Default)]
struct Assumed {
    table: HashMap<ProcName, Vec<Env>>,
}

/// Fragments a procedure may be checked against before giving up.
const MAX_PROCEDURE_TYPINGS: usize = 32;

/// `Γ ⊢ C`.
pub fn typecheck(g: &Env, c: &Chor) -> Result<(), Diagnostic> {
    check(g, c, &BTreeMap::new(), &mut Assumed::default())
}

/// Checks a source program against the environment built from it.
pub fn typecheck_program(p: &Program) -> Result<Env, Diagnostic> {
    let g = Env::for_program(p);
    typecheck(&g, &p.chor)?;
    Ok(g)
}

fn unfolded(g: &Env, k: &Session, r: &Role) -> Option<LocalType> {
    g.local(k, r).map(LocalType::unfold)
}

fn branch<'t>(bs: &'t [LBranch], op: &crate::names::Op) -> Option<&'t LBranch> {
    bs.iter().find(|b| &b.op == op)
}

fn check<'c>(
    g: &Env,
    c: &'c Chor,
    defs: &BTreeMap<ProcName, Procedure<'c>>,
    assumed: &mut Assumed,
) -> Result<(), Diagnostic> {
    match c {
        Chor::Inact => end_check(g, None).map_err(|d| d.at(c)),
        Chor::Par(..) => {
            let comps = c.components();
            // role distribution: accepts of different components must not
            // implement the same role of the same protocol
            let mut implemented: BTreeSet<(String, Role)> = BTreeSet::new();
            for a in comps.iter().filter(|x| matches!(x, Chor::Acc { .. })) {
                let Chor::Acc { services, .. } = a else { unreachable!() };
                let lrs: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
                if let Some(pr) = g.protocol_for_acc(&lrs) {
                    for s in services {
                        if !implemented.insert((pr.name.clone(), s.role.clone())) {
                            return Err(Diagnostic::new(
                                "T-Par",
                                None,
                                format!("role {} of {} is implemented twice", s.role, pr.name),
                            )
                            .at(a));
                        }
                    }
                }
            }
            let frees: Vec<BTreeSet<Proc>> = comps.iter().map(|x| x.free_processes()).collect();
            let mut parts: Vec<BTreeSet<Proc>> = vec![BTreeSet::new(); comps.len()];
            for p in g.processes() {
                let homes: Vec<usize> = (0..comps.len()).filter(|i| frees[*i].contains(&p)).collect();
                match homes.as_slice() {
                    [] => {
                        parts[0].insert(p);
                    }
                    [i] => {
                        parts[*i].insert(p);
                    }
                    _ => {
                        return Err(Diagnostic::new(
                            "T-Par",
                            None,
                            format!("process {p} occurs in two parallel components"),
                        )
                        .at(c));
                    }
                }
            }
            for (x, ps) in comps.iter().zip(&parts) {
                check(&g.restrict(ps), x, defs, assumed)?;
            }
            Ok(())
        }
        Chor::Def { name, params, body, cont } => {
            let mut d2: BTreeMap<ProcName, Procedure<'c>> =
                defs.iter().map(|(k, v)| (k.clone(), Procedure { params: v.params, body: v.body })).collect();
            d2.insert(name.clone(), Procedure { params, body });
            check(g, cont, &d2, assumed)
        }
        Chor::Call { name, args } => {
            let Some(proc) = defs.get(name) else {
                return Err(Diagnostic::new("T-Call", None, format!("procedure {name} is not defined")).at(c));
            };
            if proc.params.len() != args.len() {
                return Err(
                    Diagnostic::new("T-Call", None, format!("{name} expects {} processes", proc.params.len())).at(c)
                );
            }
            let argset: BTreeSet<Proc> = args.iter().cloned().collect();
            end_check(g, Some(&argset)).map_err(|d| d.at(c))?;
            let m: BTreeMap<Proc, Proc> = args.iter().cloned().zip(proc.params.iter().cloned()).collect();
            let frag = g.restrict(&argset).rename_procs(&m);
            let seen = assumed.table.entry(name.clone()).or_default();
            if seen.iter().any(|f| f.same_fragment(&frag)) {
                return Ok(());
            }
            if seen.len() >= MAX_PROCEDURE_TYPINGS {
                return Err(
                    Diagnostic::new("T-Def", None, format!("typing of procedure {name} does not stabilise")).at(c)
                );
            }
            seen.push(frag.clone());
            check(&frag, proc.body, defs, assumed)
        }
        Chor::Cond { proc, guard, then, els } => {
            if !g.knows(proc) {
                return Err(Diagnostic::new("T-Cond", None, format!("unknown process {proc}")).at(c));
            }
            match type_expr(g, proc, guard) {
                Ok(CarriedType::Basic(BasicType::Bool)) => {}
                Ok(u) => return Err(Diagnostic::new("T-Cond", None, format!("guard has type {u}, not bool")).at(c)),
                Err(e) => return Err(Diagnostic::new("T-Cond", None, e).at(c)),
            }
            check(g, then, defs, assumed)?;
            check(g, els, defs, assumed)
        }
        Chor::Start { k, starter, role, services, cont } => {
            let lrs: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
            let Some(pr) = g.protocol_for_start(role, &lrs).cloned() else {
                return Err(Diagnostic::new("T-Start", Some(1), "no protocol matches the session start").at(c));
            };
            if !g.knows(starter) {
                return Err(Diagnostic::new("T-Start", Some(2), format!("unknown process {starter}")).at(c));
            }
            let mut g2 = g.clone();
            let mut parts = vec![(starter.clone(), role.clone(), None)];
            for s in services {
                if g.knows(&s.proc) {
                    return Err(Diagnostic::new(
                        "T-Start",
                        Some(3),
                        format!("service process {} is not fresh", s.proc),
                    )
                    .at(c));
                }
                parts.push((s.proc.clone(), s.role.clone(), Some(s.loc.clone())));
            }
            g2.open_session(k, &pr, &parts).map_err(|d| d.at(c))?;
            check(&g2, cont, defs, assumed)
        }
        Chor::Req { k, starter, role, services, cont } => {
            let Some(pr) = g.protocol_for_start(role, services).cloned() else {
                return Err(Diagnostic::new("T-Req", Some(1), "no protocol matches the request").at(c));
            };
            if !g.services.contains_key(&pr.name) {
                return Err(Diagnostic::new("T-Req", Some(1), format!("no service typing for {}", pr.name)).at(c));
            }
            if !g.knows(starter) {
                return Err(Diagnostic::new("T-Req", Some(2), format!("unknown process {starter}")).at(c));
            }
            let mut g2 = g.clone();
            g2.open_session(k, &pr, &[(starter.clone(), role.clone(), None)]).map_err(|d| d.at(c))?;
            check(&g2, cont, defs, assumed)
        }
        Chor::Acc { k, services, cont } => {
            let lrs: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
            let Some(pr) = g.protocol_for_acc(&lrs).cloned() else {
                return Err(Diagnostic::new("T-Acc", Some(1), "no protocol offers these services").at(c));
            };
            let mut g2 = Env { protocols: g.protocols.clone(), services: g.services.clone(), ..Env::default() };
            let parts: Vec<(Proc, Role, Option<Loc>)> =
                services.iter().map(|s| (s.proc.clone(), s.role.clone(), Some(s.loc.clone()))).collect();
            g2.open_session(k, &pr, &parts).map_err(|d| d.at(c))?;
            check(&g2, cont, defs, assumed)
        }
        Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont } => {
            owns(g, sender, k, sender_role, "T-Com").map_err(|d| d.at(c))?;
            owns(g, receiver, k, receiver_role, "T-Com").map_err(|d| d.at(c))?;
            let (ta, tb) = (unfolded(g, k, sender_role), unfolded(g, k, receiver_role));
            let Some(LocalType::Send { to, branches }) = &ta else {
                return Err(Diagnostic::new("T-Com", Some(1), format!("{k}[{sender_role}] does not send here")).at(c));
            };
            let Some(sb) = branch(branches, op).filter(|_| to == receiver_role) else {
                return Err(
                    Diagnostic::new("T-Com", Some(1), format!("{op} to {receiver_role} is not selectable")).at(c)
                );
            };
            let Some(LocalType::Recv { from, branches: rbs }) = &tb else {
                return Err(
                    Diagnostic::new("T-Com", Some(2), format!("{k}[{receiver_role}] does not receive here")).at(c)
                );
            };
            let Some(rb) = branch(rbs, op).filter(|_| from == sender_role) else {
                return Err(Diagnostic::new("T-Com", Some(2), format!("{op} from {sender_role} is not offered")).at(c));
            };
            expr_conforms(g, sender, expr, &sb.ty, "T-Com").map_err(|d| d.at(c))?;
            let mut g2 = g.clone();
            g2.set_local(k, sender_role, sb.cont.clone());
            g2.set_local(k, receiver_role, rb.cont.clone());
            if let Some(x) = var {
                g2.set_var(receiver, x, rb.ty.clone());
            }
            check(&g2, cont, defs, assumed)
        }
        Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont } => {
            owns(g, sender, k, sender_role, "T-Send").map_err(|d| d.at(c))?;
            let Some(LocalType::Send { to, branches }) = unfolded(g, k, sender_role) else {
                return Err(Diagnostic::new("T-Send", Some(1), format!("{k}[{sender_role}] does not send here")).at(c));
            };
            let Some(sb) = branch(&branches, op).filter(|_| &to == receiver_role) else {
                return Err(
                    Diagnostic::new("T-Send", Some(1), format!("{op} to {receiver_role} is not selectable")).at(c)
                );
            };
            expr_conforms(g, sender, expr, &sb.ty, "T-Send").map_err(|d| d.at(c))?;
            let mut g2 = g.clone();
            g2.set_local(k, sender_role, sb.cont.clone());
            check(&g2, cont, defs, assumed)
        }
        Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
            owns(g, receiver, k, receiver_role, "T-Recv").map_err(|d| d.at(c))?;
            let Some(LocalType::Recv { from, branches: tbs }) = unfolded(g, k, receiver_role) else {
                return Err(
                    Diagnostic::new("T-Recv", Some(1), format!("{k}[{receiver_role}] does not receive here")).at(c)
                );
            };
            if &from != sender_role {
                return Err(Diagnostic::new("T-Recv", Some(1), format!("expected a message from {from}")).at(c));
            }
            for tb in &tbs {
                let Some(b) = branches.iter().find(|b| b.op == tb.op) else {
                    return Err(Diagnostic::new("T-Recv", Some(2), format!("operation {} is not handled", tb.op)).at(c));
                };
                let mut g2 = g.clone();
                g2.set_local(k, receiver_role, tb.cont.clone());
                if let Some(x) = &b.var {
                    g2.set_var(receiver, x, tb.ty.clone());
                }
                check(&g2, &b.cont, defs, assumed)?;
            }
            Ok(())
        }
    }
}

fn owns(g: &Env, p: &Proc, k: &Session, r: &Role, rule: &str) -> Result<(), Diagnostic> {
    match g.role_of(p, k) {
        Some(r2) if r2 == r => Ok(()),
        Some(r2) => Err(Diagnostic::new(rule, None, format!("{p} plays {r2} in {k}, not {r}"))),
        None if g.sessions.contains_key(k) => {
            Err(Diagnostic::new(rule, None, format!("{p} does not take part in {k}")))
        }
        None => Err(Diagnostic::new(rule, None, format!("unknown session {k}"))),
    }
}

fn expr_conforms(g: &Env, p: &Proc, e: &Expr, u: &CarriedType, rule: &str) -> Result<(), Diagnostic> {
    let t = type_expr(g, p, e).map_err(|m| Diagnostic::new(rule, Some(3), m))?;
    if t.is_subtype_of(u) {
        Ok(())
    } else {
        Err(Diagnostic::new(rule, Some(3), format!("{p}.{} has type {t}, expected {u}", e.atom_string())))
    }
}

/// `T-End`: every owned local typing, outside `except`, has terminated.
fn end_check(g: &Env, except: Option<&BTreeSet<Proc>>) -> Result<(), Diagnostic> {
    for (p, o) in &g.owners {
        if except.is_some_and(|e| e.contains(p)) {
            continue;
        }
        for (k, r) in o {
            if let Some(t) = g.local(k, r) {
                if !t.is_end() {
                    return Err(Diagnostic::new(
                        "T-End",
                        None,
                        format!("{k}[{r}] played by {p} has not terminated: {t}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// `Γ1 ∘ Γ2`.
pub fn role_distribute(a: &Env, b: &Env) -> Option<Env> {
    if !a.processes().is_disjoint(&b.processes()) {
        return None;
    }
    let mut out = a.clone();
    for (n, s) in &b.services {
        match out.services.get_mut(n) {
            Some(mine) => {
                if !mine.implemented.is_disjoint(&s.implemented) {
                    return None;
                }
                mine.implemented.extend(s.implemented.iter().cloned());
            }
            None => {
                out.services.insert(n.clone(), s.clone());
            }
        }
    }
    for (n, p) in &b.protocols {
        out.protocols.entry(n.clone()).or_insert_with(|| p.clone());
    }
    for (k, s) in &b.sessions {
        match out.sessions.get_mut(k) {
            Some(mine) => {
                for (r, t) in &s.locals {
                    if mine.locals.insert(r.clone(), t.clone()).is_some() {
                        return None;
                    }
                }
                mine.buffers.extend(s.buffers.clone());
            }
            None => {
                out.sessions.insert(k.clone(), s.clone());
            }
        }
    }
    out.owners.extend(b.owners.clone());
    out.vars.extend(b.vars.clone());
    out.placements.extend(b.placements.clone());
    Some(out)
}

/// The projections of one reachable runtime global type.
#[derive(Clone, Debug)]
pub struct Projected {
    pub global: GlobalType,
    pub locals: BTreeMap<Role, LocalType>,
    pub buffers: BTreeMap<(Role, Role), BufferType>,
}

/// Runtime global types reachable from each protocol, explored on demand.
#[derive(Default)]
pub struct Witnesses {
    cache: RefCell<HashMap<GlobalType, Rc<Vec<Projected>>>>,
}

/// Bound on the runtime global types explored per protocol.
pub const MAX_WITNESSES: usize = 20_000;

pub fn project_all(g: &GlobalType, roles: &BTreeSet<Role>) -> Option<Projected> {
    let mut locals = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for r in roles {
        locals.insert(r.clone(), g.project(r).ok()?);
        for s in roles {
            if s != r {
                let b = g.buffer_projection(s, r)?;
                if !b.is_empty() {
                    buffers.insert((r.clone(), s.clone()), b);
                }
            }
        }
    }
    Some(Projected { global: g.clone(), locals, buffers })
}

impl Witnesses {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reachable(&self, g: &GlobalType, roles: &BTreeSet<Role>) -> Rc<Vec<Projected>> {
        if let Some(v) = self.cache.borrow().get(g) {
            return v.clone();
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut todo = VecDeque::from([g.clone()]);
        seen.insert(g.clone());
        while let Some(cur) = todo.pop_front() {
            if let Some(p) = project_all(&cur, roles) {
                out.push(p);
            }
            if seen.len() >= MAX_WITNESSES {
                continue;
            }
            for (_, next) in cur.step() {
                if seen.insert(next.clone()) {
                    todo.push_back(next);
                }
            }
        }
        let v = Rc::new(out);
        self.cache.borrow_mut().insert(g.clone(), v.clone());
        v
    }
}

fn session_fits(st: &SessionTyping, p: &Projected, all_roles: bool) -> bool {
    if all_roles && st.locals.len() != p.locals.len() {
        return false;
    }
    st.locals.iter().all(|(r, t)| p.locals.get(r).is_some_and(|u| t.equiv(u)))
        && st.locals.keys().all(|b| {
            p.locals
                .keys()
                .filter(|a| *a != b)
                .all(|a| st.buffer(a, b) == p.buffers.get(&(a.clone(), b.clone())).cloned().unwrap_or_default())
        })
}

fn witness_for<'w>(
    g: &Env,
    k: &Session,
    st: &SessionTyping,
    w: &Witnesses,
    all_roles: bool,
) -> Result<Option<Projected>, Diagnostic> {
    let Some(pr) = g.protocols.get(&st.protocol) else {
        return Err(Diagnostic::new("pco", None, format!("session {k} follows unknown protocol {}", st.protocol)));
    };
    let roles = pr.all_roles();
    if let Some(wg) = &st.witness {
        if let Some(p) = project_all(wg, &roles) {
            if session_fits(st, &p, all_roles) {
                return Ok(Some(p));
            }
        }
    }
    Ok(w.reachable(&pr.global, &roles).iter().find(|p| session_fits(st, p, all_roles)).cloned())
}

/// `pco(Γ)`.
pub fn partial_coherence(g: &Env, w: &Witnesses) -> Result<(), Diagnostic> {
    for (k, st) in &g.sessions {
        if witness_for(g, k, st, w, false)?.is_none() {
            return Err(Diagnostic::new("pco", None, format!("no global type explains the typings of session {k}")));
        }
    }
    Ok(())
}

/// `co(Γ)`. Service typings must implement every service role; open
/// sessions must have every role typed by the projection of one witness.
pub fn coherence(g: &Env, w: &Witnesses) -> Result<(), Diagnostic> {
    for (n, s) in &g.services {
        let Some(pr) = g.protocols.get(n) else { continue };
        let roles: BTreeSet<Role> = pr.roles.keys().cloned().collect();
        if s.implemented != roles {
            let missing: Vec<String> = roles.difference(&s.implemented).map(|r| r.to_string()).collect();
            return Err(Diagnostic::new(
                "co",
                Some(1),
                format!("service {n} does not implement {}", missing.join(", ")),
            ));
        }
    }
    for (k, st) in &g.sessions {
        if witness_for(g, k, st, w, true)?.is_none() {
            return Err(Diagnostic::new(
                "co",
                Some(2),
                format!("session {k} is not fully implemented by one global type"),
            ));
        }
    }
    Ok(())
}

/// `Γ ⊢ D`; diagnostics carry the clause number (1 to 5).
pub fn check_deployment(g: &Env, d: &Deployment) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let clause = |n: u8, m: String| Diagnostic::new("deployment", Some(n), m);
    for (l, key, ps) in d.key_clashes() {
        let names: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
        out.push(clause(1, format!("key {key} correlates queues of {} at {l}", names.join(", "))));
    }
    for (p, vs) in &g.vars {
        for (x, u) in vs {
            match d.state(p).and_then(|s| s.resolve(x)) {
                None => out.push(clause(2, format!("{p}.{x} is undefined, expected {u}"))),
                Some(t) if !u.types_tree(t) => out.push(clause(2, format!("{p}.{x} = {t} does not have type {u}"))),
                Some(_) => {}
            }
        }
    }
    for (k, st) in &g.sessions {
        let players: Vec<(&Proc, &Role)> = g.owners.iter().filter_map(|(p, o)| o.get(k).map(|r| (p, r))).collect();
        let kp = Path::from_segments([k.as_str()]);
        let descs: Vec<Option<&crate::tree::Tree>> =
            players.iter().map(|(p, _)| d.state(p).and_then(|s| s.resolve(&kp))).collect();
        for ((p, _), dsc) in players.iter().zip(&descs) {
            if dsc.is_none() {
                out.push(clause(3, format!("{p} has no descriptor for {k}")));
            }
        }
        if let Some(first) = descs.iter().flatten().next() {
            for ((p, _), dsc) in players.iter().zip(&descs) {
                if let Some(x) = dsc {
                    if x != first {
                        out.push(clause(3, format!("descriptor of {k} held by {p} differs from its peers")));
                    }
                }
            }
        }
        for ((p, r), dsc) in players.iter().zip(&descs) {
            let gl = g.placements.get(*p);
            let dl = d.location_of(p);
            let kl = dsc.and_then(|t| t.value_at(&Path::from_segments([r.as_str(), "l"])));
            let agree = match (gl, dl, kl) {
                (Some(a), Some(b), Some(Value::Loc(c))) => a == b && b == c,
                _ => false,
            };
            if !agree {
                out.push(clause(
                    4,
                    format!(
                        "location of {p} disagrees: typing {}, deployment {}, descriptor {}",
                        gl.map_or("-".to_string(), |l| l.to_string()),
                        dl.map_or("-".to_string(), |l| l.to_string()),
                        kl.map_or("-".to_string(), |v| v.to_string())
                    ),
                ));
            }
            let Some(pr) = g.protocols.get(&st.protocol) else { continue };
            for a in pr.all_roles().iter().filter(|a| *a != *r) {
                let declared = st.buffer(a, r);
                let key = dsc.and_then(|t| t.resolve(&Path::from_segments([a.as_str(), r.as_str()])));
                let queue = key.and_then(|key| d.queues(p).and_then(|m| m.get(key)));
                match queue {
                    None => out.push(clause(5, format!("{p} has no queue for messages from {a} in {k}"))),
                    Some(q) => match bte(q.iter()) {
                        Some(actual) if buffer_conforms(&actual, &declared) => {}
                        Some(actual) => out.push(clause(
                            5,
                            format!(
                                "queue {a} -> {p}[{r}] in {k} holds [{}], expected [{}]",
                                render_buffer(&actual),
                                render_buffer(&declared)
                            ),
                        )),
                        None => {
                            out.push(clause(5, format!("queue {a} -> {p}[{r}] in {k} holds an untypeable message")))
                        }
                    },
                }
            }
        }
    }
    out
}

/// `T-DC`: `pco(Γ)`, `Γ ⊢ D` and `Γ ⊢ C`.
pub fn check_running(g: &Env, s: &RunningChor, w: &Witnesses) -> Report {
    let mut r = Report::default();
    if let Err(d) = partial_coherence(g, w) {
        r.diagnostics.push(d);
    }
    r.diagnostics.extend(check_deployment(g, &s.d));
    if let Err(d) = typecheck(g, &s.c) {
        r.diagnostics.push(d);
    }
    r
}

fn advance_witness(g: &Env, k: &Session, act: &GAction, var: Option<(&Proc, &Path)>) -> Vec<Env> {
    let Some(st) = g.sessions.get(k) else { return Vec::new() };
    let Some(pr) = g.protocols.get(&st.protocol) else { return Vec::new() };
    let Some(w) = &st.witness else { return Vec::new() };
    let roles = pr.all_roles();
    let received = match act {
        GAction::Recv { from, to, op } => match st.locals.get(to).map(LocalType::unfold) {
            Some(LocalType::Recv { from: f, branches }) if &f == from => branch(&branches, op).map(|b| b.ty.clone()),
            _ => None,
        },
        GAction::Send { .. } => None,
    };
    let mut out = Vec::new();
    for (a, next) in w.step() {
        if &a != act {
            continue;
        }
        let Some(p) = project_all(&next, &roles) else { continue };
        let mut g2 = g.clone();
        let s2 = g2.sessions.get_mut(k).unwrap();
        s2.locals = p.locals;
        s2.buffers = p.buffers;
        s2.witness = Some(next);
        if let (Some((q, x)), Some(u)) = (var, &received) {
            g2.set_var(q, x, u.clone());
        }
        if !out.contains(&g2) {
            out.push(g2);
        }
    }
    out
}

/// Candidate environments for the successor of a reduction, synthesised
/// from the fired rule. Several candidates arise when the witness global
/// type can perform the action in more than one way.
pub fn advance(g: &Env, r: &Redex) -> Vec<Env> {
    match &r.effect {
        None => vec![g.clone()],
        Some(Effect::Start { k, parts }) => {
            let lrs: Vec<LocRole> = parts[1..].iter().map(LocProc::loc_role).collect();
            let Some(pr) = g.protocol_for_start(&parts[0].role, &lrs).cloned() else { return Vec::new() };
            let mut g2 = g.clone();
            let roles: Vec<(Proc, Role, Option<Loc>)> = parts
                .iter()
                .enumerate()
                .map(|(i, p)| (p.proc.clone(), p.role.clone(), (i > 0).then(|| p.loc.clone())))
                .collect();
            if g2.open_session(k, &pr, &roles).is_err() {
                return Vec::new();
            }
            g2.sessions.get_mut(k).unwrap().witness = Some(pr.global.clone());
            vec![g2]
        }
        Some(Effect::Send { k, sender_role, receiver_role, op, .. }) => advance_witness(
            g,
            k,
            &GAction::Send { from: sender_role.clone(), to: receiver_role.clone(), op: op.clone() },
            None,
        ),
        Some(Effect::Recv { k, sender_role, receiver, receiver_role, op, var }) => advance_witness(
            g,
            k,
            &GAction::Recv { from: sender_role.clone(), to: receiver_role.clone(), op: op.clone() },
            var.as_ref().map(|x| (receiver, x)),
        ),
    }
}

/// Seeds the witness of every session typed by projection of its protocol,
/// so that reductions can be followed from a statically typed environment.
pub fn with_initial_witnesses(g: &Env) -> Env {
    let mut g2 = g.clone();
    for st in g2.sessions.values_mut() {
        if st.witness.is_none() {
            if let Some(pr) = g.protocols.get(&st.protocol) {
                st.witness = Some(pr.global.clone());
            }
        }
    }
    g2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn env(src: &str) -> Result<Env, Diagnostic> {
        typecheck_program(&parse_program(src).unwrap())
    }

    const PING: &str = "protocol P at lB roles A starter, B@lB { A -> B { o(int); B -> A { r(int) } } }
        deployment { p @ lA; }
        start k: p[A] <-> lB.q[B]; k: p[A].1 -> q[B].o(x); k: q[B].(x + 1) -> p[A].r(y)";

    #[test]
    fn ping_typechecks() {
        let g = env(PING).unwrap();
        assert!(g.sessions.is_empty());
    }

    #[test]
    fn wrong_operation_is_rejected() {
        let e = env(&PING.replace("q[B].o(x)", "q[B].o2(x)")).unwrap_err();
        assert_eq!((e.rule.as_str(), e.premise), ("T-Com", Some(1)));
    }

    #[test]
    fn payload_type_is_checked() {
        let e = env(&PING.replace("p[A].1 ->", "p[A].\"one\" ->")).unwrap_err();
        assert_eq!((e.rule.as_str(), e.premise), ("T-Com", Some(3)));
    }

    #[test]
    fn unfinished_session_is_rejected() {
        let e = env(&PING.replace("; k: q[B].(x + 1) -> p[A].r(y)", "")).unwrap_err();
        assert_eq!(e.rule, "T-End");
    }

    #[test]
    fn var_typing_replaces_subtrees() {
        let mut g = Env::default();
        let p = Proc::new("p");
        g.set_var(&p, &Path::parse("x"), CarriedType::record([("a", CarriedType::int())]));
        g.set_var(&p, &Path::parse("x.b"), CarriedType::str());
        assert_eq!(g.var_type(&p, &Path::parse("x.a")), Some(CarriedType::int()));
        assert_eq!(g.var_type(&p, &Path::parse("x.b")), Some(CarriedType::str()));
        g.set_var(&p, &Path::parse("x"), CarriedType::bool());
        assert_eq!(g.var_type(&p, &Path::parse("x.a")), None);
    }

    #[test]
    fn distribution_with_empty_is_identity() {
        let g = env(PING).unwrap();
        assert_eq!(role_distribute(&g, &Env::default()), Some(g));
    }

    #[test]
    fn empty_env_is_coherent() {
        let w = Witnesses::new();
        assert!(partial_coherence(&Env::default(), &w).is_ok());
        assert!(coherence(&Env::default(), &w).is_ok());
    }
}
