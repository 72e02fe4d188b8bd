//! Deployments: where processes live, their states, and their correlated
//! input queues; plus the effects of session start, send and receive.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde_json::{json, Value as Json};

use crate::chor::{Chor, LocProc, LocRole};
use crate::expr::Expr;
use crate::keygen::KeyGen;
use crate::names::{fresh_variant, Loc, Op, Proc, Role, Session};
use crate::tree::{Path, Tree};

pub type Message = (Op, Tree);

/// `M`: correlation key → FIFO message sequence.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct QueueMap(pub BTreeMap<Tree, VecDeque<Message>>);

impl QueueMap {
    pub fn new() -> Self {
        QueueMap::default()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Tree> {
        self.0.keys()
    }

    pub fn get(&self, key: &Tree) -> Option<&VecDeque<Message>> {
        self.0.get(key)
    }

    pub fn contains(&self, key: &Tree) -> bool {
        self.0.contains_key(key)
    }

    /// Adds an empty queue; returns false if the key was already present.
    pub fn open(&mut self, key: Tree) -> bool {
        if self.0.contains_key(&key) {
            return false;
        }
        self.0.insert(key, VecDeque::new());
        true
    }

    /// Appends to the queue correlating with `key`; false if there is none.
    pub fn enqueue(&mut self, key: &Tree, m: Message) -> bool {
        match self.0.get_mut(key) {
            Some(q) => {
                q.push_back(m);
                true
            }
            None => false,
        }
    }

    pub fn dequeue(&mut self, key: &Tree) -> Option<Message> {
        self.0.get_mut(key)?.pop_front()
    }

    pub fn head(&self, key: &Tree) -> Option<&Message> {
        self.0.get(key)?.front()
    }

    /// `M ⊔ M'`; `None` when a key is shared.
    pub fn disjoint_union(&self, other: &QueueMap) -> Option<QueueMap> {
        let mut out = self.clone();
        for (k, q) in &other.0 {
            if out.0.insert(k.clone(), q.clone()).is_some() {
                return None;
            }
        }
        Some(out)
    }

    pub fn map_trees(&self, f: &mut impl FnMut(&Tree) -> Tree) -> QueueMap {
        QueueMap(self.0.iter().map(|(k, q)| (f(k), q.iter().map(|(o, t)| (o.clone(), f(t))).collect())).collect())
    }

    pub fn to_json(&self) -> Json {
        Json::Array(
            self.0
                .iter()
                .map(|(k, q)| {
                    json!({
                        "key": k.to_json(),
                        "messages": q.iter().map(|(o, t)| json!([o.as_str(), t.to_json()])).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )
    }

    pub fn from_json(j: &Json) -> Result<QueueMap, String> {
        let arr = j.as_array().ok_or("queues must be an array")?;
        let mut out = QueueMap::new();
        for e in arr {
            let key = Tree::from_json(e.get("key").ok_or("queue without key")?).map_err(|e| e.to_string())?;
            let mut q = VecDeque::new();
            for m in e.get("messages").and_then(Json::as_array).ok_or("queue without messages")? {
                let pair = m.as_array().filter(|a| a.len() == 2).ok_or("message must be [op, payload]")?;
                let op = pair[0].as_str().ok_or("operation must be a string")?;
                q.push_back((Op::new(op), Tree::from_json(&pair[1]).map_err(|e| e.to_string())?));
            }
            if out.0.insert(key, q).is_some() {
                return Err("duplicate queue key".into());
            }
        }
        Ok(out)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct ProcEntry {
    pub state: Tree,
    pub queues: QueueMap,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct Deployment {
    pub locs: BTreeMap<Loc, BTreeSet<Proc>>,
    pub procs: BTreeMap<Proc, ProcEntry>,
}

/// `δ`: the effect of a start, a send or a reception.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Effect {
    Start { k: Session, parts: Vec<LocProc> },
    Send { k: Session, sender: Proc, sender_role: Role, expr: Expr, receiver_role: Role, op: Op },
    Recv { k: Session, sender_role: Role, receiver: Proc, receiver_role: Role, op: Op, var: Option<Path> },
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::Start { k, parts } => {
                write!(f, "start {k}:")?;
                for (i, p) in parts.iter().enumerate() {
                    write!(f, "{} {}.{}[{}]", if i == 0 { "" } else { "," }, p.loc, p.proc, p.role)?;
                }
                Ok(())
            }
            Effect::Send { k, sender, sender_role, expr, receiver_role, op } => {
                write!(f, "{k}: {sender}[{sender_role}].{} -> {receiver_role}.{op}", expr.atom_string())
            }
            Effect::Recv { k, sender_role, receiver, receiver_role, op, var } => {
                write!(f, "{k}: {sender_role} -> {receiver}[{receiver_role}].{op}")?;
                if let Some(x) = var {
                    write!(f, "({x})")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DeployError {
    #[error("session terms have free session names: {0:?}")]
    FreeSessions(Vec<Session>),
    #[error("no placement for process {0}")]
    MissingPlacement(Proc),
    #[error("unknown process {0}")]
    UnknownProcess(Proc),
    #[error("process {0} is not fresh")]
    NotFresh(Proc),
    #[error("process {proc} already holds data under session path {k}")]
    SessionPathTaken { proc: Proc, k: Session },
    #[error("roles in a session start must be pairwise distinct")]
    DuplicateRole,
    #[error("queue maps are not disjoint; key freshness was violated")]
    KeyClash,
}

/// Why a send or receive effect cannot happen.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EffectError {
    #[error("stuck: {0}")]
    Stuck(String),
    #[error("correlation race at {loc}: processes {procs:?} all correlate with key {key}")]
    CorrelationRace { loc: Loc, procs: Vec<Proc>, key: Tree },
}

impl Deployment {
    pub fn new() -> Self {
        Deployment::default()
    }

    /// A default deployment: every free process empty at its placement.
    pub fn default_for(c: &Chor, placement: &BTreeMap<Proc, Loc>) -> Result<Deployment, DeployError> {
        let fs = c.free_sessions();
        if !fs.is_empty() {
            return Err(DeployError::FreeSessions(fs.into_iter().collect()));
        }
        let mut d = Deployment::new();
        for p in c.free_processes() {
            let l = placement.get(&p).ok_or_else(|| DeployError::MissingPlacement(p.clone()))?;
            d.add_process(p, l.clone(), ProcEntry::default());
        }
        Ok(d)
    }

    pub fn add_process(&mut self, p: Proc, l: Loc, e: ProcEntry) {
        self.locs.entry(l).or_default().insert(p.clone());
        self.procs.insert(p, e);
    }

    pub fn location_of(&self, p: &Proc) -> Option<&Loc> {
        self.locs.iter().find(|(_, ps)| ps.contains(p)).map(|(l, _)| l)
    }

    pub fn state(&self, p: &Proc) -> Option<&Tree> {
        self.procs.get(p).map(|e| &e.state)
    }

    pub fn queues(&self, p: &Proc) -> Option<&QueueMap> {
        self.procs.get(p).map(|e| &e.queues)
    }

    /// Every key used by a queue of a process at `l`.
    pub fn keys_at(&self, l: &Loc) -> BTreeSet<Tree> {
        self.locs
            .get(l)
            .into_iter()
            .flatten()
            .filter_map(|p| self.procs.get(p))
            .flat_map(|e| e.queues.keys().cloned())
            .collect()
    }

    /// Keys shared by two queue maps at the same location.
    pub fn key_clashes(&self) -> Vec<(Loc, Tree, Vec<Proc>)> {
        let mut out = Vec::new();
        for (l, ps) in &self.locs {
            let mut owners: BTreeMap<&Tree, Vec<Proc>> = BTreeMap::new();
            for p in ps {
                if let Some(e) = self.procs.get(p) {
                    for k in e.queues.keys() {
                        owners.entry(k).or_default().push(p.clone());
                    }
                }
            }
            for (k, v) in owners {
                if v.len() > 1 {
                    out.push((l.clone(), k.clone(), v));
                }
            }
        }
        out
    }

    /// Is `k` the top-level label of some process state?
    pub fn session_in_use(&self, k: &str) -> bool {
        self.procs.values().any(|e| e.state.child(k).is_some())
    }

    /// The first `base#n` session name not in use.
    pub fn fresh_session(&self, base: &str, taken: &BTreeSet<String>) -> Session {
        (1u64..)
            .map(|n| fresh_variant(base, n))
            .find(|s| !self.session_in_use(s) && !taken.contains(s))
            .map(Session::new)
            .expect("name space exhausted")
    }

    /// The first `base#n` process name not in use.
    pub fn fresh_proc(&self, base: &str, taken: &BTreeSet<String>) -> Proc {
        (1u64..)
            .map(|n| fresh_variant(base, n))
            .find(|s| !self.procs.contains_key(&Proc::new(s.as_str())) && !taken.contains(s))
            .map(Proc::new)
            .expect("name space exhausted")
    }

    /// Builds a session descriptor `t` and queue maps `{M_A}` satisfying
    /// `sup(t, {M_A}, D, l̃.Ã)`.
    pub fn make_session_support(
        &self,
        roles: &[LocRole],
        keygen: &dyn KeyGen,
    ) -> Result<(Tree, BTreeMap<Role, QueueMap>), DeployError> {
        let distinct: BTreeSet<&Role> = roles.iter().map(|r| &r.role).collect();
        if distinct.len() != roles.len() {
            return Err(DeployError::DuplicateRole);
        }
        let mut t = Tree::empty();
        let mut ms: BTreeMap<Role, QueueMap> = roles.iter().map(|r| (r.role.clone(), QueueMap::new())).collect();
        let mut used: BTreeMap<&Loc, BTreeSet<Tree>> = BTreeMap::new();
        for a in roles {
            t.replace_in_place(
                &Path::from_segments([a.role.as_str(), "l"]),
                Tree::leaf(crate::tree::Value::Loc(a.loc.clone())),
            );
        }
        for a in roles {
            for b in roles {
                if a.role == b.role {
                    continue;
                }
                let set = used.entry(&b.loc).or_insert_with(|| self.keys_at(&b.loc));
                let key = keygen.fresh_key(&b.loc, set);
                set.insert(key.clone());
                t.replace_in_place(&Path::from_segments([a.role.as_str(), b.role.as_str()]), key.clone());
                ms.get_mut(&b.role).unwrap().0.insert(key, VecDeque::new());
            }
        }
        Ok((t, ms))
    }

    /// The start effect. `parts[0]` is the active starter, already deployed;
    /// the rest are new service processes.
    pub fn apply_start(&self, k: &Session, parts: &[LocProc], keygen: &dyn KeyGen) -> Result<Deployment, DeployError> {
        let starter = &parts[0];
        let entry = self.procs.get(&starter.proc).ok_or_else(|| DeployError::UnknownProcess(starter.proc.clone()))?;
        if entry.state.child(k.as_str()).is_some() {
            return Err(DeployError::SessionPathTaken { proc: starter.proc.clone(), k: k.clone() });
        }
        for q in &parts[1..] {
            if self.procs.contains_key(&q.proc) {
                return Err(DeployError::NotFresh(q.proc.clone()));
            }
        }
        let roles: Vec<LocRole> = parts.iter().map(LocProc::loc_role).collect();
        let (t, ms) = self.make_session_support(&roles, keygen)?;
        let kp = Path::from_segments([k.as_str()]);
        let mut d = self.clone();
        let e = d.procs.get_mut(&starter.proc).unwrap();
        e.state = e.state.replace(&kp, t.clone());
        e.queues = e.queues.disjoint_union(&ms[&starter.role]).ok_or(DeployError::KeyClash)?;
        for q in &parts[1..] {
            let st = Tree::empty().replace(&kp, t.clone());
            d.add_process(q.proc.clone(), q.loc.clone(), ProcEntry { state: st, queues: ms[&q.role].clone() });
        }
        Ok(d)
    }

    /// The processes at `l` owning a queue correlating with `key`.
    pub fn correlating(&self, l: &Loc, key: &Tree) -> Vec<Proc> {
        self.locs
            .get(l)
            .into_iter()
            .flatten()
            .filter(|p| self.procs.get(*p).is_some_and(|e| e.queues.contains(key)))
            .cloned()
            .collect()
    }

    /// The send effect `k: p[A].e -> B.o`.
    pub fn apply_send(
        &self,
        k: &Session,
        sender: &Proc,
        a: &Role,
        e: &Expr,
        b: &Role,
        o: &Op,
    ) -> Result<Deployment, EffectError> {
        let st = self.state(sender).ok_or_else(|| EffectError::Stuck(format!("unknown sender {sender}")))?;
        let lpath = Path::from_segments([k.as_str(), b.as_str(), "l"]);
        let l = match st.value_at(&lpath) {
            Some(crate::tree::Value::Loc(l)) => l.clone(),
            _ => return Err(EffectError::Stuck(format!("{sender} has no location at {lpath}"))),
        };
        let kpath = Path::from_segments([k.as_str(), a.as_str(), b.as_str()]);
        let key = st.resolve(&kpath).ok_or_else(|| EffectError::Stuck(format!("{sender} has no key at {kpath}")))?;
        let tm = e.eval(st).map_err(|err| EffectError::Stuck(format!("{sender}: {err}")))?;
        let qs = self.correlating(&l, key);
        match qs.len() {
            0 => Err(EffectError::Stuck(format!("no queue at {l} correlates with {key}"))),
            1 => {
                let mut d = self.clone();
                d.procs.get_mut(&qs[0]).unwrap().queues.enqueue(key, (o.clone(), tm));
                Ok(d)
            }
            _ => Err(EffectError::CorrelationRace { loc: l, procs: qs, key: key.clone() }),
        }
    }

    /// The receive effect `k: A -> q[B].o(x)`.
    pub fn apply_recv(
        &self,
        k: &Session,
        a: &Role,
        q: &Proc,
        b: &Role,
        o: &Op,
        x: Option<&Path>,
    ) -> Result<Deployment, EffectError> {
        let e = self.procs.get(q).ok_or_else(|| EffectError::Stuck(format!("unknown receiver {q}")))?;
        let kpath = Path::from_segments([k.as_str(), a.as_str(), b.as_str()]);
        let key = e.state.resolve(&kpath).ok_or_else(|| EffectError::Stuck(format!("{q} has no key at {kpath}")))?;
        match e.queues.head(key) {
            None => Err(EffectError::Stuck(format!("{q} has no message waiting on {kpath}"))),
            Some((o2, _)) if o2 != o => Err(EffectError::Stuck(format!("{q} expects {o} but the queue head is {o2}"))),
            Some(_) => {
                let key = key.clone();
                let mut d = self.clone();
                let entry = d.procs.get_mut(q).unwrap();
                let (_, tm) = entry.queues.dequeue(&key).unwrap();
                if let Some(x) = x {
                    entry.state = entry.state.replace(x, tm);
                }
                Ok(d)
            }
        }
    }

    pub fn to_json(&self) -> Json {
        let locs: serde_json::Map<String, Json> = self
            .locs
            .iter()
            .map(|(l, ps)| (l.to_string(), Json::Array(ps.iter().map(|p| Json::from(p.as_str())).collect())))
            .collect();
        let procs: serde_json::Map<String, Json> = self
            .procs
            .iter()
            .map(|(p, e)| (p.to_string(), json!({"state": e.state.to_json(), "queues": e.queues.to_json()})))
            .collect();
        json!({"locations": locs, "processes": procs})
    }
}

impl Deployment {
    /// Reads the snapshot format written by [`Deployment::to_json`].
    pub fn from_json(j: &Json) -> Result<Deployment, String> {
        let mut d = Deployment::new();
        let locs = j.get("locations").and_then(Json::as_object).ok_or("snapshot without locations")?;
        let procs = j.get("processes").and_then(Json::as_object).ok_or("snapshot without processes")?;
        for (l, ps) in locs {
            let ps = ps.as_array().ok_or("a location must list its processes")?;
            d.locs.entry(Loc::new(l.as_str())).or_default();
            for p in ps {
                let name = p.as_str().ok_or("process names must be strings")?;
                let e = procs.get(name).ok_or_else(|| format!("no entry for process {name}"))?;
                let state =
                    Tree::from_json(e.get("state").ok_or("process without state")?).map_err(|e| e.to_string())?;
                let queues = QueueMap::from_json(e.get("queues").ok_or("process without queues")?)?;
                d.add_process(Proc::new(name), Loc::new(l.as_str()), ProcEntry { state, queues });
            }
        }
        if d.procs.len() != procs.len() {
            return Err("a process is not placed at any location".into());
        }
        Ok(d)
    }
}

/// Does `(t, ms)` satisfy the session-support predicate for `roles` over `d`?
pub fn is_session_support(t: &Tree, ms: &BTreeMap<Role, QueueMap>, d: &Deployment, roles: &[LocRole]) -> bool {
    for a in roles {
        let lp = Path::from_segments([a.role.as_str(), "l"]);
        if t.value_at(&lp) != Some(&crate::tree::Value::Loc(a.loc.clone())) {
            return false;
        }
    }
    for a in roles {
        for b in roles {
            if a.role == b.role {
                continue;
            }
            let Some(key) = t.resolve(&Path::from_segments([a.role.as_str(), b.role.as_str()])) else {
                return false;
            };
            let empty = ms.get(&b.role).and_then(|m| m.get(key)).is_some_and(VecDeque::is_empty);
            if !empty || d.keys_at(&b.loc).contains(key) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::CounterKeys;

    fn lr(l: &str, r: &str) -> LocRole {
        LocRole { loc: Loc::new(l), role: Role::new(r) }
    }

    #[test]
    fn default_of_inact_is_empty() {
        assert_eq!(Deployment::default_for(&Chor::Inact, &BTreeMap::new()).unwrap(), Deployment::new());
    }

    #[test]
    fn two_role_support_shape() {
        let d = Deployment::new();
        let roles = [lr("l1", "A"), lr("l2", "B")];
        let (t, ms) = d.make_session_support(&roles, &CounterKeys).unwrap();
        assert!(is_session_support(&t, &ms, &d, &roles));
        let mut paths = Vec::new();
        for (a, c) in t.children() {
            for b in c.children().keys() {
                paths.push(format!("{a}.{b}"));
            }
        }
        assert_eq!(paths, ["A.B", "A.l", "B.A", "B.l"]);
        assert_eq!(ms[&Role::new("A")].0.len(), 1);
        assert_eq!(ms[&Role::new("B")].0.len(), 1);
    }

    #[test]
    fn start_creates_location() {
        let mut d = Deployment::new();
        d.add_process("p".into(), "l1".into(), ProcEntry::default());
        let parts = [LocProc::new("l1", "p", "A"), LocProc::new("l9", "q", "B")];
        let d2 = d.apply_start(&"k".into(), &parts, &CounterKeys).unwrap();
        assert_eq!(d2.locs[&Loc::new("l9")], BTreeSet::from([Proc::new("q")]));
        assert!(d2.key_clashes().is_empty());
        assert_eq!(d2.state(&"p".into()).unwrap().child("k"), d2.state(&"q".into()).unwrap().child("k"));
    }

    #[test]
    fn send_then_recv_fifo() {
        let mut d = Deployment::new();
        d.add_process("p".into(), "l1".into(), ProcEntry::default());
        let parts = [LocProc::new("l1", "p", "A"), LocProc::new("l2", "q", "B")];
        let d = d.apply_start(&"k".into(), &parts, &CounterKeys).unwrap();
        let (k, a, b) = (Session::new("k"), Role::new("A"), Role::new("B"));
        let d = d.apply_send(&k, &"p".into(), &a, &Expr::int(1), &b, &"x".into()).unwrap();
        let d = d.apply_send(&k, &"p".into(), &a, &Expr::int(2), &b, &"y".into()).unwrap();
        assert!(d.apply_recv(&k, &a, &"q".into(), &b, &"y".into(), None).is_err());
        let d = d.apply_recv(&k, &a, &"q".into(), &b, &"x".into(), Some(&Path::parse("v"))).unwrap();
        assert_eq!(d.state(&"q".into()).unwrap().child("v"), Some(&Tree::int(1)));
        let d = d.apply_recv(&k, &a, &"q".into(), &b, &"y".into(), Some(&Path::parse("v"))).unwrap();
        assert_eq!(d.state(&"q".into()).unwrap().child("v"), Some(&Tree::int(2)));
    }
}
