//! Carried types, global and local session types, projection, merging and
//! the small-step semantics of global types.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use crate::names::{Op, Role};
use crate::tree::{Tree, Value};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum BasicType {
    Int,
    Str,
    Bool,
    Loc,
}

/// `U`: the shape of a message tree. Records have an empty root.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum CarriedType {
    Basic(BasicType),
    Record(BTreeMap<String, CarriedType>),
}

impl CarriedType {
    pub fn int() -> Self {
        CarriedType::Basic(BasicType::Int)
    }

    pub fn str() -> Self {
        CarriedType::Basic(BasicType::Str)
    }

    pub fn bool() -> Self {
        CarriedType::Basic(BasicType::Bool)
    }

    pub fn record<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = (S, CarriedType)>,
        S: Into<String>,
    {
        CarriedType::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Width subtyping: a record may carry more fields than required.
    pub fn is_subtype_of(&self, sup: &CarriedType) -> bool {
        match (self, sup) {
            (CarriedType::Basic(a), CarriedType::Basic(b)) => a == b,
            (CarriedType::Record(a), CarriedType::Record(b)) => {
                b.iter().all(|(k, u)| a.get(k).is_some_and(|t| t.is_subtype_of(u)))
            }
            _ => false,
        }
    }

    /// The most precise type of a tree. Correlation keys have no type.
    pub fn of_tree(t: &Tree) -> Option<CarriedType> {
        if let Some(v) = t.value() {
            return match v {
                Value::Int(_) => Some(CarriedType::int()),
                Value::Str(_) => Some(CarriedType::str()),
                Value::Bool(_) => Some(CarriedType::bool()),
                Value::Loc(_) => Some(CarriedType::Basic(BasicType::Loc)),
                Value::Key(..) => None,
            };
        }
        let mut fs = BTreeMap::new();
        for (k, c) in t.children() {
            fs.insert(k.clone(), CarriedType::of_tree(c)?);
        }
        Some(CarriedType::Record(fs))
    }

    /// `⊢ t : U`, with extra subtrees permitted.
    pub fn types_tree(&self, t: &Tree) -> bool {
        match self {
            CarriedType::Basic(b) => {
                t.is_leaf()
                    && matches!(
                        (b, t.value()),
                        (BasicType::Int, Some(Value::Int(_)))
                            | (BasicType::Str, Some(Value::Str(_)))
                            | (BasicType::Bool, Some(Value::Bool(_)))
                            | (BasicType::Loc, Some(Value::Loc(_)))
                    )
            }
            CarriedType::Record(fs) => {
                t.value().is_none() && fs.iter().all(|(k, u)| t.child(k).is_some_and(|c| u.types_tree(c)))
            }
        }
    }

    /// The type reached by following `segments` through record fields.
    pub fn field(&self, segments: &[String]) -> Option<&CarriedType> {
        let mut cur = self;
        for s in segments {
            match cur {
                CarriedType::Record(fs) => cur = fs.get(s)?,
                CarriedType::Basic(_) => return None,
            }
        }
        Some(cur)
    }
}

impl fmt::Display for CarriedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CarriedType::Basic(BasicType::Int) => f.write_str("int"),
            CarriedType::Basic(BasicType::Str) => f.write_str("str"),
            CarriedType::Basic(BasicType::Bool) => f.write_str("bool"),
            CarriedType::Basic(BasicType::Loc) => f.write_str("loc"),
            CarriedType::Record(fs) => {
                f.write_str("{")?;
                for (i, (k, u)) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {u}")?;
                }
                f.write_str("}")
            }
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct GBranch {
    pub op: Op,
    pub ty: CarriedType,
    pub cont: GlobalType,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum GlobalType {
    Comm {
        from: Role,
        to: Role,
        branches: Vec<GBranch>,
    },
    /// A message sent but not yet consumed (runtime types only).
    Pending {
        from: Role,
        to: Role,
        op: Op,
        ty: CarriedType,
        cont: Box<GlobalType>,
    },
    Rec(String, Box<GlobalType>),
    Var(String),
    End,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LBranch {
    pub op: Op,
    pub ty: CarriedType,
    pub cont: LocalType,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum LocalType {
    Send { to: Role, branches: Vec<LBranch> },
    Recv { from: Role, branches: Vec<LBranch> },
    Rec(String, Box<LocalType>),
    Var(String),
    End,
}

/// One message in a buffer typing: `?A.o(U)`.
pub type BufferType = Vec<(Op, CarriedType)>;

/// A transition of a global type.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum GAction {
    Send { from: Role, to: Role, op: Op },
    Recv { from: Role, to: Role, op: Op },
}

impl GAction {
    fn active(&self) -> &Role {
        match self {
            GAction::Send { from, .. } => from,
            GAction::Recv { to, .. } => to,
        }
    }
}

impl fmt::Display for GAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GAction::Send { from, to, op } => write!(f, "{from}!{to}.{op}"),
            GAction::Recv { from, to, op } => write!(f, "{to}?{from}.{op}"),
        }
    }
}

impl GlobalType {
    pub fn comm(from: &str, to: &str, branches: Vec<(&str, CarriedType, GlobalType)>) -> Self {
        GlobalType::Comm {
            from: Role::new(from),
            to: Role::new(to),
            branches: branches.into_iter().map(|(o, ty, cont)| GBranch { op: Op::new(o), ty, cont }).collect(),
        }
    }

    pub fn roles(&self) -> BTreeSet<Role> {
        let mut out = BTreeSet::new();
        self.collect_roles(&mut out);
        out
    }

    fn collect_roles(&self, out: &mut BTreeSet<Role>) {
        match self {
            GlobalType::Comm { from, to, branches } => {
                out.insert(from.clone());
                out.insert(to.clone());
                branches.iter().for_each(|b| b.cont.collect_roles(out));
            }
            GlobalType::Pending { from, to, cont, .. } => {
                out.insert(from.clone());
                out.insert(to.clone());
                cont.collect_roles(out);
            }
            GlobalType::Rec(_, g) => g.collect_roles(out),
            GlobalType::Var(_) | GlobalType::End => {}
        }
    }

    pub fn has_pending(&self) -> bool {
        match self {
            GlobalType::Pending { .. } => true,
            GlobalType::Comm { branches, .. } => branches.iter().any(|b| b.cont.has_pending()),
            GlobalType::Rec(_, g) => g.has_pending(),
            GlobalType::Var(_) | GlobalType::End => false,
        }
    }

    fn subst(&self, t: &str, with: &GlobalType) -> GlobalType {
        match self {
            GlobalType::Var(s) if s == t => with.clone(),
            GlobalType::Var(_) | GlobalType::End => self.clone(),
            GlobalType::Rec(s, _) if s == t => self.clone(),
            GlobalType::Rec(s, g) => GlobalType::Rec(s.clone(), Box::new(g.subst(t, with))),
            GlobalType::Comm { from, to, branches } => GlobalType::Comm {
                from: from.clone(),
                to: to.clone(),
                branches: branches
                    .iter()
                    .map(|b| GBranch { op: b.op.clone(), ty: b.ty.clone(), cont: b.cont.subst(t, with) })
                    .collect(),
            },
            GlobalType::Pending { from, to, op, ty, cont } => GlobalType::Pending {
                from: from.clone(),
                to: to.clone(),
                op: op.clone(),
                ty: ty.clone(),
                cont: Box::new(cont.subst(t, with)),
            },
        }
    }

    /// Unfolds top-level recursion until the head is not `rec`.
    pub fn unfold(&self) -> GlobalType {
        let mut cur = self.clone();
        let mut guard = 0;
        while let GlobalType::Rec(t, g) = &cur {
            let next = g.subst(t, &cur);
            cur = next;
            guard += 1;
            if guard > 64 {
                break;
            }
        }
        cur
    }

    /// `⟦G⟧A`.
    pub fn project(&self, role: &Role) -> Result<LocalType, ProjectionError> {
        match self {
            GlobalType::End => Ok(LocalType::End),
            GlobalType::Var(t) => Ok(LocalType::Var(t.clone())),
            GlobalType::Rec(t, g) => {
                if !g.roles().contains(role) {
                    return Ok(LocalType::End);
                }
                let body = g.project(role)?;
                Ok(match body {
                    LocalType::Var(ref s) if s == t => LocalType::End,
                    b => LocalType::Rec(t.clone(), Box::new(b)),
                })
            }
            GlobalType::Pending { from, to, op, ty, cont } => {
                let c = cont.project(role)?;
                if to == role {
                    Ok(LocalType::Recv {
                        from: from.clone(),
                        branches: vec![LBranch { op: op.clone(), ty: ty.clone(), cont: c }],
                    })
                } else {
                    Ok(c)
                }
            }
            GlobalType::Comm { from, to, branches } => {
                let mut lbs = Vec::with_capacity(branches.len());
                for b in branches {
                    lbs.push(LBranch { op: b.op.clone(), ty: b.ty.clone(), cont: b.cont.project(role)? });
                }
                if from == role {
                    Ok(LocalType::send(to.clone(), lbs))
                } else if to == role {
                    Ok(LocalType::recv(from.clone(), lbs))
                } else {
                    let mut it = lbs.into_iter().map(|b| b.cont);
                    let first = it.next().unwrap_or(LocalType::End);
                    it.try_fold(first, |acc, t| {
                        acc.merge(&t).ok_or_else(|| ProjectionError::Unmergeable {
                            role: role.clone(),
                            left: acc.to_string(),
                            right: t.to_string(),
                        })
                    })
                }
            }
        }
    }

    /// `⟦G⟧B^A`: the pending messages from `sender` to `receiver`, in order.
    /// `None` when the branches of a choice disagree on them.
    pub fn buffer_projection(&self, receiver: &Role, sender: &Role) -> Option<BufferType> {
        match self {
            GlobalType::Pending { from, to, op, ty, cont } => {
                let mut rest = cont.buffer_projection(receiver, sender)?;
                if from == sender && to == receiver {
                    rest.insert(0, (op.clone(), ty.clone()));
                }
                Some(rest)
            }
            GlobalType::Comm { branches, .. } => {
                let mut out: Option<BufferType> = None;
                for b in branches {
                    let p = b.cont.buffer_projection(receiver, sender)?;
                    match &out {
                        None => out = Some(p),
                        Some(q) if *q == p => {}
                        Some(_) => return None,
                    }
                }
                Some(out.unwrap_or_default())
            }
            GlobalType::Rec(..) | GlobalType::Var(_) | GlobalType::End => Some(Vec::new()),
        }
    }

    /// All one-step successors, with lifting of independent actions past
    /// communications and pending receptions.
    pub fn step(&self) -> Vec<(GAction, GlobalType)> {
        self.step_guarded(&mut Vec::new())
    }

    fn step_guarded(&self, seen: &mut Vec<GlobalType>) -> Vec<(GAction, GlobalType)> {
        match self {
            GlobalType::End | GlobalType::Var(_) => Vec::new(),
            GlobalType::Rec(..) => {
                if seen.contains(self) {
                    return Vec::new();
                }
                seen.push(self.clone());
                let out = self.unfold().step_guarded(seen);
                seen.pop();
                out
            }
            GlobalType::Pending { from, to, op, ty, cont } => {
                let mut out =
                    vec![(GAction::Recv { from: from.clone(), to: to.clone(), op: op.clone() }, (**cont).clone())];
                for (a, r) in cont.step_guarded(seen) {
                    if a.active() != to {
                        out.push((
                            a,
                            GlobalType::Pending {
                                from: from.clone(),
                                to: to.clone(),
                                op: op.clone(),
                                ty: ty.clone(),
                                cont: Box::new(r),
                            },
                        ));
                    }
                }
                out
            }
            GlobalType::Comm { from, to, branches } => {
                let mut out = Vec::new();
                for b in branches {
                    out.push((
                        GAction::Send { from: from.clone(), to: to.clone(), op: b.op.clone() },
                        GlobalType::Pending {
                            from: from.clone(),
                            to: to.clone(),
                            op: b.op.clone(),
                            ty: b.ty.clone(),
                            cont: Box::new(b.cont.clone()),
                        },
                    ));
                }
                let per_branch: Vec<Vec<(GAction, GlobalType)>> =
                    branches.iter().map(|b| b.cont.step_guarded(seen)).collect();
                if let Some(first) = per_branch.first() {
                    let mut labels: Vec<&GAction> = first.iter().map(|(a, _)| a).collect();
                    labels.sort();
                    labels.dedup();
                    for a in labels {
                        if a.active() == from || a.active() == to {
                            continue;
                        }
                        let choices: Vec<Vec<&GlobalType>> = per_branch
                            .iter()
                            .map(|v| v.iter().filter(|(b, _)| b == a).map(|(_, r)| r).collect())
                            .collect();
                        if choices.iter().any(Vec::is_empty) {
                            continue;
                        }
                        for combo in cartesian(&choices) {
                            let bs = branches
                                .iter()
                                .zip(combo)
                                .map(|(b, r)| GBranch { op: b.op.clone(), ty: b.ty.clone(), cont: r.clone() })
                                .collect();
                            out.push((
                                a.clone(),
                                GlobalType::Comm { from: from.clone(), to: to.clone(), branches: bs },
                            ));
                        }
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn cartesian<'a, T>(choices: &[Vec<&'a T>]) -> Vec<Vec<&'a T>> {
    let mut acc: Vec<Vec<&T>> = vec![Vec::new()];
    for c in choices {
        let mut next = Vec::new();
        for prefix in &acc {
            for x in c {
                let mut v = prefix.clone();
                v.push(*x);
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProjectionError {
    #[error("cannot merge the behaviours of role {role}: {left} and {right}")]
    Unmergeable { role: Role, left: String, right: String },
}

impl LocalType {
    pub fn send(to: Role, mut branches: Vec<LBranch>) -> Self {
        branches.sort_by(|a, b| a.op.cmp(&b.op));
        LocalType::Send { to, branches }
    }

    pub fn recv(from: Role, mut branches: Vec<LBranch>) -> Self {
        branches.sort_by(|a, b| a.op.cmp(&b.op));
        LocalType::Recv { from, branches }
    }

    /// `T ⊔ T'`.
    pub fn merge(&self, other: &LocalType) -> Option<LocalType> {
        if self == other {
            return Some(self.clone());
        }
        match (self, other) {
            (LocalType::Recv { from: a, branches: x }, LocalType::Recv { from: b, branches: y }) if a == b => {
                let mut out: BTreeMap<Op, LBranch> = x.iter().map(|br| (br.op.clone(), br.clone())).collect();
                for br in y {
                    match out.get(&br.op) {
                        Some(prev) => {
                            if prev.ty != br.ty {
                                return None;
                            }
                            let cont = prev.cont.merge(&br.cont)?;
                            out.insert(br.op.clone(), LBranch { op: br.op.clone(), ty: br.ty.clone(), cont });
                        }
                        None => {
                            out.insert(br.op.clone(), br.clone());
                        }
                    }
                }
                Some(LocalType::recv(a.clone(), out.into_values().collect()))
            }
            (LocalType::Send { to: a, branches: x }, LocalType::Send { to: b, branches: y })
                if a == b && x.len() == y.len() =>
            {
                let mut bs = Vec::with_capacity(x.len());
                for (p, q) in x.iter().zip(y) {
                    if p.op != q.op || p.ty != q.ty {
                        return None;
                    }
                    bs.push(LBranch { op: p.op.clone(), ty: p.ty.clone(), cont: p.cont.merge(&q.cont)? });
                }
                Some(LocalType::send(a.clone(), bs))
            }
            (LocalType::Rec(s, a), LocalType::Rec(t, b)) if s == t => {
                Some(LocalType::Rec(s.clone(), Box::new(a.merge(b)?)))
            }
            _ => None,
        }
    }

    fn subst(&self, t: &str, with: &LocalType) -> LocalType {
        match self {
            LocalType::Var(s) if s == t => with.clone(),
            LocalType::Var(_) | LocalType::End => self.clone(),
            LocalType::Rec(s, _) if s == t => self.clone(),
            LocalType::Rec(s, g) => LocalType::Rec(s.clone(), Box::new(g.subst(t, with))),
            LocalType::Send { to, branches } => {
                LocalType::Send { to: to.clone(), branches: subst_branches(branches, t, with) }
            }
            LocalType::Recv { from, branches } => {
                LocalType::Recv { from: from.clone(), branches: subst_branches(branches, t, with) }
            }
        }
    }

    /// Unfolds top-level recursion.
    pub fn unfold(&self) -> LocalType {
        let mut cur = self.clone();
        let mut guard = 0;
        while let LocalType::Rec(t, g) = &cur {
            cur = g.subst(t, &cur);
            guard += 1;
            if guard > 64 {
                break;
            }
        }
        cur
    }

    pub fn is_end(&self) -> bool {
        matches!(self.unfold(), LocalType::End)
    }

    /// Equality up to recursion unfolding (coinductive).
    pub fn equiv(&self, other: &LocalType) -> bool {
        let mut assumed = HashSet::new();
        equiv_rec(self, other, &mut assumed)
    }
}

fn subst_branches(bs: &[LBranch], t: &str, with: &LocalType) -> Vec<LBranch> {
    bs.iter().map(|b| LBranch { op: b.op.clone(), ty: b.ty.clone(), cont: b.cont.subst(t, with) }).collect()
}

fn equiv_rec(a: &LocalType, b: &LocalType, assumed: &mut HashSet<(LocalType, LocalType)>) -> bool {
    if a == b {
        return true;
    }
    let key = (a.clone(), b.clone());
    if assumed.contains(&key) {
        return true;
    }
    assumed.insert(key);
    let (ua, ub) = (a.unfold(), b.unfold());
    match (&ua, &ub) {
        (LocalType::End, LocalType::End) => true,
        (LocalType::Var(x), LocalType::Var(y)) => x == y,
        (LocalType::Send { to: r1, branches: x }, LocalType::Send { to: r2, branches: y })
        | (LocalType::Recv { from: r1, branches: x }, LocalType::Recv { from: r2, branches: y }) => {
            std::mem::discriminant(&ua) == std::mem::discriminant(&ub)
                && r1 == r2
                && x.len() == y.len()
                && x.iter().zip(y).all(|(p, q)| p.op == q.op && p.ty == q.ty && equiv_rec(&p.cont, &q.cont, assumed))
        }
        _ => false,
    }
}

impl fmt::Display for GlobalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GlobalType::End => f.write_str("end"),
            GlobalType::Var(t) => f.write_str(t),
            GlobalType::Rec(t, g) => write!(f, "rec {t}; {g}"),
            GlobalType::Pending { from, to, op, ty, cont } => write!(f, "{from} ~> {to}: {op}({ty}); {cont}"),
            GlobalType::Comm { from, to, branches } => {
                write!(f, "{from} -> {to} {{ ")?;
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}({})", b.op, b.ty)?;
                    if b.cont != GlobalType::End {
                        write!(f, "; {}", b.cont)?;
                    }
                }
                f.write_str(" }")
            }
        }
    }
}

impl fmt::Display for LocalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalType::End => f.write_str("end"),
            LocalType::Var(t) => f.write_str(t),
            LocalType::Rec(t, g) => write!(f, "rec {t}; {g}"),
            LocalType::Send { to: r, branches } | LocalType::Recv { from: r, branches } => {
                let sym = if matches!(self, LocalType::Send { .. }) { '!' } else { '?' };
                write!(f, "{sym}{r}.{{")?;
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}({}); {}", b.op, b.ty, b.cont)?;
                }
                f.write_str("}")
            }
        }
    }
}

/// `bte(A, m̃)`: the buffer typing of a queue of messages sent by one role.
pub fn bte<'a>(queue: impl IntoIterator<Item = &'a (Op, Tree)>) -> Option<BufferType> {
    queue.into_iter().map(|(o, t)| CarriedType::of_tree(t).map(|u| (o.clone(), u))).collect()
}

/// Checks an extracted buffer typing against a declared one, message by
/// message, under width subtyping.
pub fn buffer_conforms(actual: &BufferType, declared: &BufferType) -> bool {
    actual.len() == declared.len()
        && actual.iter().zip(declared).all(|((o1, u1), (o2, u2))| o1 == o2 && u1.is_subtype_of(u2))
}

/// Renders a buffer typing as the local type it abbreviates.
pub fn buffer_to_local(sender: &Role, b: &BufferType) -> LocalType {
    b.iter().rev().fold(LocalType::End, |acc, (o, u)| LocalType::Recv {
        from: sender.clone(),
        branches: vec![LBranch { op: o.clone(), ty: u.clone(), cont: acc }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Role {
        Role::new(s)
    }

    #[test]
    fn end_projects_to_end() {
        assert_eq!(GlobalType::End.project(&r("A")).unwrap(), LocalType::End);
    }

    #[test]
    fn sender_and_receiver_projection() {
        let g = GlobalType::comm("A", "B", vec![("o", CarriedType::int(), GlobalType::End)]);
        let a = g.project(&r("A")).unwrap();
        assert_eq!(a.to_string(), "!B.{o(int); end}");
        let b = g.project(&r("B")).unwrap();
        assert_eq!(b.to_string(), "?A.{o(int); end}");
        assert_eq!(g.project(&r("C")).unwrap(), LocalType::End);
    }

    #[test]
    fn merge_unions_receive_branches() {
        let ok =
            LocalType::recv(r("A"), vec![LBranch { op: "ok".into(), ty: CarriedType::str(), cont: LocalType::End }]);
        let ko =
            LocalType::recv(r("A"), vec![LBranch { op: "ko".into(), ty: CarriedType::int(), cont: LocalType::End }]);
        let m = ok.merge(&ko).unwrap();
        assert_eq!(m.to_string(), "?A.{ko(int); end, ok(str); end}");
        assert_eq!(ok.merge(&ok), Some(ok.clone()));
        let snd =
            LocalType::send(r("A"), vec![LBranch { op: "ok".into(), ty: CarriedType::str(), cont: LocalType::End }]);
        assert_eq!(snd.merge(&ok), None);
    }

    #[test]
    fn send_step_leaves_pending() {
        let g = GlobalType::comm("A", "B", vec![("o", CarriedType::int(), GlobalType::End)]);
        let steps = g.step();
        assert_eq!(steps.len(), 1);
        assert_eq!(
            steps[0].1,
            GlobalType::Pending {
                from: r("A"),
                to: r("B"),
                op: "o".into(),
                ty: CarriedType::int(),
                cont: Box::new(GlobalType::End)
            }
        );
        assert!(GlobalType::End.step().is_empty());
    }

    #[test]
    fn pending_reception_lifts_under_unrelated_comm() {
        // A -> B { o1(int); C ~> D: o(int); end }
        let inner = GlobalType::Pending {
            from: r("C"),
            to: r("D"),
            op: "o".into(),
            ty: CarriedType::int(),
            cont: Box::new(GlobalType::End),
        };
        let g = GlobalType::comm("A", "B", vec![("o1", CarriedType::int(), inner)]);
        let labels: Vec<String> = g.step().iter().map(|(a, _)| a.to_string()).collect();
        assert!(labels.contains(&"D?C.o".to_string()));
        assert!(labels.contains(&"A!B.o1".to_string()));
    }

    #[test]
    fn buffer_projection_picks_one_pair() {
        let g = GlobalType::Pending {
            from: r("A"),
            to: r("B"),
            op: "x".into(),
            ty: CarriedType::int(),
            cont: Box::new(GlobalType::Pending {
                from: r("C"),
                to: r("B"),
                op: "y".into(),
                ty: CarriedType::int(),
                cont: Box::new(GlobalType::End),
            }),
        };
        assert_eq!(g.buffer_projection(&r("B"), &r("A")).unwrap(), vec![(Op::new("x"), CarriedType::int())]);
        assert_eq!(g.buffer_projection(&r("B"), &r("C")).unwrap(), vec![(Op::new("y"), CarriedType::int())]);
        assert_eq!(g.buffer_projection(&r("A"), &r("B")).unwrap(), vec![]);
    }

    #[test]
    fn recursion_equivalence() {
        let body = LocalType::send(
            r("B"),
            vec![LBranch { op: "o".into(), ty: CarriedType::int(), cont: LocalType::Var("t".into()) }],
        );
        let t = LocalType::Rec("t".into(), Box::new(body));
        let once = t.unfold();
        assert!(t.equiv(&once));
        assert!(!t.equiv(&LocalType::End));
    }

    #[test]
    fn width_subtyping_on_trees() {
        let u = CarriedType::record([("a", CarriedType::int())]);
        let t = Tree::node([("a", Tree::int(1)), ("b", Tree::str("x"))]);
        assert!(u.types_tree(&t));
        assert!(!CarriedType::int().types_tree(&t));
        assert_eq!(bte([].iter()), Some(vec![]));
        let q = [(Op::new("log"), Tree::str("ok"))];
        assert_eq!(bte(q.iter()), Some(vec![(Op::new("log"), CarriedType::str())]));
    }
}
