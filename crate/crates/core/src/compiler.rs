//! Compilation of endpoint choreographies and their deployment into DCC
//! networks.

use std::collections::BTreeSet;

use crate::chor::{Chor, LocRole};
use crate::dcc::{Behaviour, DBranch, DccProcess, Network, Service, StartBehaviour};
use crate::expr::Expr;
use crate::names::{Loc, Op, Proc, Role, Session};
use crate::program::{Program, Protocol};
use crate::semantics::RunningChor;
use crate::tree::{Path, Value};

/// Reserved operation of the start handshake.
pub const SYNC: &str = "sync";
/// Reserved state label holding the starter's handshake replies.
pub const SYNC_AREA: &str = "$sync";

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("complete action in an endpoint, project first: {0}")]
    CompleteAction(String),
    #[error("parallel composition inside the endpoint of {0}")]
    Parallel(String),
    #[error("accept nested inside an endpoint: {0}")]
    NestedAccept(String),
    #[error("more than one accept at {0}")]
    MultipleAccepts(Loc),
    #[error("more than one endpoint for {0}")]
    MultipleEndpoints(Proc),
    #[error("no protocol offers {0}")]
    NoProtocol(String),
}

/// Switches that deliberately break the handshake; used to check that the
/// correspondence suites are not vacuous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mutations {
    /// Accepting processes never return their keys to the starter.
    pub skip_a3: bool,
}

fn p(segs: &[&str]) -> Path {
    Path::from_segments(segs.iter().copied())
}

fn pe(segs: &[&str]) -> Expr {
    Expr::Path(p(segs))
}

/// `C|l`: the accept offered at `l`, or `0`.
pub fn filter_by_location(c: &Chor, l: &Loc) -> Result<Chor, CompileError> {
    let found: Vec<&Chor> = c
        .components()
        .into_iter()
        .filter(|x| matches!(x, Chor::Acc { services, .. } if services.iter().any(|s| &s.loc == l)))
        .collect();
    match found.as_slice() {
        [] => Ok(Chor::Inact),
        [one] => Ok((*one).clone()),
        _ => Err(CompileError::MultipleAccepts(l.clone())),
    }
}

/// `C|p`: the endpoint whose only free process is `p`, or `0`.
pub fn filter_by_process(c: &Chor, proc: &Proc) -> Result<Chor, CompileError> {
    let want = BTreeSet::from([proc.clone()]);
    let found: Vec<&Chor> =
        c.components().into_iter().filter(|x| !matches!(x, Chor::Acc { .. }) && x.free_processes() == want).collect();
    match found.as_slice() {
        [] => Ok(Chor::Inact),
        [one] => Ok((*one).clone()),
        _ => Err(CompileError::MultipleEndpoints(proc.clone())),
    }
}

/// The handshake run by a starter before the session begins.
pub fn compile_start(k: &Session, starter: &LocRole, others: &[LocRole]) -> Behaviour {
    let k = k.as_str();
    let a = starter.role.as_str();
    let mut out = Vec::new();
    // s1
    for x in std::iter::once(starter).chain(others) {
        out.push(Behaviour::Assign(p(&[k, x.role.as_str(), "l"]), Expr::Lit(Value::Loc(x.loc.clone()))));
    }
    // s2.1
    for b in others {
        out.push(Behaviour::CQueue(p(&[k, b.role.as_str(), a])));
    }
    // s2.2
    for b in others {
        out.push(Behaviour::Request { to: pe(&[k, b.role.as_str(), "l"]), payload: pe(&[k]) });
    }
    // s2.3
    for b in others {
        let bn = b.role.as_str();
        out.push(Behaviour::Input { op: Op::new(SYNC), var: p(&[SYNC_AREA, k, bn]), from: pe(&[k, bn, a]) });
        for x in std::iter::once(starter).chain(others) {
            let xn = x.role.as_str();
            if xn != bn {
                out.push(Behaviour::Assign(p(&[k, xn, bn]), pe(&[SYNC_AREA, k, bn, xn, bn])));
            }
        }
    }
    // s3
    for b in others {
        let bn = b.role.as_str();
        out.push(Behaviour::Output {
            to: pe(&[k, bn, "l"]),
            op: Op::new(SYNC),
            payload: pe(&[k]),
            key: pe(&[k, a, bn]),
        });
    }
    Behaviour::seq_all(out)
}

/// The start behaviour of a service playing `role` in `protocol`.
pub fn compile_accept(k: &Session, role: &Role, protocol: &Protocol, body: Behaviour, m: Mutations) -> StartBehaviour {
    let k = k.as_str();
    let b = role.as_str();
    let a = protocol.starter.as_str();
    let mut out = Vec::new();
    // a2
    for x in protocol.all_roles() {
        if &x != role {
            out.push(Behaviour::CQueue(p(&[k, x.as_str(), b])));
        }
    }
    // a3
    if !m.skip_a3 {
        out.push(Behaviour::Output { to: pe(&[k, a, "l"]), op: Op::new(SYNC), payload: pe(&[k]), key: pe(&[k, b, a]) });
    }
    // a4
    out.push(Behaviour::Input { op: Op::new(SYNC), var: p(&[k]), from: pe(&[k, a, b]) });
    out.push(body);
    StartBehaviour { var: p(&[k]), body: Behaviour::seq_all(out) }
}

/// `⟦C⟧` for the endpoint of a process running at `here`.
pub fn compile_behaviour(c: &Chor, here: &Loc) -> Result<Behaviour, CompileError> {
    let bx = Box::new;
    Ok(match c {
        Chor::Inact => Behaviour::Inact,
        Chor::Start { .. } | Chor::Com { .. } => {
            return Err(CompileError::CompleteAction(c.to_string().lines().next().unwrap_or("").to_string()))
        }
        Chor::Par(..) => return Err(CompileError::Parallel(c.to_string())),
        Chor::Acc { .. } => {
            return Err(CompileError::NestedAccept(c.to_string().lines().next().unwrap_or("").to_string()))
        }
        Chor::Req { k, role, services, cont, .. } => Behaviour::seq(
            compile_start(k, &LocRole { loc: here.clone(), role: role.clone() }, services),
            compile_behaviour(cont, here)?,
        ),
        Chor::Send { k, sender_role, expr, receiver_role, op, cont, .. } => {
            let (k, a, b) = (k.as_str(), sender_role.as_str(), receiver_role.as_str());
            Behaviour::seq(
                Behaviour::Output { to: pe(&[k, b, "l"]), op: op.clone(), payload: expr.clone(), key: pe(&[k, a, b]) },
                compile_behaviour(cont, here)?,
            )
        }
        Chor::Recv { k, sender_role, receiver_role, branches, .. } => {
            let mut bs = Vec::with_capacity(branches.len());
            for b in branches {
                bs.push(DBranch { op: b.op.clone(), var: b.var.clone(), cont: compile_behaviour(&b.cont, here)? });
            }
            Behaviour::Choice { from: pe(&[k.as_str(), sender_role.as_str(), receiver_role.as_str()]), branches: bs }
        }
        Chor::Cond { guard, then, els, .. } => Behaviour::Cond {
            guard: guard.clone(),
            then: bx(compile_behaviour(then, here)?),
            els: bx(compile_behaviour(els, here)?),
        },
        Chor::Def { name, body, cont, .. } => Behaviour::Def {
            name: name.clone(),
            body: bx(compile_behaviour(body, here)?),
            cont: bx(compile_behaviour(cont, here)?),
        },
        Chor::Call { name, .. } => Behaviour::Call(name.clone()),
    }
    .normalize())
}

/// The start behaviour of the service at `l`.
pub fn compile_service_start(
    program: &Program,
    c: &Chor,
    l: &Loc,
    m: Mutations,
) -> Result<Option<StartBehaviour>, CompileError> {
    match filter_by_location(c, l)? {
        Chor::Acc { k, services, cont } => {
            let s = services.iter().find(|s| &s.loc == l).unwrap();
            let lr = s.loc_role();
            let proto = program
                .protocol_for_acc(std::slice::from_ref(&lr))
                .ok_or_else(|| CompileError::NoProtocol(format!("{}.{}", lr.loc, lr.role)))?;
            Ok(Some(compile_accept(&k, &s.role, proto, compile_behaviour(&cont, l)?, m)))
        }
        _ => Ok(None),
    }
}

/// `⟦D, C⟧`: one service per location, each with the compiled accept as
/// start behaviour and the compiled endpoints of the processes it hosts.
pub fn compile_network(program: &Program, s: &RunningChor, m: Mutations) -> Result<Network, CompileError> {
    let mut locs = program.locations();
    locs.extend(s.d.locs.keys().cloned());
    let mut net = Network::default();
    for l in locs {
        let start = compile_service_start(program, &s.c, &l, m)?;
        let mut processes = Vec::new();
        for proc in s.d.locs.get(&l).into_iter().flatten() {
            let e = &s.d.procs[proc];
            processes.push(DccProcess {
                behaviour: compile_behaviour(&filter_by_process(&s.c, proc)?, &l)?,
                state: e.state.clone(),
                queues: e.queues.clone(),
            });
        }
        net.services.insert(l, Service { start, processes });
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_chor;

    fn lr(l: &str, r: &str) -> LocRole {
        LocRole { loc: Loc::new(l), role: Role::new(r) }
    }

    fn count(b: &Behaviour, pred: impl Fn(&Behaviour) -> bool) -> usize {
        let mut n = 0;
        b.visit(&mut |x| n += pred(x) as usize);
        n
    }

    #[test]
    fn inaction_compiles_to_inaction() {
        assert_eq!(compile_behaviour(&Chor::Inact, &Loc::new("l")).unwrap(), Behaviour::Inact);
        assert_eq!(filter_by_location(&Chor::Inact, &Loc::new("l")).unwrap(), Chor::Inact);
        assert_eq!(filter_by_process(&Chor::Inact, &Proc::new("p")).unwrap(), Chor::Inact);
    }

    #[test]
    fn minimal_start_handshake() {
        let b = compile_start(&Session::new("k"), &lr("l1", "A"), &[lr("l2", "B")]);
        assert_eq!(count(&b, |x| matches!(x, Behaviour::CQueue(_))), 1);
        assert_eq!(count(&b, |x| matches!(x, Behaviour::Request { .. })), 1);
        assert_eq!(count(&b, |x| matches!(x, Behaviour::Input { op, .. } if op.as_str() == SYNC)), 1);
        assert_eq!(count(&b, |x| matches!(x, Behaviour::Output { .. })), 1);
    }

    #[test]
    fn send_and_recv_use_descriptor_paths() {
        let c = parse_chor("k: p[A].x -> B.o; k: B -> p[A] { r(y) }").unwrap();
        let b = compile_behaviour(&c, &Loc::new("l")).unwrap();
        let text = b.to_string();
        assert!(text.starts_with("send o(x) to k.B.l key k.A.B;\nchoice from k.B.A {"), "{text}");
    }

    #[test]
    fn complete_actions_are_rejected() {
        let c = parse_chor("k: p[A].1 -> q[B].o(x)").unwrap();
        assert!(matches!(compile_behaviour(&c, &Loc::new("l")), Err(CompileError::CompleteAction(_))));
    }

    #[test]
    fn filter_by_process_skips_bound_processes() {
        let c = parse_chor("acc k: l.q[B]; k: A -> q[B] { o(x) }").unwrap();
        assert_eq!(filter_by_process(&c, &Proc::new("q")).unwrap(), Chor::Inact);
        assert!(matches!(filter_by_location(&c, &Loc::new("l")).unwrap(), Chor::Acc { .. }));
        assert_eq!(filter_by_location(&c, &Loc::new("l2")).unwrap(), Chor::Inact);
    }
}
