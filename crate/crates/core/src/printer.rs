//! Pretty-printing of choreographies and programs in the surface syntax
//! accepted by the parser.

use std::fmt::{self, Write};

use crate::chor::{Chor, LocProc};
use crate::program::{Program, Protocol};

fn procs(ps: &[crate::names::Proc]) -> String {
    ps.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", ")
}

fn loc_procs(ss: &[LocProc]) -> String {
    ss.iter().map(|s| format!("{}.{}[{}]", s.loc, s.proc, s.role)).collect::<Vec<_>>().join(", ")
}

fn var(v: &Option<crate::tree::Path>) -> String {
    v.as_ref().map(|x| format!("({x})")).unwrap_or_default()
}

struct Printer {
    out: String,
}

impl Printer {
    fn pad(&mut self, ind: usize) {
        for _ in 0..ind {
            self.out.push_str("  ");
        }
    }

    /// A term in a position where bare `|` is allowed.
    fn term(&mut self, c: &Chor, ind: usize) {
        match c {
            Chor::Par(l, r) => {
                self.seq(l, ind);
                self.out.push('\n');
                self.pad(ind);
                self.out.push_str("|\n");
                self.term(r, ind);
            }
            _ => self.seq(c, ind),
        }
    }

    fn cont(&mut self, c: &Chor, ind: usize) {
        if *c != Chor::Inact {
            self.out.push_str(";\n");
            self.seq(c, ind);
        }
    }

    fn seq(&mut self, c: &Chor, ind: usize) {
        self.pad(ind);
        match c {
            Chor::Inact => self.out.push('0'),
            Chor::Par(..) => {
                self.out.push_str("(\n");
                self.term(c, ind + 1);
                self.out.push('\n');
                self.pad(ind);
                self.out.push(')');
            }
            Chor::Start { k, starter, role, services, cont } => {
                let _ = write!(self.out, "start {k}: {starter}[{role}] <-> {}", loc_procs(services));
                self.cont(cont, ind);
            }
            Chor::Req { k, starter, role, services, cont } => {
                let ss: Vec<String> = services.iter().map(|s| format!("{}.{}", s.loc, s.role)).collect();
                let _ = write!(self.out, "req {k}: {starter}[{role}] <-> {}", ss.join(", "));
                self.cont(cont, ind);
            }
            Chor::Acc { k, services, cont } => {
                let _ = write!(self.out, "acc {k}: {}", loc_procs(services));
                self.cont(cont, ind);
            }
            Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var: v, cont } => {
                let _ = write!(
                    self.out,
                    "{k}: {sender}[{sender_role}].{} -> {receiver}[{receiver_role}].{op}{}",
                    expr.atom_string(),
                    var(v)
                );
                self.cont(cont, ind);
            }
            Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont } => {
                let _ = write!(self.out, "{k}: {sender}[{sender_role}].{} -> {receiver_role}.{op}", expr.atom_string());
                self.cont(cont, ind);
            }
            Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
                let _ = writeln!(self.out, "{k}: {sender_role} -> {receiver}[{receiver_role}] {{");
                for (i, b) in branches.iter().enumerate() {
                    self.pad(ind + 1);
                    let _ = write!(self.out, "{}{}", b.op, var(&b.var));
                    if b.cont != Chor::Inact {
                        self.out.push_str(";\n");
                        self.seq(&b.cont, ind + 2);
                    }
                    self.out.push_str(if i + 1 < branches.len() { ",\n" } else { "\n" });
                }
                self.pad(ind);
                self.out.push('}');
            }
            Chor::Cond { proc, guard, then, els } => {
                let _ = writeln!(self.out, "if {proc}.{guard} {{");
                self.term(then, ind + 1);
                self.out.push('\n');
                self.pad(ind);
                self.out.push_str("} else {\n");
                self.term(els, ind + 1);
                self.out.push('\n');
                self.pad(ind);
                self.out.push('}');
            }
            Chor::Def { name, params, body, cont } => {
                let _ = writeln!(self.out, "def {name}({}) = {{", procs(params));
                self.term(body, ind + 1);
                self.out.push('\n');
                self.pad(ind);
                self.out.push_str("} in\n");
                self.seq(cont, ind);
            }
            Chor::Call { name, args } => {
                let _ = write!(self.out, "{name}({})", procs(args));
            }
        }
    }
}

/// Prints a term at the given indentation level.
pub fn print_chor(c: &Chor, ind: usize) -> String {
    let mut p = Printer { out: String::new() };
    p.term(c, ind);
    p.out
}

impl fmt::Display for Chor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_chor(self, 0))
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let locs: Vec<&str> = self.locs.iter().map(|l| l.as_str()).collect();
        let mut roles = vec![format!("{} starter", self.starter)];
        roles.extend(self.roles.iter().map(|(r, l)| format!("{r}@{l}")));
        writeln!(f, "protocol {} at {} roles {} {{", self.name, locs.join(", "), roles.join(", "))?;
        writeln!(f, "  {}", self.global)?;
        write!(f, "}}")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.protocols {
            writeln!(f, "{p}\n")?;
        }
        if !self.placements.is_empty() {
            writeln!(f, "deployment {{")?;
            for (p, l) in &self.placements {
                writeln!(f, "  {p} @ {l};")?;
            }
            writeln!(f, "}}\n")?;
        }
        writeln!(f, "{}", self.chor)
    }
}
