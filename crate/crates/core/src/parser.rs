//! Lexer and recursive-descent parsers for `.ac` programs, global types and
//! `.dcc` networks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::chor::{Branch, Chor, LocProc, LocRole};
use crate::dcc::{Behaviour, DBranch, DccProcess, Network, Service, StartBehaviour};
use crate::deployment::QueueMap;
use crate::expr::{BinOp, Expr};
use crate::names::{Loc, NameKind, Op, Proc, ProcName, Role, Session};
use crate::program::{Program, Protocol};
use crate::tree::{Path, Tree, Value};
use crate::types::{BasicType, CarriedType, GBranch, GlobalType};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("name `{name}` is used both as a {first} and as a {second}")]
    KindClash { name: String, first: NameKind, second: NameKind },
    #[error("acc on session {0} is not at top level")]
    GuardedAcc(String),
    #[error("reception on session {k} lists operation {op} twice")]
    DuplicateBranch { k: String, op: String },
    #[error("{0}")]
    BadServices(String),
    #[error("no protocol declared for {0}")]
    NoProtocol(String),
    #[error("protocol {name}: {msg}")]
    BadProtocol { name: String, msg: String },
}

type R<T> = Result<T, ParseError>;

/// Reserved words. They may still be used as operation names and as path
/// labels after a dot.
pub const KEYWORDS: &[&str] = &[
    "start",
    "req",
    "acc",
    "if",
    "else",
    "def",
    "in",
    "true",
    "false",
    "and",
    "or",
    "protocol",
    "at",
    "roles",
    "starter",
    "rec",
    "end",
    "deployment",
    "recv",
    "from",
    "send",
    "to",
    "key",
    "choice",
    "request",
    "cqueue",
    "call",
    "service",
    "processes",
    "process",
    "state",
    "queues",
    "none",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

const PUNCT: &[&str] =
    &["<->", "->", "~>", ":=", "!=", ":", ";", ",", ".", "(", ")", "{", "}", "[", "]", "|", "=", "<", "+", "-", "@"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i128),
    Str(String),
    Punct(&'static str),
    Bad(String),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    start: usize,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0, line: 1, col: 1 }
    }

    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_char2(&self) -> Option<char> {
        self.src[self.pos..].chars().nth(1)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek_char()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    /// Moves to a byte offset on the current line structure.
    fn seek(&mut self, to: usize) {
        while self.pos < to {
            self.bump();
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Token {
        self.skip_trivia();
        let (line, col, start) = (self.line, self.col, self.pos);
        let tok = self.lex_one();
        Token { tok, line, col, start }
    }

    fn lex_one(&mut self) -> Tok {
        let Some(c) = self.peek_char() else { return Tok::Eof };
        if c.is_ascii_alphabetic() || c == '$' {
            let mut s = String::new();
            s.push(self.bump().unwrap());
            while let Some(c) = self.peek_char() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            if s == "$" {
                return Tok::Bad("lone `$`".into());
            }
            if self.peek_char() == Some('#') && self.peek_char2().is_some_and(|d| d.is_ascii_digit()) {
                s.push(self.bump().unwrap());
                while let Some(d) = self.peek_char().filter(|d| d.is_ascii_digit()) {
                    s.push(d);
                    self.bump();
                }
            }
            return Tok::Ident(s);
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(d) = self.peek_char().filter(|d| d.is_ascii_digit()) {
                s.push(d);
                self.bump();
            }
            return match s.parse::<i128>() {
                Ok(n) => Tok::Int(n),
                Err(_) => Tok::Bad(format!("integer literal {s} is too large")),
            };
        }
        if c == '"' {
            self.bump();
            return self.lex_string();
        }
        for p in PUNCT {
            if self.src[self.pos..].starts_with(p) {
                for _ in 0..p.len() {
                    self.bump();
                }
                return Tok::Punct(p);
            }
        }
        self.bump();
        Tok::Bad(format!("unexpected character {c:?}"))
    }

    fn lex_string(&mut self) -> Tok {
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Tok::Bad("unterminated string".into()),
                Some('"') => return Tok::Str(s),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    Some('0') => s.push('\0'),
                    Some(c @ ('\\' | '"' | '\'')) => s.push(c),
                    Some('u') => {
                        if self.bump() != Some('{') {
                            return Tok::Bad("malformed unicode escape".into());
                        }
                        let mut hex = String::new();
                        loop {
                            match self.bump() {
                                Some('}') => break,
                                Some(h) if h.is_ascii_hexdigit() => hex.push(h),
                                _ => return Tok::Bad("malformed unicode escape".into()),
                            }
                        }
                        match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            Some(ch) => s.push(ch),
                            None => return Tok::Bad("invalid unicode escape".into()),
                        }
                    }
                    other => return Tok::Bad(format!("unknown escape {other:?}")),
                },
                Some(c) => s.push(c),
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(n) => format!("`{n}`"),
        Tok::Str(s) => format!("{s:?}"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Bad(m) => m.clone(),
        Tok::Eof => "end of input".into(),
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    buf: VecDeque<Token>,
    allow_dollar: bool,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, allow_dollar: bool) -> Self {
        Parser { lex: Lexer::new(src), buf: VecDeque::new(), allow_dollar }
    }

    fn fill(&mut self, n: usize) {
        while self.buf.len() <= n {
            let t = self.lex.next_token();
            self.buf.push_back(t);
        }
    }

    fn peek_tok(&mut self, n: usize) -> &Token {
        self.fill(n);
        &self.buf[n]
    }

    fn peek(&mut self) -> &Tok {
        &self.peek_tok(0).tok
    }

    fn peek_at(&mut self, n: usize) -> &Tok {
        &self.peek_tok(n).tok
    }

    fn next(&mut self) -> Token {
        self.fill(0);
        self.buf.pop_front().unwrap()
    }

    fn error<T>(&mut self, msg: impl Into<String>) -> R<T> {
        let t = self.peek_tok(0).clone();
        let msg = match &t.tok {
            Tok::Bad(m) => m.clone(),
            other => format!("{}, found {}", msg.into(), describe(other)),
        };
        Err(ParseError::Syntax { line: t.line, col: t.col, msg })
    }

    fn is_punct(&mut self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> R<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.error(format!("expected `{p}`"))
        }
    }

    fn is_kw(&mut self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> R<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.error(format!("expected `{kw}`"))
        }
    }

    fn at_eof(&mut self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    /// Any identifier, keywords included.
    fn label(&mut self) -> R<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                if s.starts_with('$') && !self.allow_dollar {
                    return self.error("`$` names are reserved");
                }
                self.next();
                Ok(s)
            }
            _ => self.error("expected a name"),
        }
    }

    /// A non-keyword identifier.
    fn ident(&mut self) -> R<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => self.label(),
            Tok::Ident(s) => self.error(format!("`{s}` is reserved; expected a name")),
            _ => self.error("expected a name"),
        }
    }

    fn path(&mut self) -> R<Path> {
        let mut segs = vec![self.ident()?];
        while self.is_punct(".") && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.next();
            segs.push(self.label()?);
        }
        Ok(Path(segs))
    }

    fn proc_name(&mut self) -> R<ProcName> {
        let mut x = self.ident()?;
        if self.eat_punct("@") {
            x.push('@');
            x.push_str(&self.ident()?);
        }
        Ok(ProcName::new(x))
    }

    // ---- expressions

    fn expr(&mut self) -> R<Expr> {
        self.bin(0)
    }

    fn bin(&mut self, min: u8) -> R<Expr> {
        let mut lhs = self.primary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                Tok::Punct("=") => BinOp::Eq,
                Tok::Punct("!=") => BinOp::Ne,
                Tok::Punct("<") => BinOp::Lt,
                Tok::Ident(s) if s == "and" => BinOp::And,
                Tok::Ident(s) if s == "or" => BinOp::Or,
                _ => break,
            };
            let p = op.precedence();
            if p < min {
                break;
            }
            self.next();
            let rhs = self.bin(p + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn int_lit(&mut self, n: i128) -> R<Expr> {
        match i64::try_from(n) {
            Ok(i) => Ok(Expr::Lit(Value::Int(i))),
            Err(_) => self.error("integer literal out of range"),
        }
    }

    fn primary(&mut self) -> R<Expr> {
        match self.peek().clone() {
            Tok::Int(n) => {
                let e = self.int_lit(n)?;
                self.next();
                Ok(e)
            }
            Tok::Punct("-") if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.next();
                let Tok::Int(n) = self.peek().clone() else { unreachable!() };
                let e = self.int_lit(-n)?;
                self.next();
                Ok(e)
            }
            Tok::Str(s) => {
                self.next();
                Ok(Expr::Lit(Value::Str(s)))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.next();
                Ok(Expr::Lit(Value::Bool(s == "true")))
            }
            Tok::Punct("@") => {
                self.next();
                Ok(Expr::Lit(Value::Loc(Loc::new(self.ident()?))))
            }
            Tok::Punct("(") => {
                self.next();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Punct("{") => {
                self.next();
                let mut fields = BTreeMap::new();
                if !self.eat_punct("}") {
                    loop {
                        let l = self.label()?;
                        self.expect_punct(":")?;
                        let e = self.expr()?;
                        if fields.insert(l.clone(), e).is_some() {
                            return self.error(format!("field `{l}` given twice"));
                        }
                        if self.eat_punct("}") {
                            break;
                        }
                        self.expect_punct(",")?;
                    }
                }
                Ok(Expr::Record(fields))
            }
            Tok::Ident(_) => Ok(Expr::Path(self.path()?)),
            _ => self.error("expected an expression"),
        }
    }

    // ---- choreographies

    fn term(&mut self) -> R<Chor> {
        let mut cs = vec![self.seq()?];
        while self.eat_punct("|") {
            cs.push(self.seq()?);
        }
        Ok(Chor::par_all(cs))
    }

    fn cont(&mut self) -> R<Box<Chor>> {
        if self.eat_punct(";") {
            Ok(Box::new(self.seq()?))
        } else {
            Ok(Box::new(Chor::Inact))
        }
    }

    fn proc_role(&mut self) -> R<(Proc, Role)> {
        let p = Proc::new(self.ident()?);
        self.expect_punct("[")?;
        let r = Role::new(self.ident()?);
        self.expect_punct("]")?;
        Ok((p, r))
    }

    fn loc_proc(&mut self) -> R<LocProc> {
        let l = Loc::new(self.ident()?);
        self.expect_punct(".")?;
        let (proc, role) = self.proc_role()?;
        Ok(LocProc { loc: l, proc, role })
    }

    fn list<T>(&mut self, mut item: impl FnMut(&mut Self) -> R<T>) -> R<Vec<T>> {
        let mut out = vec![item(self)?];
        while self.eat_punct(",") {
            out.push(item(self)?);
        }
        Ok(out)
    }

    fn procs_in_parens(&mut self) -> R<Vec<Proc>> {
        self.expect_punct("(")?;
        let mut out = Vec::new();
        if !self.eat_punct(")") {
            out = self.list(|p| Ok(Proc::new(p.ident()?)))?;
            self.expect_punct(")")?;
        }
        Ok(out)
    }

    fn opt_var(&mut self) -> R<Option<Path>> {
        if self.eat_punct("(") {
            if self.eat_punct(")") {
                return Ok(None);
            }
            let x = self.path()?;
            self.expect_punct(")")?;
            Ok(Some(x))
        } else {
            Ok(None)
        }
    }

    fn seq(&mut self) -> R<Chor> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.next();
                Ok(Chor::Inact)
            }
            Tok::Punct("(") => {
                self.next();
                let t = self.term()?;
                self.expect_punct(")")?;
                Ok(t)
            }
            Tok::Ident(s) if s == "start" => {
                self.next();
                let k = Session::new(self.ident()?);
                self.expect_punct(":")?;
                let (starter, role) = self.proc_role()?;
                self.expect_punct("<->")?;
                let services = self.list(|p| p.loc_proc())?;
                let cont = self.cont()?;
                Ok(Chor::Start { k, starter, role, services, cont })
            }
            Tok::Ident(s) if s == "req" => {
                self.next();
                let k = Session::new(self.ident()?);
                self.expect_punct(":")?;
                let (starter, role) = self.proc_role()?;
                self.expect_punct("<->")?;
                let services = self.list(|p| {
                    let loc = Loc::new(p.ident()?);
                    p.expect_punct(".")?;
                    Ok(LocRole { loc, role: Role::new(p.ident()?) })
                })?;
                let cont = self.cont()?;
                Ok(Chor::Req { k, starter, role, services, cont })
            }
            Tok::Ident(s) if s == "acc" => {
                self.next();
                let k = Session::new(self.ident()?);
                self.expect_punct(":")?;
                let services = self.list(|p| p.loc_proc())?;
                let cont = self.cont()?;
                Ok(Chor::Acc { k, services, cont })
            }
            Tok::Ident(s) if s == "if" => {
                self.next();
                let proc = Proc::new(self.ident()?);
                self.expect_punct(".")?;
                let guard = self.expr()?;
                self.expect_punct("{")?;
                let then = self.term()?;
                self.expect_punct("}")?;
                self.expect_kw("else")?;
                self.expect_punct("{")?;
                let els = self.term()?;
                self.expect_punct("}")?;
                Ok(Chor::Cond { proc, guard, then: Box::new(then), els: Box::new(els) })
            }
            Tok::Ident(s) if s == "def" => {
                self.next();
                let name = self.proc_name()?;
                let params = self.procs_in_parens()?;
                self.expect_punct("=")?;
                self.expect_punct("{")?;
                let body = self.term()?;
                self.expect_punct("}")?;
                self.expect_kw("in")?;
                let cont = self.seq()?;
                Ok(Chor::Def { name, params, body: Box::new(body), cont: Box::new(cont) })
            }
            Tok::Ident(s) if !is_keyword(&s) => match self.peek_at(1) {
                Tok::Punct("(") | Tok::Punct("@") => {
                    let name = self.proc_name()?;
                    let args = self.procs_in_parens()?;
                    Ok(Chor::Call { name, args })
                }
                Tok::Punct(":") => self.interaction(),
                _ => {
                    self.next();
                    self.error("expected `:` or `(` after a name")
                }
            },
            _ => self.error("expected a choreography"),
        }
    }

    fn interaction(&mut self) -> R<Chor> {
        let k = Session::new(self.ident()?);
        self.expect_punct(":")?;
        if matches!(self.peek_at(1), Tok::Punct("->")) {
            let sender_role = Role::new(self.ident()?);
            self.expect_punct("->")?;
            let (receiver, receiver_role) = self.proc_role()?;
            self.expect_punct("{")?;
            let branches = self.list(|p| {
                let op = Op::new(p.label()?);
                let var = p.opt_var()?;
                let cont = *p.cont()?;
                Ok(Branch { op, var, cont })
            })?;
            self.expect_punct("}")?;
            return Ok(Chor::Recv { k, sender_role, receiver, receiver_role, branches });
        }
        let (sender, sender_role) = self.proc_role()?;
        self.expect_punct(".")?;
        let expr = self.expr()?;
        self.expect_punct("->")?;
        if matches!(self.peek_at(1), Tok::Punct("[")) {
            let (receiver, receiver_role) = self.proc_role()?;
            self.expect_punct(".")?;
            let op = Op::new(self.label()?);
            let var = self.opt_var()?;
            let cont = self.cont()?;
            Ok(Chor::Com { k, sender, sender_role, expr, receiver, receiver_role, op, var, cont })
        } else {
            let receiver_role = Role::new(self.ident()?);
            self.expect_punct(".")?;
            let op = Op::new(self.label()?);
            let cont = self.cont()?;
            Ok(Chor::Send { k, sender, sender_role, expr, receiver_role, op, cont })
        }
    }

    // ---- protocols

    fn carried(&mut self) -> R<CarriedType> {
        if self.eat_punct("{") {
            let mut fs = BTreeMap::new();
            if !self.eat_punct("}") {
                loop {
                    let l = self.label()?;
                    self.expect_punct(":")?;
                    let u = self.carried()?;
                    if fs.insert(l.clone(), u).is_some() {
                        return self.error(format!("field `{l}` given twice"));
                    }
                    if self.eat_punct("}") {
                        break;
                    }
                    self.expect_punct(",")?;
                }
            }
            return Ok(CarriedType::Record(fs));
        }
        let b = match self.peek() {
            Tok::Ident(s) if s == "int" => BasicType::Int,
            Tok::Ident(s) if s == "str" || s == "string" => BasicType::Str,
            Tok::Ident(s) if s == "bool" => BasicType::Bool,
            Tok::Ident(s) if s == "loc" => BasicType::Loc,
            _ => return self.error("expected a type"),
        };
        self.next();
        Ok(CarriedType::Basic(b))
    }

    fn global(&mut self) -> R<GlobalType> {
        if self.eat_kw("end") {
            return Ok(GlobalType::End);
        }
        if self.eat_kw("rec") {
            let t = self.ident()?;
            self.expect_punct(";")?;
            return Ok(GlobalType::Rec(t, Box::new(self.global()?)));
        }
        let name = self.ident()?;
        if self.eat_punct("->") {
            let to = Role::new(self.ident()?);
            self.expect_punct("{")?;
            let branches = self.list(|p| {
                let op = Op::new(p.label()?);
                p.expect_punct("(")?;
                let ty = p.carried()?;
                p.expect_punct(")")?;
                let cont = if p.eat_punct(";") { p.global()? } else { GlobalType::End };
                Ok(GBranch { op, ty, cont })
            })?;
            self.expect_punct("}")?;
            let mut ops = BTreeSet::new();
            for b in &branches {
                if !ops.insert(b.op.clone()) {
                    return self.error(format!("operation {} offered twice", b.op));
                }
            }
            return Ok(GlobalType::Comm { from: Role::new(name), to, branches });
        }
        if self.eat_punct("~>") {
            let to = Role::new(self.ident()?);
            self.expect_punct(":")?;
            let op = Op::new(self.label()?);
            self.expect_punct("(")?;
            let ty = self.carried()?;
            self.expect_punct(")")?;
            let cont = if self.eat_punct(";") { self.global()? } else { GlobalType::End };
            return Ok(GlobalType::Pending { from: Role::new(name), to, op, ty, cont: Box::new(cont) });
        }
        Ok(GlobalType::Var(name))
    }

    fn protocol(&mut self) -> R<Protocol> {
        self.expect_kw("protocol")?;
        let name = self.ident()?;
        self.expect_kw("at")?;
        let mut locs = self.list(|p| Ok(Loc::new(p.ident()?)))?;
        self.expect_kw("roles")?;
        let mut starter = None;
        let mut roles = BTreeMap::new();
        let entries = self.list(|p| {
            let r = Role::new(p.ident()?);
            if p.eat_kw("starter") {
                Ok((r, None))
            } else {
                p.expect_punct("@")?;
                Ok((r, Some(Loc::new(p.ident()?))))
            }
        })?;
        for (r, l) in entries {
            match l {
                None if starter.is_none() => starter = Some(r),
                None => return Err(bad_protocol(&name, "more than one starter role")),
                Some(l) => {
                    if roles.insert(r.clone(), l).is_some() {
                        return Err(bad_protocol(&name, &format!("role {r} declared twice")));
                    }
                }
            }
        }
        let Some(starter) = starter else { return Err(bad_protocol(&name, "no starter role")) };
        if roles.contains_key(&starter) {
            return Err(bad_protocol(&name, &format!("role {starter} declared twice")));
        }
        self.expect_punct("{")?;
        let global = self.global()?;
        self.expect_punct("}")?;
        locs.sort();
        let declared: BTreeSet<Loc> = locs.iter().cloned().collect();
        if declared.len() != locs.len() {
            return Err(bad_protocol(&name, "a location is listed twice"));
        }
        let used: BTreeSet<Loc> = roles.values().cloned().collect();
        if used != declared {
            return Err(bad_protocol(&name, "the `at` list must name exactly the locations of the service roles"));
        }
        let p = Protocol { name, locs, starter, roles, global };
        if p.global.roles() != p.all_roles() {
            return Err(bad_protocol(&p.name, "the declared roles differ from the roles of the global type"));
        }
        if has_free_rec_var(&p.global, &mut Vec::new()) {
            return Err(bad_protocol(&p.name, "unbound recursion variable"));
        }
        Ok(p)
    }

    fn deployment_block(&mut self, into: &mut BTreeMap<Proc, Loc>) -> R<()> {
        self.expect_kw("deployment")?;
        self.expect_punct("{")?;
        while !self.eat_punct("}") {
            let p = Proc::new(self.ident()?);
            self.expect_punct("@")?;
            let l = Loc::new(self.ident()?);
            if into.insert(p.clone(), l).is_some() {
                return self.error(format!("process {p} placed twice"));
            }
            if !self.eat_punct(";") && !self.eat_punct(",") && !self.is_punct("}") {
                return self.error("expected `;`");
            }
        }
        Ok(())
    }

    // ---- dcc

    fn behaviour(&mut self) -> R<Behaviour> {
        let mut items = vec![self.stmt()?];
        while self.eat_punct(";") {
            items.push(self.stmt()?);
        }
        let last = items.pop().unwrap();
        Ok(items.into_iter().rev().fold(last, |acc, b| Behaviour::Seq(Box::new(b), Box::new(acc))))
    }

    fn block(&mut self) -> R<Behaviour> {
        self.expect_punct("{")?;
        let b = self.behaviour()?;
        self.expect_punct("}")?;
        Ok(b)
    }

    fn stmt(&mut self) -> R<Behaviour> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.next();
                Ok(Behaviour::Inact)
            }
            Tok::Ident(s) => match s.as_str() {
                "recv" => {
                    self.next();
                    let op = Op::new(self.label()?);
                    self.expect_punct("(")?;
                    let var = self.path()?;
                    self.expect_punct(")")?;
                    self.expect_kw("from")?;
                    let from = self.expr()?;
                    Ok(Behaviour::Input { op, var, from })
                }
                "send" => {
                    self.next();
                    let op = Op::new(self.label()?);
                    self.expect_punct("(")?;
                    let payload = self.expr()?;
                    self.expect_punct(")")?;
                    self.expect_kw("to")?;
                    let to = self.expr()?;
                    self.expect_kw("key")?;
                    let key = self.expr()?;
                    Ok(Behaviour::Output { to, op, payload, key })
                }
                "choice" => {
                    self.next();
                    self.expect_kw("from")?;
                    let from = self.expr()?;
                    self.expect_punct("{")?;
                    let mut branches = Vec::new();
                    while !self.eat_punct("}") {
                        let op = Op::new(self.label()?);
                        let var = self.opt_var()?;
                        let cont = self.block()?;
                        branches.push(DBranch { op, var, cont });
                    }
                    Ok(Behaviour::Choice { from, branches })
                }
                "request" => {
                    self.next();
                    let to = self.expr()?;
                    self.expect_punct("(")?;
                    let payload = self.expr()?;
                    self.expect_punct(")")?;
                    Ok(Behaviour::Request { to, payload })
                }
                "cqueue" => {
                    self.next();
                    self.expect_punct("(")?;
                    let x = self.path()?;
                    self.expect_punct(")")?;
                    Ok(Behaviour::CQueue(x))
                }
                "if" => {
                    self.next();
                    self.expect_punct("(")?;
                    let guard = self.expr()?;
                    self.expect_punct(")")?;
                    let then = self.block()?;
                    self.expect_kw("else")?;
                    let els = self.block()?;
                    Ok(Behaviour::Cond { guard, then: Box::new(then), els: Box::new(els) })
                }
                "def" => {
                    self.next();
                    let name = self.proc_name()?;
                    let body = self.block()?;
                    self.expect_kw("in")?;
                    let cont = self.block()?;
                    Ok(Behaviour::Def { name, body: Box::new(body), cont: Box::new(cont) })
                }
                "call" => {
                    self.next();
                    Ok(Behaviour::Call(self.proc_name()?))
                }
                _ => {
                    let x = self.path()?;
                    self.expect_punct(":=")?;
                    let e = self.expr()?;
                    Ok(Behaviour::Assign(x, e))
                }
            },
            _ => self.error("expected a behaviour"),
        }
    }

    /// Reads one JSON value starting at the current token.
    fn json(&mut self) -> R<serde_json::Value> {
        let start = self.peek_tok(0).start;
        self.buf.clear();
        self.lex.seek(start);
        let mut it = serde_json::Deserializer::from_str(&self.lex.src[start..]).into_iter::<serde_json::Value>();
        match it.next() {
            Some(Ok(v)) => {
                let end = start + it.byte_offset();
                self.lex.seek(end);
                Ok(v)
            }
            Some(Err(e)) => self.error(format!("invalid JSON ({e})")),
            None => self.error("expected JSON"),
        }
    }

    fn service(&mut self) -> R<(Loc, Service)> {
        self.expect_kw("service")?;
        let l = Loc::new(self.ident()?);
        self.expect_punct("{")?;
        self.expect_kw("start")?;
        let start = if self.eat_kw("none") {
            None
        } else {
            self.expect_punct("(")?;
            let var = self.path()?;
            self.expect_punct(")")?;
            Some(StartBehaviour { var, body: self.block()? })
        };
        self.expect_kw("processes")?;
        self.expect_punct("[")?;
        let mut processes = Vec::new();
        while !self.eat_punct("]") {
            self.expect_kw("process")?;
            let behaviour = self.block()?;
            self.expect_kw("state")?;
            let j = self.json()?;
            let state = match Tree::from_json(&j) {
                Ok(t) => t,
                Err(e) => return self.error(format!("bad state ({e})")),
            };
            self.expect_kw("queues")?;
            let j = self.json()?;
            let queues = match QueueMap::from_json(&j) {
                Ok(q) => q,
                Err(e) => return self.error(format!("bad queues ({e})")),
            };
            processes.push(DccProcess { behaviour, state, queues });
        }
        self.expect_punct("}")?;
        Ok((l, Service { start, processes }))
    }
}

fn bad_protocol(name: &str, msg: &str) -> ParseError {
    ParseError::BadProtocol { name: name.to_string(), msg: msg.to_string() }
}

/// True when the global type mentions an unbound recursion variable.
fn has_free_rec_var(g: &GlobalType, bound: &mut Vec<String>) -> bool {
    match g {
        GlobalType::End => false,
        GlobalType::Var(t) => !bound.contains(t),
        GlobalType::Rec(t, b) => {
            bound.push(t.clone());
            let r = has_free_rec_var(b, bound);
            bound.pop();
            r
        }
        GlobalType::Pending { cont, .. } => has_free_rec_var(cont, bound),
        GlobalType::Comm { branches, .. } => branches.iter().any(|b| has_free_rec_var(&b.cont, bound)),
    }
}

fn finish<T>(p: &mut Parser, v: T) -> R<T> {
    if p.at_eof() {
        Ok(v)
    } else {
        p.error("expected end of input")
    }
}

/// Parses a bare choreography term and checks its well-formedness.
pub fn parse_chor(src: &str) -> R<Chor> {
    let mut p = Parser::new(src, false);
    let c = p.term()?;
    let c = finish(&mut p, c)?;
    check_chor(&c)?;
    let mut kinds = Kinds::default();
    kinds.chor(&c)?;
    Ok(c)
}

pub fn parse_expr(src: &str) -> R<Expr> {
    let mut p = Parser::new(src, true);
    let e = p.expr()?;
    finish(&mut p, e)
}

pub fn parse_global(src: &str) -> R<GlobalType> {
    let mut p = Parser::new(src, false);
    let g = p.global()?;
    finish(&mut p, g)
}

pub fn parse_carried(src: &str) -> R<CarriedType> {
    let mut p = Parser::new(src, false);
    let u = p.carried()?;
    finish(&mut p, u)
}

pub fn parse_behaviour(src: &str) -> R<Behaviour> {
    let mut p = Parser::new(src, true);
    let b = p.behaviour()?;
    finish(&mut p, b)
}

pub fn parse_network(src: &str) -> R<Network> {
    let mut p = Parser::new(src, true);
    let mut net = Network::default();
    while !p.at_eof() {
        let (l, s) = p.service()?;
        if net.services.insert(l.clone(), s).is_some() {
            return Err(ParseError::BadServices(format!("service {l} declared twice")));
        }
    }
    Ok(net)
}

/// Parses a whole `.ac` source: protocol declarations, an optional
/// deployment block and one choreography term, in any order.
pub fn parse_program(src: &str) -> R<Program> {
    let mut p = Parser::new(src, false);
    let mut prog = Program::default();
    let mut term = None;
    loop {
        if p.at_eof() {
            break;
        }
        if p.is_kw("protocol") {
            let proto = p.protocol()?;
            if prog.protocols.iter().any(|q| q.name == proto.name) {
                return Err(bad_protocol(&proto.name, "declared twice"));
            }
            prog.protocols.push(proto);
        } else if p.is_kw("deployment") {
            p.deployment_block(&mut prog.placements)?;
        } else if term.is_none() {
            term = Some(p.term()?);
        } else {
            return p.error("expected `protocol` or `deployment`");
        }
    }
    prog.chor = term.unwrap_or(Chor::Inact);
    check_chor(&prog.chor)?;
    check_protocols(&prog)?;
    let mut kinds = Kinds::default();
    kinds.program(&prog)?;
    Ok(prog)
}

fn check_protocols(prog: &Program) -> R<()> {
    for (i, a) in prog.protocols.iter().enumerate() {
        for b in &prog.protocols[i + 1..] {
            if let Some(l) = a.locs.iter().find(|l| b.locs.contains(l)) {
                return Err(bad_protocol(&b.name, &format!("location {l} is already served by protocol {}", a.name)));
            }
        }
    }
    let mut err = None;
    prog.chor.visit(&mut |c| {
        if err.is_some() {
            return;
        }
        match c {
            Chor::Start { k, role, services, .. } => {
                let lr: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
                if prog.protocol_for_start(role, &lr).is_none() {
                    err = Some(ParseError::NoProtocol(format!("start of session {k}")));
                }
            }
            Chor::Req { k, role, services, .. } => {
                if prog.protocol_for_start(role, services).is_none() {
                    err = Some(ParseError::NoProtocol(format!("request of session {k}")));
                }
            }
            Chor::Acc { k, services, .. } => {
                let lr: Vec<LocRole> = services.iter().map(LocProc::loc_role).collect();
                if prog.protocol_for_acc(&lr).is_none() {
                    err = Some(ParseError::NoProtocol(format!("accept of session {k}")));
                }
            }
            _ => {}
        }
    });
    err.map_or(Ok(()), Err)
}

/// Structural checks: accepts only at top level, distinct reception
/// branches, nonempty and duplicate-free service lists.
pub fn check_chor(c: &Chor) -> R<()> {
    for comp in c.components() {
        if let Chor::Acc { cont, .. } = comp {
            no_acc(cont)?;
        } else {
            no_acc(comp)?;
        }
    }
    let mut err = None;
    c.visit(&mut |c| {
        if err.is_some() {
            return;
        }
        match c {
            Chor::Recv { k, branches, .. } => {
                let mut seen = BTreeSet::new();
                for b in branches {
                    if !seen.insert(&b.op) {
                        err = Some(ParseError::DuplicateBranch { k: k.to_string(), op: b.op.to_string() });
                    }
                }
            }
            Chor::Start { k, role, services, .. } => {
                let roles: BTreeSet<&Role> = services.iter().map(|s| &s.role).chain([role]).collect();
                let procs: BTreeSet<&Proc> = services.iter().map(|s| &s.proc).collect();
                if roles.len() != services.len() + 1 || procs.len() != services.len() {
                    err = Some(ParseError::BadServices(format!("start of {k} repeats a role or process")));
                }
            }
            Chor::Req { k, role, services, .. } => {
                let roles: BTreeSet<&Role> = services.iter().map(|s| &s.role).chain([role]).collect();
                if roles.len() != services.len() + 1 {
                    err = Some(ParseError::BadServices(format!("request of {k} repeats a role")));
                }
            }
            Chor::Acc { k, services, .. } => {
                let roles: BTreeSet<&Role> = services.iter().map(|s| &s.role).collect();
                let procs: BTreeSet<&Proc> = services.iter().map(|s| &s.proc).collect();
                if roles.len() != services.len() || procs.len() != services.len() {
                    err = Some(ParseError::BadServices(format!("accept of {k} repeats a role or process")));
                }
            }
            _ => {}
        }
    });
    err.map_or(Ok(()), Err)
}

fn no_acc(c: &Chor) -> R<()> {
    let mut found = None;
    c.visit(&mut |c| {
        if let Chor::Acc { k, .. } = c {
            found.get_or_insert_with(|| k.to_string());
        }
    });
    match found {
        Some(k) => Err(ParseError::GuardedAcc(k)),
        None => Ok(()),
    }
}

#[derive(Default)]
struct Kinds(BTreeMap<String, NameKind>);

impl Kinds {
    fn add(&mut self, name: &str, kind: NameKind) -> R<()> {
        match self.0.get(name) {
            Some(k) if *k != kind => Err(ParseError::KindClash { name: name.to_string(), first: *k, second: kind }),
            Some(_) => Ok(()),
            None => {
                self.0.insert(name.to_string(), kind);
                Ok(())
            }
        }
    }

    fn program(&mut self, p: &Program) -> R<()> {
        for proto in &p.protocols {
            for l in &proto.locs {
                self.add(l.as_str(), NameKind::Location)?;
            }
            for r in proto.all_roles() {
                self.add(r.as_str(), NameKind::Role)?;
            }
            self.global(&proto.global)?;
        }
        for (q, l) in &p.placements {
            self.add(q.as_str(), NameKind::Process)?;
            self.add(l.as_str(), NameKind::Location)?;
        }
        self.chor(&p.chor)
    }

    fn global(&mut self, g: &GlobalType) -> R<()> {
        match g {
            GlobalType::Comm { branches, .. } => {
                for b in branches {
                    self.add(b.op.as_str(), NameKind::Operation)?;
                    self.global(&b.cont)?;
                }
                Ok(())
            }
            GlobalType::Pending { op, cont, .. } => {
                self.add(op.as_str(), NameKind::Operation)?;
                self.global(cont)
            }
            GlobalType::Rec(_, b) => self.global(b),
            GlobalType::Var(_) | GlobalType::End => Ok(()),
        }
    }

    fn chor(&mut self, c: &Chor) -> R<()> {
        let mut out: Vec<(String, NameKind)> = Vec::new();
        c.visit(&mut |c| {
            let mut push = |s: &str, k| out.push((s.to_string(), k));
            match c {
                Chor::Start { k, starter, role, services, .. } => {
                    push(k.as_str(), NameKind::Session);
                    push(starter.as_str(), NameKind::Process);
                    push(role.as_str(), NameKind::Role);
                    for s in services {
                        push(s.loc.as_str(), NameKind::Location);
                        push(s.proc.as_str(), NameKind::Process);
                        push(s.role.as_str(), NameKind::Role);
                    }
                }
                Chor::Com { k, sender, sender_role, receiver, receiver_role, op, .. } => {
                    push(k.as_str(), NameKind::Session);
                    push(sender.as_str(), NameKind::Process);
                    push(sender_role.as_str(), NameKind::Role);
                    push(receiver.as_str(), NameKind::Process);
                    push(receiver_role.as_str(), NameKind::Role);
                    push(op.as_str(), NameKind::Operation);
                }
                Chor::Req { k, starter, role, services, .. } => {
                    push(k.as_str(), NameKind::Session);
                    push(starter.as_str(), NameKind::Process);
                    push(role.as_str(), NameKind::Role);
                    for s in services {
                        push(s.loc.as_str(), NameKind::Location);
                        push(s.role.as_str(), NameKind::Role);
                    }
                }
                Chor::Acc { k, services, .. } => {
                    push(k.as_str(), NameKind::Session);
                    for s in services {
                        push(s.loc.as_str(), NameKind::Location);
                        push(s.proc.as_str(), NameKind::Process);
                        push(s.role.as_str(), NameKind::Role);
                    }
                }
                Chor::Send { k, sender, sender_role, receiver_role, op, .. } => {
                    push(k.as_str(), NameKind::Session);
                    push(sender.as_str(), NameKind::Process);
                    push(sender_role.as_str(), NameKind::Role);
                    push(receiver_role.as_str(), NameKind::Role);
                    push(op.as_str(), NameKind::Operation);
                }
                Chor::Recv { k, sender_role, receiver, receiver_role, branches } => {
                    push(k.as_str(), NameKind::Session);
                    push(sender_role.as_str(), NameKind::Role);
                    push(receiver.as_str(), NameKind::Process);
                    push(receiver_role.as_str(), NameKind::Role);
                    for b in branches {
                        push(b.op.as_str(), NameKind::Operation);
                    }
                }
                Chor::Cond { proc, .. } => push(proc.as_str(), NameKind::Process),
                Chor::Def { name, params, .. } => {
                    push(name.as_str(), NameKind::Procedure);
                    for p in params {
                        push(p.as_str(), NameKind::Process);
                    }
                }
                Chor::Call { name, args } => {
                    push(name.as_str(), NameKind::Procedure);
                    for p in args {
                        push(p.as_str(), NameKind::Process);
                    }
                }
                Chor::Par(..) | Chor::Inact => {}
            }
        });
        for (s, k) in out {
            self.add(&s, k)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_inact() {
        assert_eq!(parse_chor("0").unwrap(), Chor::Inact);
    }

    #[test]
    fn send_term() {
        let c = parse_chor("k: p[A].x -> B.op; 0").unwrap();
        assert!(matches!(c, Chor::Send { ref op, .. } if op.as_str() == "op"));
    }

    #[test]
    fn comments_and_fresh_suffixes() {
        let c = parse_chor("# a comment\nk#2: p#1[A].x -> B.o # trailing").unwrap();
        let Chor::Send { k, sender, .. } = c else { panic!() };
        assert_eq!(k.as_str(), "k#2");
        assert_eq!(sender.as_str(), "p#1");
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_chor("k: p[A].x ->\n  ;").unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 2, col: 3, .. }), "{e}");
    }

    #[test]
    fn kind_clash_rejected() {
        let e = parse_chor("k: p[p].x -> B.o").unwrap_err();
        assert!(matches!(e, ParseError::KindClash { .. }));
    }

    #[test]
    fn guarded_acc_rejected() {
        let e = parse_chor("k: p[A].x -> B.o; acc j: l.q[B]").unwrap_err();
        assert_eq!(e, ParseError::GuardedAcc("j".into()));
        assert!(parse_chor("acc j: l.q[B] | acc h: m.r[C]").is_ok());
    }

    #[test]
    fn duplicate_branch_rejected() {
        let e = parse_chor("k: A -> q[B] { o(x), o(y) }").unwrap_err();
        assert!(matches!(e, ParseError::DuplicateBranch { .. }));
    }

    #[test]
    fn dollar_names_only_in_dcc() {
        assert!(parse_chor("k: p[A].$x -> B.o").is_err());
        assert!(parse_behaviour("$sync.A := k").is_ok());
    }

    #[test]
    fn expression_precedence() {
        let e = parse_expr("a + 1 = 2 and not_b or c").unwrap();
        assert_eq!(e.to_string(), "a + 1 = 2 and not_b or c");
        let e = parse_expr("a - (b - c)").unwrap();
        assert_eq!(e.to_string(), "a - (b - c)");
        assert_eq!(parse_expr("{n: -3, s: \"x\"}").unwrap().to_string(), "{n: -3, s: \"x\"}");
    }

    #[test]
    fn protocol_roles_must_match() {
        let src = "protocol P at l roles A starter, B@l { A -> C { o(int) } } 0";
        assert!(matches!(parse_program(src), Err(ParseError::BadProtocol { .. })));
    }

    #[test]
    fn start_needs_protocol() {
        let src = "start k: p[A] <-> l.q[B]";
        assert!(matches!(parse_program(src), Err(ParseError::NoProtocol(_))));
        let src = "protocol P at l roles A starter, B@l { A -> B { o(int) } }\nstart k: p[A] <-> l.q[B]";
        assert!(parse_program(src).is_ok());
    }

    #[test]
    fn network_with_embedded_json() {
        let src = r#"service l { start none processes [ process { recv o(x) from k.A.B } state {"k": {"A": {"B": "key:l:0"}}} queues [{"key": "key:l:0", "messages": [["o", 1]]}] ] }"#;
        let net = parse_network(src).unwrap();
        let p = &net.services[&Loc::new("l")].processes[0];
        assert_eq!(p.state.value_at(&Path::parse("k.A.B")), Some(&Value::Key(Loc::new("l"), 0)));
        assert_eq!(p.queues.keys().count(), 1);
    }
}
