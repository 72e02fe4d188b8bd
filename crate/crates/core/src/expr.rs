//! Expressions evaluated against a process state.

use std::collections::BTreeMap;
use std::fmt;

use crate::tree::{Path, Tree, Value};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum BinOp {
    Add,
    Sub,
    Eq,
    Ne,
    Lt,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt => 3,
            BinOp::Add | BinOp::Sub => 4,
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Expr {
    Path(Path),
    Lit(Value),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Record(BTreeMap<String, Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("path {0} is undefined in the state")]
    Undefined(Path),
    #[error("operator {op} cannot combine {left} and {right}")]
    TypeMismatch { op: &'static str, left: String, right: String },
    #[error("integer overflow")]
    Overflow,
}

impl Expr {
    pub fn path(s: &str) -> Expr {
        Expr::Path(Path::parse(s))
    }

    pub fn int(i: i64) -> Expr {
        Expr::Lit(Value::Int(i))
    }

    pub fn str(s: &str) -> Expr {
        Expr::Lit(Value::Str(s.to_string()))
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    /// `eval(e, t)`; undefined reads and ill-typed operands are errors.
    pub fn eval(&self, state: &Tree) -> Result<Tree, EvalError> {
        match self {
            Expr::Path(p) => state.resolve(p).cloned().ok_or_else(|| EvalError::Undefined(p.clone())),
            Expr::Lit(v) => Ok(Tree::leaf(v.clone())),
            Expr::Record(fields) => {
                let mut out = Vec::with_capacity(fields.len());
                for (k, e) in fields {
                    out.push((k.clone(), e.eval(state)?));
                }
                Ok(Tree::node(out))
            }
            Expr::Bin(op, l, r) => {
                let lt = l.eval(state)?;
                let rt = r.eval(state)?;
                apply(*op, &lt, &rt).map(Tree::leaf)
            }
        }
    }

    /// Evaluation as a partial function.
    pub fn try_eval(&self, state: &Tree) -> Option<Tree> {
        self.eval(state).ok()
    }

    /// Every path read by the expression.
    pub fn reads(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        self.collect_reads(&mut out);
        out
    }

    fn collect_reads<'a>(&'a self, out: &mut Vec<&'a Path>) {
        match self {
            Expr::Path(p) => out.push(p),
            Expr::Lit(_) => {}
            Expr::Bin(_, l, r) => {
                l.collect_reads(out);
                r.collect_reads(out);
            }
            Expr::Record(fs) => fs.values().for_each(|e| e.collect_reads(out)),
        }
    }

    /// Renames the first segment of every read path equal to `from`.
    pub fn rename_head(&self, from: &str, to: &str) -> Expr {
        self.map_paths(&|p| p.rename_head(from, to))
    }

    pub fn map_paths(&self, f: &impl Fn(&Path) -> Path) -> Expr {
        match self {
            Expr::Path(p) => Expr::Path(f(p)),
            Expr::Lit(v) => Expr::Lit(v.clone()),
            Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(l.map_paths(f)), Box::new(r.map_paths(f))),
            Expr::Record(fs) => Expr::Record(fs.iter().map(|(k, e)| (k.clone(), e.map_paths(f))).collect()),
        }
    }

    /// True when the expression can be printed after a `.` without parentheses.
    pub fn is_atom(&self) -> bool {
        !matches!(self, Expr::Bin(..))
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        match self {
            Expr::Path(p) => write!(f, "{p}"),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Record(fs) => {
                f.write_str("{")?;
                for (i, (k, e)) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: ")?;
                    e.fmt_prec(f, 0)?;
                }
                f.write_str("}")
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                if p < min {
                    f.write_str("(")?;
                }
                l.fmt_prec(f, p)?;
                write!(f, " {} ", op.symbol())?;
                // comparisons do not chain; arithmetic is left-associative
                r.fmt_prec(f, p + 1)?;
                if p < min {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }

    /// Printed form usable right after a `.` in a term.
    pub fn atom_string(&self) -> String {
        if self.is_atom() {
            self.to_string()
        } else {
            format!("({self})")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

fn leaf_of(t: &Tree) -> Option<&Value> {
    if t.is_leaf() {
        t.value()
    } else {
        None
    }
}

fn describe(t: &Tree) -> String {
    match leaf_of(t) {
        Some(Value::Int(_)) => "int".into(),
        Some(Value::Str(_)) => "str".into(),
        Some(Value::Bool(_)) => "bool".into(),
        Some(Value::Loc(_)) => "loc".into(),
        Some(Value::Key(..)) => "key".into(),
        None => "tree".into(),
    }
}

fn apply(op: BinOp, l: &Tree, r: &Tree) -> Result<Value, EvalError> {
    let mismatch = || EvalError::TypeMismatch { op: op.symbol(), left: describe(l), right: describe(r) };
    let (a, b) = match (leaf_of(l), leaf_of(r)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(mismatch()),
    };
    use Value::*;
    match (op, a, b) {
        (BinOp::Add, Int(x), Int(y)) => x.checked_add(*y).map(Int).ok_or(EvalError::Overflow),
        (BinOp::Add, Str(x), Str(y)) => Ok(Str(format!("{x}{y}"))),
        (BinOp::Sub, Int(x), Int(y)) => x.checked_sub(*y).map(Int).ok_or(EvalError::Overflow),
        (BinOp::Lt, Int(x), Int(y)) => Ok(Bool(x < y)),
        (BinOp::Lt, Str(x), Str(y)) => Ok(Bool(x < y)),
        (BinOp::And, Bool(x), Bool(y)) => Ok(Bool(*x && *y)),
        (BinOp::Or, Bool(x), Bool(y)) => Ok(Bool(*x || *y)),
        (BinOp::Eq | BinOp::Ne, _, _) if std::mem::discriminant(a) == std::mem::discriminant(b) => {
            Ok(Bool((a == b) == (op == BinOp::Eq)))
        }
        _ => Err(mismatch()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_is_total() {
        assert_eq!(Expr::int(7).eval(&Tree::empty()), Ok(Tree::int(7)));
    }

    #[test]
    fn undefined_read_blocks() {
        assert_eq!(Expr::path("y").try_eval(&Tree::empty()), None);
    }

    #[test]
    fn equality_against_state() {
        let st = Tree::node([("x", Tree::int(3))]);
        let e = Expr::bin(BinOp::Eq, Expr::path("x"), Expr::int(3));
        // independent oracle: the state holds 3 at x
        let expected = st.value_at(&Path::parse("x")) == Some(&Value::Int(3));
        assert_eq!(e.eval(&st), Ok(Tree::bool(expected)));
    }

    #[test]
    fn cross_type_comparison_rejected() {
        let e = Expr::bin(BinOp::Eq, Expr::int(1), Expr::str("1"));
        assert!(matches!(e.eval(&Tree::empty()), Err(EvalError::TypeMismatch { .. })));
    }

    #[test]
    fn records_build_trees() {
        let st = Tree::node([("pk", Tree::node([("data", Tree::int(100)), ("sum", Tree::int(0))]))]);
        let e = Expr::Record(BTreeMap::from([
            ("data".to_string(), Expr::path("pk.data")),
            ("total".to_string(), Expr::bin(BinOp::Add, Expr::path("pk.sum"), Expr::path("pk.data"))),
        ]));
        let t = e.eval(&st).unwrap();
        assert_eq!(t.to_text(), r#"{"data":100,"total":100}"#);
    }

    #[test]
    fn printing_respects_precedence() {
        let e = Expr::bin(BinOp::Sub, Expr::int(1), Expr::bin(BinOp::Sub, Expr::int(2), Expr::int(3)));
        assert_eq!(e.to_string(), "1 - (2 - 3)");
        assert_eq!(e.atom_string(), "(1 - (2 - 3))");
    }
}
