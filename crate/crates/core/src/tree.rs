//! Labelled data trees, paths, and the canonical tree text form.
//!
//! Trees hold process states, message payloads, session descriptors and
//! correlation keys. Children are kept in an ordered map so that printing
//! and equality are deterministic.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;

use crate::names::Loc;

/// A value stored at a leaf.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Value {
    Int(i64),
    Str(String),
    Bool(bool),
    Loc(Loc),
    /// A correlation key minted at a location. Keys are opaque: they are only
    /// ever compared for equality.
    Key(Loc, u64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Loc(l) => write!(f, "@{l}"),
            Value::Key(l, n) => write!(f, "key:{l}:{n}"),
        }
    }
}

/// A path through a tree; the empty path is `ε`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Path(pub Vec<String>);

impl Path {
    pub fn empty() -> Self {
        Path(Vec::new())
    }

    pub fn parse(s: &str) -> Self {
        if s.is_empty() {
            return Path::empty();
        }
        Path(s.split('.').map(str::to_string).collect())
    }

    pub fn from_segments<I, S>(segs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Path(segs.into_iter().map(Into::into).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn child(&self, seg: impl Into<String>) -> Path {
        let mut v = self.0.clone();
        v.push(seg.into());
        Path(v)
    }

    pub fn concat(&self, other: &Path) -> Path {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        Path(v)
    }

    pub fn first(&self) -> Option<&str> {
        self.0.first().map(String::as_str)
    }

    /// Rewrites the first segment when it equals `from`.
    pub fn rename_head(&self, from: &str, to: &str) -> Path {
        match self.0.first() {
            Some(h) if h == from => {
                let mut v = self.0.clone();
                v[0] = to.to_string();
                Path(v)
            }
            _ => self.clone(),
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("ε")
        } else {
            f.write_str(&self.0.join("."))
        }
    }
}

impl fmt::Debug for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// A rooted tree with uniquely labelled edges. Only childless nodes carry a
/// value; the empty tree has neither.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tree {
    value: Option<Value>,
    children: BTreeMap<String, Tree>,
}

impl Tree {
    /// The empty tree `t_⊥`.
    pub fn empty() -> Self {
        Tree::default()
    }

    pub fn leaf(v: Value) -> Self {
        Tree { value: Some(v), children: BTreeMap::new() }
    }

    pub fn int(i: i64) -> Self {
        Tree::leaf(Value::Int(i))
    }

    pub fn str(s: impl Into<String>) -> Self {
        Tree::leaf(Value::Str(s.into()))
    }

    pub fn bool(b: bool) -> Self {
        Tree::leaf(Value::Bool(b))
    }

    pub fn loc(l: impl Into<String>) -> Self {
        Tree::leaf(Value::Loc(Loc::new(l)))
    }

    pub fn key(l: &Loc, n: u64) -> Self {
        Tree::leaf(Value::Key(l.clone(), n))
    }

    pub fn node<I, S>(children: I) -> Self
    where
        I: IntoIterator<Item = (S, Tree)>,
        S: Into<String>,
    {
        Tree { value: None, children: children.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn value(&self) -> Option<&Value> {
        self.value.as_ref()
    }

    pub fn children(&self) -> &BTreeMap<String, Tree> {
        &self.children
    }

    pub fn child(&self, label: &str) -> Option<&Tree> {
        self.children.get(label)
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_none() && self.children.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// `x(t)`: the subtree reached by following `path`, if defined.
    pub fn resolve(&self, path: &Path) -> Option<&Tree> {
        let mut cur = self;
        for seg in path.segments() {
            cur = cur.children.get(seg)?;
        }
        Some(cur)
    }

    /// The leaf value at `path`, if the path is defined and ends at a value.
    pub fn value_at(&self, path: &Path) -> Option<&Value> {
        self.resolve(path).and_then(Tree::value)
    }

    /// `t ◁x t'`: replaces the subtree at `path` with `sub`, creating the
    /// smallest chain of empty nodes when the path is not defined. A valued
    /// leaf that gains children loses its value.
    pub fn replace(&self, path: &Path, sub: Tree) -> Tree {
        let mut out = self.clone();
        out.replace_in_place(path, sub);
        out
    }

    pub fn replace_in_place(&mut self, path: &Path, sub: Tree) {
        let mut cur = self;
        for seg in path.segments() {
            cur.value = None;
            cur = cur.children.entry(seg.clone()).or_default();
        }
        *cur = sub;
    }

    /// Removes the subtree at `path`, if present.
    pub fn remove(&mut self, path: &Path) -> Option<Tree> {
        let (last, init) = path.segments().split_last()?;
        let mut cur = self;
        for seg in init {
            cur = cur.children.get_mut(seg)?;
        }
        cur.children.remove(last)
    }

    /// Rewrites every leaf value with `f`.
    pub fn map_values(&self, f: &mut impl FnMut(&Value) -> Value) -> Tree {
        Tree {
            value: self.value.as_ref().map(|v| f(v)),
            children: self.children.iter().map(|(k, c)| (k.clone(), c.map_values(f))).collect(),
        }
    }

    /// Rewrites every edge label with `f`.
    pub fn map_labels(&self, f: &impl Fn(&str) -> String) -> Tree {
        Tree {
            value: self.value.clone(),
            children: self.children.iter().map(|(k, c)| (f(k), c.map_labels(f))).collect(),
        }
    }

    /// Drops every edge whose label satisfies `pred`, recursively.
    pub fn without_labels(&self, pred: &impl Fn(&str) -> bool) -> Tree {
        Tree {
            value: self.value.clone(),
            children: self
                .children
                .iter()
                .filter(|(k, _)| !pred(k))
                .map(|(k, c)| (k.clone(), c.without_labels(pred)))
                .collect(),
        }
    }

    /// Visits leaf values in canonical (depth-first, label-sorted) order.
    pub fn for_each_value<'a>(&'a self, f: &mut impl FnMut(&'a Value)) {
        if let Some(v) = &self.value {
            f(v);
        }
        for c in self.children.values() {
            c.for_each_value(f);
        }
    }

    pub fn to_json(&self) -> Json {
        if let Some(v) = &self.value {
            return match v {
                Value::Int(i) => Json::from(*i),
                Value::Str(s) => Json::from(s.clone()),
                Value::Bool(b) => Json::from(*b),
                Value::Loc(l) => Json::from(format!("loc:{l}")),
                Value::Key(l, n) => Json::from(format!("key:{l}:{n}")),
            };
        }
        let mut map = serde_json::Map::new();
        for (k, c) in &self.children {
            map.insert(k.clone(), c.to_json());
        }
        Json::Object(map)
    }

    pub fn from_json(j: &Json) -> Result<Tree, TreeError> {
        match j {
            Json::Bool(b) => Ok(Tree::bool(*b)),
            Json::Number(n) => n.as_i64().map(Tree::int).ok_or(TreeError::NonInteger(n.to_string())),
            Json::String(s) => Ok(Tree::leaf(parse_string_value(s)?)),
            Json::Object(m) => {
                let mut t = Tree::empty();
                for (k, v) in m {
                    if t.children.insert(k.clone(), Tree::from_json(v)?).is_some() {
                        return Err(TreeError::DuplicateLabel(k.clone()));
                    }
                }
                Ok(t)
            }
            Json::Null => Ok(Tree::empty()),
            Json::Array(_) => Err(TreeError::Array),
        }
    }

    /// Canonical compact text form (sorted keys).
    pub fn to_text(&self) -> String {
        self.to_json().to_string()
    }

    pub fn from_text(s: &str) -> Result<Tree, TreeError> {
        let j: Json = serde_json::from_str(s).map_err(|e| TreeError::Syntax(e.to_string()))?;
        Tree::from_json(&j)
    }
}

fn parse_string_value(s: &str) -> Result<Value, TreeError> {
    if let Some(l) = s.strip_prefix("loc:") {
        return Ok(Value::Loc(Loc::new(l)));
    }
    if let Some(rest) = s.strip_prefix("key:") {
        if let Some((l, n)) = rest.rsplit_once(':') {
            if let Ok(n) = n.parse::<u64>() {
                return Ok(Value::Key(Loc::new(l), n));
            }
        }
        return Err(TreeError::BadKey(s.to_string()));
    }
    Ok(Value::Str(s.to_string()))
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl fmt::Debug for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree text is not valid: {0}")]
    Syntax(String),
    #[error("non-integer number {0}")]
    NonInteger(String),
    #[error("duplicate edge label {0}")]
    DuplicateLabel(String),
    #[error("arrays are not trees")]
    Array,
    #[error("malformed key literal {0}")]
    BadKey(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn descriptor() -> Tree {
        Tree::node([
            ("A", Tree::node([("l", Tree::loc("lA")), ("C", Tree::key(&Loc::new("lC"), 1))])),
            ("C", Tree::node([("l", Tree::loc("lC")), ("A", Tree::key(&Loc::new("lA"), 1))])),
        ])
    }

    #[test]
    fn resolve_basics() {
        let t = descriptor();
        assert_eq!(t.resolve(&Path::empty()), Some(&t));
        assert_eq!(t.resolve(&Path::parse("A.l")), Some(&Tree::loc("lA")));
        assert_eq!(Tree::empty().resolve(&Path::parse("a.b")), None);
    }

    #[test]
    fn replace_creates_chain() {
        let t = Tree::empty().replace(&Path::parse("a.b"), Tree::int(5));
        assert_eq!(t.resolve(&Path::parse("a.b")), Some(&Tree::int(5)));
        assert!(t.resolve(&Path::parse("a")).unwrap().value().is_none());
        let t2 = descriptor();
        assert_eq!(t.replace(&Path::empty(), t2.clone()), t2);
    }

    #[test]
    fn canonical_text_is_sorted() {
        let t = Tree::node([("b", Tree::int(1)), ("a", Tree::str("x"))]);
        assert_eq!(t.to_text(), r#"{"a":"x","b":1}"#);
        assert_eq!(Tree::loc("l1").to_text(), r#""loc:l1""#);
        assert_eq!(Tree::from_text(&descriptor().to_text()).unwrap(), descriptor());
    }

    fn arb_tree() -> impl Strategy<Value = Tree> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Tree::int),
            "[a-z]{0,4}".prop_map(Tree::str),
            any::<bool>().prop_map(Tree::bool),
            Just(Tree::empty()),
        ];
        leaf.prop_recursive(3, 16, 3, |inner| prop::collection::btree_map("[a-c]", inner, 0..3).prop_map(Tree::node))
    }

    fn arb_path() -> impl Strategy<Value = Path> {
        prop::collection::vec("[a-c]", 0..4).prop_map(Path::from_segments)
    }

    proptest! {
        #[test]
        fn replace_then_resolve(t in arb_tree(), p in arb_path(), s in arb_tree()) {
            let r = t.replace(&p, s.clone());
            prop_assert_eq!(r.resolve(&p), Some(&s));
        }

        #[test]
        fn resolve_is_homomorphic(t in arb_tree(), x in arb_path(), y in arb_path()) {
            if let Some(mid) = t.resolve(&x) {
                prop_assert_eq!(t.resolve(&x.concat(&y)), mid.resolve(&y));
            }
        }

        #[test]
        fn text_round_trip(t in arb_tree()) {
            prop_assert_eq!(Tree::from_text(&t.to_text()).unwrap(), t);
        }
    }
}
