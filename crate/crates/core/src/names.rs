//! Identifier newtypes for the six disjoint name kinds of the language.

use std::fmt;

macro_rules! name_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            /// The name with any freshening suffix (`#n`) removed.
            pub fn base(&self) -> &str {
                base_name(&self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

name_type!(
    /// A process name (`p`, `q`).
    Proc
);
name_type!(
    /// A role name (`A`, `B`).
    Role
);
name_type!(
    /// A session name (`k`).
    Session
);
name_type!(
    /// An operation name (`o`).
    Op
);
name_type!(
    /// A location (`l`), the address of a service.
    Loc
);
name_type!(
    /// A procedure name (`X`).
    ProcName
);

/// Strips a `#n` freshening suffix.
pub fn base_name(s: &str) -> &str {
    match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    }
}

/// Builds the `n`-th fresh variant of a name.
pub fn fresh_variant(base: &str, n: u64) -> String {
    format!("{}#{}", base_name(base), n)
}

/// The kind of an identifier, used to reject names used at two kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NameKind {
    Process,
    Role,
    Session,
    Operation,
    Location,
    Procedure,
}

impl fmt::Display for NameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NameKind::Process => "process",
            NameKind::Role => "role",
            NameKind::Session => "session",
            NameKind::Operation => "operation",
            NameKind::Location => "location",
            NameKind::Procedure => "procedure",
        };
        f.write_str(s)
    }
}

/// Reserved operation used by the compiled session-start handshake.
pub const SYNC_OP: &str = "sync";

/// Checks the identifier lexical rule `[A-Za-z][A-Za-z0-9_]*`, allowing a
/// trailing `#n` freshening suffix produced at runtime.
pub fn is_valid_ident(s: &str) -> bool {
    let (head, suffix) = match s.find('#') {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let mut chars = head.chars();
    let ok_head = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    let ok_suffix = suffix.map_or(true, |d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()));
    ok_head && ok_suffix
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_names_share_base() {
        let k = Session::new(fresh_variant("kd", 3));
        assert_eq!(k.as_str(), "kd#3");
        assert_eq!(k.base(), "kd");
        assert_eq!(fresh_variant("kd#3", 4), "kd#4");
    }

    #[test]
    fn ident_rule() {
        assert!(is_valid_ident("kd"));
        assert!(is_valid_ident("l_A2"));
        assert!(is_valid_ident("a#12"));
        assert!(!is_valid_ident("2a"));
        assert!(!is_valid_ident(""));
        assert!(!is_valid_ident("a#"));
        assert!(!is_valid_ident("$x"));
    }
}
