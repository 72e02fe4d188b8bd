//! Applied choreographies with correlation-based process addressing.

pub mod chor;
pub mod compiler;
pub mod dcc;
pub mod dcc_runtime;
pub mod deployment;
pub mod epp;
pub mod expr;
pub mod harness;
pub mod keygen;
pub mod names;
pub mod parser;
pub mod printer;
pub mod program;
pub mod semantics;
pub mod tree;
pub mod types;
pub mod typing;
