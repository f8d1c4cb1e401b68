//! A multi-threaded lambda-calculus with session-typed channels: surface
//! language, linear type checker, pool interpreter with a deterministic
//! seeded scheduler, and a deadlock-freedom analysis over per-thread
//! channel sets.

pub mod ast;
pub mod corpus;
pub mod dfcheck;
pub mod diag;
pub mod parser;
pub mod pretty;
pub mod runtime;
pub mod session;
pub mod typecheck;

pub use ast::{Endpoint, Expr, ExprKind, Polarity, Program, SessionType, ViewType};
