//! Diagnostics shared by the parser and the type checker.

use std::fmt;

use crate::ast::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Error,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Level::Error => write!(f, "error"),
        }
    }
}

pub mod codes {
    pub const PARSE: &str = "E-PARSE";
    pub const SESSION: &str = "E-SESSION";
    pub const ELAB: &str = "E-ELAB";
    pub const MAIN: &str = "E-MAIN";
    pub const UNBOUND: &str = "E-UNBOUND";
    pub const LIN_REUSE: &str = "E-LIN-REUSE";
    pub const LIN_UNUSED: &str = "E-LIN-UNUSED";
    pub const LIN_SHADOW: &str = "E-LIN-SHADOW";
    pub const IF_LINEAR: &str = "E-IF-LINEAR";
    pub const RHO_MISMATCH: &str = "E-RHO-MISMATCH";
    pub const TYPE_MISMATCH: &str = "E-TYPE-MISMATCH";
    pub const NO_UNIFIER: &str = "E-NO-UNIFIER";
    pub const ARITY: &str = "E-ARITY";
    pub const UNKNOWN_CONST: &str = "E-UNKNOWN-CONST";
    pub const LAM_CAPTURE: &str = "E-LAM-CAPTURE";
    pub const LAM_RHO: &str = "E-LAM-RHO";
    pub const FIX: &str = "E-FIX";
    pub const CASE_ARMS: &str = "E-CASE-ARMS";
    pub const CASE_POLARITY: &str = "E-CASE-POLARITY";
    pub const POOL_REGULARITY: &str = "E-POOL-REGULARITY";
    pub const POOL_MATCH: &str = "E-POOL-MATCH";
    pub const PURITY: &str = "E-PURITY";
    pub const CANONICAL: &str = "E-CANONICAL";
}

/// One finding. Rendered as `LEVEL file:line:col CODE message`.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub level: Level,
    pub span: Span,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    pub fn error(span: Span, code: &'static str, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            level: Level::Error,
            span,
            code,
            message: message.into(),
        }
    }

    pub fn render(&self, file: &str) -> String {
        format!(
            "{} {}:{}:{} {} {}",
            self.level, file, self.span.line, self.span.col, self.code, self.message
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "{} {}:{} {} {}",
            self.level, self.span.line, self.span.col, self.code, self.message
        )
    }
}
