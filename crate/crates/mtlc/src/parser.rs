//! Lexer, parser, and elaboration of the surface language.
//!
//! The surface syntax is ML-flavored: `sesstype` definitions followed by
//! `fun` definitions (`and` joins mutually recursive groups). Expressions
//! desugar at parse time into the core grammar; function groups elaborate
//! into `fix`-bound lambda chains when the program is turned into a single
//! closed expression.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::ast::{
    CaseArm, ChoiceDir, Expr, ExprKind, FunDef, LetBinder, Linearity, Program, SessDef,
    SessionType, Span, ViewType,
};
use crate::diag::{codes, Diagnostic};
use crate::session::SessionEnv;

/// Constant functions and constructors usable in call position.
pub const PRIMITIVES: &[&str] = &[
    "thread_create",
    "chneg_create",
    "chneg_create2",
    "send",
    "recv",
    "channeg_send",
    "channeg_recv",
    "close",
    "channeg_close",
    "chposneg_link",
    "service_create",
    "service_request",
    "randbit",
];

/// Selector constant generated for a branch-session tag.
pub fn selector_name(def: &str, tag: &str) -> String {
    format!("{def}_{tag}")
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    // keywords
    Fun,
    And,
    Let,
    Val,
    In,
    End,
    If,
    Then,
    Else,
    Case,
    Of,
    Lam,
    Llam,
    Fix,
    Sesstype,
    Nil,
    Snd,
    Rcv,
    Chpos,
    Chneg,
    Service,
    IntTy,
    BoolTy,
    UnitTy,
    True,
    False,
    Div,
    Mod,
    Fst,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    ColonColon,
    Semi,
    Bar,
    Amp,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Arrow,
    LinArrow,
    DArrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.spelling()),
        }
    }

    fn spelling(&self) -> &'static str {
        match self {
            Tok::Fun => "fun",
            Tok::And => "and",
            Tok::Let => "let",
            Tok::Val => "val",
            Tok::In => "in",
            Tok::End => "end",
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::Case => "case",
            Tok::Of => "of",
            Tok::Lam => "lam",
            Tok::Llam => "llam",
            Tok::Fix => "fix",
            Tok::Sesstype => "sesstype",
            Tok::Nil => "nil",
            Tok::Snd => "snd",
            Tok::Rcv => "rcv",
            Tok::Chpos => "chpos",
            Tok::Chneg => "chneg",
            Tok::Service => "service",
            Tok::IntTy => "int",
            Tok::BoolTy => "bool",
            Tok::UnitTy => "unit",
            Tok::True => "true",
            Tok::False => "false",
            Tok::Div => "div",
            Tok::Mod => "mod",
            Tok::Fst => "fst",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::ColonColon => "::",
            Tok::Semi => ";",
            Tok::Bar => "|",
            Tok::Amp => "&",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Eq => "=",
            Tok::Ne => "<>",
            Tok::Arrow => "->",
            Tok::LinArrow => "-<lin>",
            Tok::DArrow => "=>",
            Tok::Ident(_) | Tok::Int(_) | Tok::Eof => "",
        }
    }
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "fun" => Tok::Fun,
        "and" => Tok::And,
        "let" => Tok::Let,
        "val" => Tok::Val,
        "in" => Tok::In,
        "end" => Tok::End,
        "if" => Tok::If,
        "then" => Tok::Then,
        "else" => Tok::Else,
        "case" => Tok::Case,
        "of" => Tok::Of,
        "lam" => Tok::Lam,
        "llam" => Tok::Llam,
        "fix" => Tok::Fix,
        "sesstype" => Tok::Sesstype,
        "nil" => Tok::Nil,
        "snd" => Tok::Snd,
        "rcv" => Tok::Rcv,
        "chpos" => Tok::Chpos,
        "chneg" => Tok::Chneg,
        "service" => Tok::Service,
        "int" => Tok::IntTy,
        "bool" => Tok::BoolTy,
        "unit" => Tok::UnitTy,
        "true" => Tok::True,
        "false" => Tok::False,
        "div" => Tok::Div,
        "mod" => Tok::Mod,
        "fst" => Tok::Fst,
        _ => return None,
    })
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, Diagnostic> {
    let mut toks = Vec::new();
    let mut chars = src.chars().peekable();
    let mut line = 1u32;
    let mut col = 1u32;
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let span = Span::new(line, col);
        let c = match chars.peek().copied() {
            Some(c) => c,
            None => {
                toks.push((Tok::Eof, span));
                return Ok(toks);
            }
        };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '/' => {
                bump!();
                if chars.peek() == Some(&'/') {
                    while let Some(&c) = chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        bump!();
                    }
                } else {
                    toks.push((Tok::Slash, span));
                }
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(&c) = chars.peek() {
                    if let Some(d) = c.to_digit(10) {
                        n = n
                            .checked_mul(10)
                            .and_then(|n| n.checked_add(d as i64))
                            .ok_or_else(|| {
                                Diagnostic::error(span, codes::PARSE, "integer literal overflows")
                            })?;
                        bump!();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Int(n), span));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' || c == '\'' {
                        s.push(c);
                        bump!();
                    } else {
                        break;
                    }
                }
                toks.push((keyword(&s).unwrap_or(Tok::Ident(s)), span));
            }
            '(' => {
                bump!();
                toks.push((Tok::LParen, span));
            }
            ')' => {
                bump!();
                toks.push((Tok::RParen, span));
            }
            '{' => {
                bump!();
                toks.push((Tok::LBrace, span));
            }
            '}' => {
                bump!();
                toks.push((Tok::RBrace, span));
            }
            ',' => {
                bump!();
                toks.push((Tok::Comma, span));
            }
            ';' => {
                bump!();
                toks.push((Tok::Semi, span));
            }
            '|' => {
                bump!();
                toks.push((Tok::Bar, span));
            }
            '&' => {
                bump!();
                toks.push((Tok::Amp, span));
            }
            '+' => {
                bump!();
                toks.push((Tok::Plus, span));
            }
            '*' => {
                bump!();
                toks.push((Tok::Star, span));
            }
            ':' => {
                bump!();
                if chars.peek() == Some(&':') {
                    bump!();
                    toks.push((Tok::ColonColon, span));
                } else {
                    toks.push((Tok::Colon, span));
                }
            }
            '-' => {
                bump!();
                match chars.peek() {
                    Some('>') => {
                        bump!();
                        toks.push((Tok::Arrow, span));
                    }
                    Some('<') => {
                        // -<lin>
                        bump!();
                        let mut tag = String::new();
                        for _ in 0..3 {
                            if let Some(c) = bump!() {
                                tag.push(c);
                            }
                        }
                        if tag != "lin" || bump!() != Some('>') {
                            return Err(Diagnostic::error(span, codes::PARSE, "expected `-<lin>`"));
                        }
                        toks.push((Tok::LinArrow, span));
                    }
                    _ => toks.push((Tok::Minus, span)),
                }
            }
            '<' => {
                bump!();
                match chars.peek() {
                    Some('=') => {
                        bump!();
                        toks.push((Tok::Le, span));
                    }
                    Some('>') => {
                        bump!();
                        toks.push((Tok::Ne, span));
                    }
                    _ => toks.push((Tok::Lt, span)),
                }
            }
            '>' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    toks.push((Tok::Ge, span));
                } else {
                    toks.push((Tok::Gt, span));
                }
            }
            '=' => {
                bump!();
                if chars.peek() == Some(&'>') {
                    bump!();
                    toks.push((Tok::DArrow, span));
                } else {
                    toks.push((Tok::Eq, span));
                }
            }
            other => {
                return Err(Diagnostic::error(
                    span,
                    codes::PARSE,
                    format!("unexpected character `{other}`"),
                ));
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum VarKind {
    Lam,
    Fix,
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    consts: BTreeSet<String>,
    scope: Vec<(String, VarKind)>,
}

enum LetItem {
    Val(LetBinder2, Expr, Span),
    Funs(Vec<FunDef>),
}

enum LetBinder2 {
    One(LetBinder),
    Pair(String, String),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> Result<Span, Diagnostic> {
        if self.peek() == &t {
            Ok(self.next().1)
        } else {
            Err(self.unexpected(&format!("`{}`", t.spelling())))
        }
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        Diagnostic::error(
            self.span(),
            codes::PARSE,
            format!("expected {wanted}, found {}", self.peek().describe()),
        )
    }

    fn ident(&mut self) -> Result<(String, Span), Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.next().1;
                Ok((s, sp))
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    /// Tag names may reuse a few keyword spellings (`nil` in particular).
    fn tag_name(&mut self) -> Result<(String, Span), Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.next().1;
                Ok((s, sp))
            }
            t @ (Tok::Nil | Tok::Snd | Tok::Rcv | Tok::True | Tok::False) => {
                let sp = self.next().1;
                Ok((t.spelling().to_string(), sp))
            }
            _ => Err(self.unexpected("a tag name")),
        }
    }

    fn check_binder(&self, name: &str, span: Span) -> Result<(), Diagnostic> {
        if self.consts.contains(name) {
            return Err(Diagnostic::error(
                span,
                codes::PARSE,
                format!("`{name}` names a built-in or selector constant and cannot be rebound"),
            ));
        }
        Ok(())
    }

    fn lookup_kind(&self, name: &str) -> VarKind {
        for (n, k) in self.scope.iter().rev() {
            if n == name {
                return *k;
            }
        }
        VarKind::Lam
    }

    // ---- types ----

    fn parse_vtype(&mut self) -> Result<ViewType, Diagnostic> {
        let lhs = self.parse_vtype_prod()?;
        match self.peek() {
            Tok::Arrow => {
                self.next();
                let rhs = self.parse_vtype()?;
                Ok(ViewType::arrow(Linearity::Intuit, lhs, rhs))
            }
            Tok::LinArrow => {
                self.next();
                let rhs = self.parse_vtype()?;
                Ok(ViewType::arrow(Linearity::Lin, lhs, rhs))
            }
            _ => Ok(lhs),
        }
    }

    fn parse_vtype_prod(&mut self) -> Result<ViewType, Diagnostic> {
        let lhs = self.parse_vtype_atom()?;
        if self.eat(&Tok::Star) {
            let rhs = self.parse_vtype_prod()?;
            Ok(ViewType::prod(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn parse_vtype_atom(&mut self) -> Result<ViewType, Diagnostic> {
        match self.peek().clone() {
            Tok::IntTy => {
                self.next();
                Ok(ViewType::Int)
            }
            Tok::BoolTy => {
                self.next();
                Ok(ViewType::Bool)
            }
            Tok::UnitTy => {
                self.next();
                Ok(ViewType::Unit)
            }
            Tok::Chpos => {
                self.next();
                self.expect(Tok::LParen)?;
                let s = self.parse_sess()?;
                self.expect(Tok::RParen)?;
                Ok(ViewType::ChPos(s))
            }
            Tok::Chneg => {
                self.next();
                self.expect(Tok::LParen)?;
                let s = self.parse_sess()?;
                self.expect(Tok::RParen)?;
                Ok(ViewType::ChNeg(s))
            }
            Tok::Service => {
                self.next();
                self.expect(Tok::LParen)?;
                let s = self.parse_sess()?;
                self.expect(Tok::RParen)?;
                Ok(ViewType::Service(s))
            }
            Tok::LParen => {
                self.next();
                let t = self.parse_vtype()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => Err(self.unexpected("a type")),
        }
    }

    // ---- sessions ----

    fn parse_sess(&mut self) -> Result<SessionType, Diagnostic> {
        match self.peek().clone() {
            Tok::Nil => {
                self.next();
                Ok(SessionType::Nil)
            }
            Tok::Snd => {
                self.next();
                self.expect(Tok::LParen)?;
                let t = self.parse_vtype()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::ColonColon)?;
                let s = self.parse_sess()?;
                Ok(SessionType::snd(t, s))
            }
            Tok::Rcv => {
                self.next();
                self.expect(Tok::LParen)?;
                let t = self.parse_vtype()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::ColonColon)?;
                let s = self.parse_sess()?;
                Ok(SessionType::rcv(t, s))
            }
            Tok::Ident(n) => {
                self.next();
                Ok(SessionType::Named(n))
            }
            _ => Err(self.unexpected("a session type")),
        }
    }

    fn parse_sessdef_body(&mut self) -> Result<SessionType, Diagnostic> {
        let dir = match self.peek() {
            Tok::Plus if self.peek2() == &Tok::LBrace => Some(ChoiceDir::PosSends),
            Tok::Amp if self.peek2() == &Tok::LBrace => Some(ChoiceDir::NegSends),
            _ => None,
        };
        match dir {
            None => self.parse_sess(),
            Some(dir) => {
                self.next(); // + or &
                self.next(); // {
                let mut arms = Vec::new();
                loop {
                    let (tag, _sp) = self.tag_name()?;
                    self.expect(Tok::Colon)?;
                    let s = self.parse_sess()?;
                    arms.push((tag, s));
                    if !self.eat(&Tok::Bar) {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(SessionType::Branch(dir, arms))
            }
        }
    }

    // ---- expressions ----

    fn parse_expr(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.span();
        let first = self.parse_cmp()?;
        if self.eat(&Tok::Semi) {
            let rest = self.parse_expr()?;
            Ok(Expr::new(
                ExprKind::Let(LetBinder::Unit, Arc::new(first), Arc::new(rest)),
                span,
            ))
        } else {
            Ok(first)
        }
    }

    fn parse_cmp(&mut self) -> Result<Expr, Diagnostic> {
        let lhs = self.parse_add()?;
        let op = match self.peek() {
            Tok::Eq => "eq",
            Tok::Ne => "ne",
            Tok::Lt => "lt",
            Tok::Le => "le",
            Tok::Gt => "gt",
            Tok::Ge => "ge",
            _ => return Ok(lhs),
        };
        let span = self.next().1;
        let rhs = self.parse_add()?;
        Ok(Expr::new(
            ExprKind::ConstApp(op.into(), vec![lhs, rhs]),
            span,
        ))
    }

    fn parse_add(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.parse_mul()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => "add",
                Tok::Minus => "sub",
                _ => return Ok(lhs),
            };
            let span = self.next().1;
            let rhs = self.parse_mul()?;
            lhs = Expr::new(ExprKind::ConstApp(op.into(), vec![lhs, rhs]), span);
        }
    }

    fn parse_mul(&mut self) -> Result<Expr, Diagnostic> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => "mul",
                Tok::Slash | Tok::Div => "div",
                Tok::Mod => "mod",
                _ => return Ok(lhs),
            };
            let span = self.next().1;
            let rhs = self.parse_unary()?;
            lhs = Expr::new(ExprKind::ConstApp(op.into(), vec![lhs, rhs]), span);
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, Diagnostic> {
        match self.peek() {
            Tok::Minus => {
                let span = self.next().1;
                if let Tok::Int(n) = self.peek().clone() {
                    self.next();
                    Ok(Expr::new(ExprKind::Int(-n), span))
                } else {
                    let e = self.parse_unary()?;
                    Ok(Expr::new(
                        ExprKind::ConstApp("sub".into(), vec![Expr::int(0), e]),
                        span,
                    ))
                }
            }
            Tok::If => self.parse_if(),
            Tok::Lam | Tok::Llam => self.parse_lam(),
            Tok::Fix => self.parse_fix(),
            _ => self.parse_postfix(),
        }
    }

    fn parse_postfix(&mut self) -> Result<Expr, Diagnostic> {
        let mut e = self.parse_atom()?;
        while self.peek() == &Tok::LParen {
            let span = self.span();
            let args = self.parse_args()?;
            // constant names become n-ary constant applications
            if let ExprKind::Var(name) = &e.kind {
                if self.consts.contains(name) && self.lookup_kind_is_unbound(name) {
                    e = Expr::new(ExprKind::ConstApp(name.clone(), args), e.span);
                    continue;
                }
            }
            if args.is_empty() {
                e = Expr::new(ExprKind::App(Arc::new(e), Arc::new(Expr::unit())), span);
            } else {
                for a in args {
                    e = Expr::new(ExprKind::App(Arc::new(e), Arc::new(a)), span);
                }
            }
        }
        Ok(e)
    }

    fn lookup_kind_is_unbound(&self, name: &str) -> bool {
        !self.scope.iter().any(|(n, _)| n == name)
    }

    fn parse_args(&mut self) -> Result<Vec<Expr>, Diagnostic> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.parse_expr()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn parse_atom(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Expr::new(ExprKind::Int(n), span))
            }
            Tok::True => {
                self.next();
                Ok(Expr::new(ExprKind::Bool(true), span))
            }
            Tok::False => {
                self.next();
                Ok(Expr::new(ExprKind::Bool(false), span))
            }
            Tok::Ident(name) => {
                self.next();
                let kind = match self.lookup_kind(&name) {
                    VarKind::Fix => ExprKind::FixVar(name),
                    VarKind::Lam => ExprKind::Var(name),
                };
                Ok(Expr::new(kind, span))
            }
            Tok::Fst => {
                self.next();
                self.expect(Tok::LParen)?;
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::Fst(Arc::new(e)), span))
            }
            Tok::Snd => {
                self.next();
                self.expect(Tok::LParen)?;
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::Snd(Arc::new(e)), span))
            }
            Tok::LParen => {
                self.next();
                if self.eat(&Tok::RParen) {
                    return Ok(Expr::new(ExprKind::Unit, span));
                }
                let first = self.parse_expr()?;
                if self.eat(&Tok::Comma) {
                    let second = self.parse_expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::new(
                        ExprKind::Pair(Arc::new(first), Arc::new(second)),
                        span,
                    ))
                } else {
                    self.expect(Tok::RParen)?;
                    Ok(first)
                }
            }
            Tok::Let => self.parse_let(),
            Tok::Case => self.parse_case(),
            _ => Err(self.unexpected("an expression")),
        }
    }

    fn parse_if(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.expect(Tok::If)?;
        let c = self.parse_expr()?;
        self.expect(Tok::Then)?;
        let t = self.parse_expr()?;
        self.expect(Tok::Else)?;
        let e = self.parse_expr()?;
        Ok(Expr::new(
            ExprKind::If(Arc::new(c), Arc::new(t), Arc::new(e)),
            span,
        ))
    }

    fn parse_lam(&mut self) -> Result<Expr, Diagnostic> {
        let lin = match self.next() {
            (Tok::Lam, _) => Linearity::Intuit,
            (Tok::Llam, _) => Linearity::Lin,
            _ => unreachable!(),
        };
        let span = self.expect(Tok::LParen)?;
        let (x, xsp) = self.ident()?;
        self.check_binder(&x, xsp)?;
        self.expect(Tok::Colon)?;
        let ty = self.parse_vtype()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::DArrow)?;
        self.scope.push((x.clone(), VarKind::Lam));
        let body = self.parse_expr();
        self.scope.pop();
        Ok(Expr::new(ExprKind::Lam(lin, x, ty, Arc::new(body?)), span))
    }

    fn parse_fix(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.expect(Tok::Fix)?;
        let (f, fsp) = self.ident()?;
        self.check_binder(&f, fsp)?;
        let ann = if self.eat(&Tok::Colon) {
            Some(self.parse_vtype()?)
        } else {
            None
        };
        self.expect(Tok::DArrow)?;
        self.scope.push((f.clone(), VarKind::Fix));
        let body = self.parse_expr();
        self.scope.pop();
        Ok(Expr::new(ExprKind::Fix(f, ann, Arc::new(body?)), span))
    }

    fn parse_case(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.expect(Tok::Case)?;
        let scrut = self.parse_expr()?;
        self.expect(Tok::Of)?;
        self.eat(&Tok::Bar);
        let mut arms = Vec::new();
        loop {
            let (tag, _) = self.tag_name()?;
            self.expect(Tok::LParen)?;
            let (var, vsp) = self.ident()?;
            self.check_binder(&var, vsp)?;
            self.expect(Tok::RParen)?;
            self.expect(Tok::DArrow)?;
            self.scope.push((var.clone(), VarKind::Lam));
            let body = self.parse_expr();
            self.scope.pop();
            arms.push(CaseArm {
                tag,
                var,
                body: body?,
            });
            if !self.eat(&Tok::Bar) {
                break;
            }
        }
        self.expect(Tok::End)?;
        Ok(Expr::new(ExprKind::Case(Arc::new(scrut), arms), span))
    }

    fn parse_let(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.expect(Tok::Let)?;
        let mut items = Vec::new();
        let mut pushed = 0usize;
        let result = (|| -> Result<Expr, Diagnostic> {
            loop {
                match self.peek() {
                    Tok::Val => {
                        self.next();
                        let (binder, names) = self.parse_valpat()?;
                        let vsp = self.span();
                        self.expect(Tok::Eq)?;
                        let rhs = self.parse_expr()?;
                        for n in &names {
                            self.scope.push((n.clone(), VarKind::Lam));
                            pushed += 1;
                        }
                        items.push(LetItem::Val(binder, rhs, vsp));
                    }
                    Tok::Fun => {
                        let group = self.parse_fun_group()?;
                        for f in &group {
                            self.scope.push((f.name.clone(), VarKind::Lam));
                            pushed += 1;
                        }
                        items.push(LetItem::Funs(group));
                    }
                    Tok::In => break,
                    _ => return Err(self.unexpected("`val`, `fun`, or `in`")),
                }
            }
            self.expect(Tok::In)?;
            let body = self.parse_expr()?;
            self.expect(Tok::End)?;
            Ok(body)
        })();
        for _ in 0..pushed {
            self.scope.pop();
        }
        let mut out = result?;
        for item in items.into_iter().rev() {
            out = match item {
                LetItem::Val(LetBinder2::One(b), rhs, vsp) => {
                    Expr::new(ExprKind::Let(b, Arc::new(rhs), Arc::new(out)), vsp)
                }
                LetItem::Val(LetBinder2::Pair(a, b), rhs, vsp) => {
                    Expr::new(ExprKind::LetPair(a, b, Arc::new(rhs), Arc::new(out)), vsp)
                }
                LetItem::Funs(group) => bind_group(&group, out)?,
            };
        }
        // keep the span of the let keyword on the outermost binding
        out.span = span;
        Ok(out)
    }

    fn parse_valpat(&mut self) -> Result<(LetBinder2, Vec<String>), Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                let sp = self.next().1;
                self.check_binder(&x, sp)?;
                Ok((LetBinder2::One(LetBinder::Name(x.clone())), vec![x]))
            }
            Tok::LParen => {
                self.next();
                if self.eat(&Tok::RParen) {
                    return Ok((LetBinder2::One(LetBinder::Unit), vec![]));
                }
                let (a, asp) = self.ident()?;
                self.check_binder(&a, asp)?;
                self.expect(Tok::Comma)?;
                let (b, bsp) = self.ident()?;
                self.check_binder(&b, bsp)?;
                self.expect(Tok::RParen)?;
                Ok((LetBinder2::Pair(a.clone(), b.clone()), vec![a, b]))
            }
            _ => Err(self.unexpected("a binding pattern")),
        }
    }

    // ---- definitions ----

    fn parse_fun_group(&mut self) -> Result<Vec<FunDef>, Diagnostic> {
        let span = self.expect(Tok::Fun)?;
        let mut group = vec![self.parse_fundef(span)?];
        while self.peek() == &Tok::And {
            let span = self.next().1;
            group.push(self.parse_fundef(span)?);
        }
        Ok(group)
    }

    fn parse_fundef(&mut self, span: Span) -> Result<FunDef, Diagnostic> {
        let (name, nsp) = self.ident()?;
        self.check_binder(&name, nsp)?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let (p, psp) = self.ident()?;
                self.check_binder(&p, psp)?;
                self.expect(Tok::Colon)?;
                let ty = self.parse_vtype()?;
                params.push((p, ty));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(Tok::RParen)?;
        }
        let ret = if self.eat(&Tok::Colon) {
            Some(self.parse_vtype()?)
        } else {
            None
        };
        self.expect(Tok::Eq)?;
        for (p, _) in &params {
            self.scope.push((p.clone(), VarKind::Lam));
        }
        let body = self.parse_expr();
        for _ in &params {
            self.scope.pop();
        }
        Ok(FunDef {
            name,
            params,
            ret,
            body: body?,
            span,
        })
    }

    fn parse_program(&mut self) -> Result<Program, Diagnostic> {
        let mut sess_defs = Vec::new();
        while self.peek() == &Tok::Sesstype {
            let span = self.next().1;
            let (name, _) = self.ident()?;
            self.expect(Tok::Eq)?;
            let body = self.parse_sessdef_body()?;
            // register selector constants before function bodies parse
            if let SessionType::Branch(_, arms) = &body {
                for (tag, _) in arms {
                    self.consts.insert(selector_name(&name, tag));
                }
            }
            sess_defs.push(SessDef { name, body, span });
        }
        SessionEnv::new(&sess_defs)
            .map_err(|e| Diagnostic::error(Span::none(), codes::SESSION, e.to_string()))?;
        let mut fun_groups = Vec::new();
        while self.peek() == &Tok::Fun {
            fun_groups.push(self.parse_fun_group()?);
        }
        if self.peek() != &Tok::Eof {
            return Err(self.unexpected("`sesstype`, `fun`, or end of input"));
        }
        Ok(Program {
            sess_defs,
            fun_groups,
        })
    }
}

/// Parse a whole program. Selector constants for branch sessions come into
/// scope as their `sesstype` definitions are read, before any `fun` bodies.
pub fn parse(src: &str) -> Result<Program, Diagnostic> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        consts: PRIMITIVES.iter().map(|s| s.to_string()).collect(),
        scope: Vec::new(),
    };
    p.parse_program()
}

/// Parse a single expression (used by tests and the pretty-print cycle).
pub fn parse_expr(src: &str) -> Result<Expr, Diagnostic> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        consts: PRIMITIVES.iter().map(|s| s.to_string()).collect(),
        scope: Vec::new(),
    };
    let e = p.parse_expr()?;
    if p.peek() != &Tok::Eof {
        return Err(p.unexpected("end of input"));
    }
    Ok(e)
}

/// Bind one function group around `rest`. Non-recursive members become
/// plain `let`s; recursive groups become a `fix` over (nested pairs of)
/// lambda chains, with member references routed through projections.
pub fn bind_group(group: &[FunDef], rest: Expr) -> Result<Expr, Diagnostic> {
    let names: Vec<&String> = group.iter().map(|f| &f.name).collect();
    let recursive = group.iter().any(|f| {
        let fv = f.body.free_vars();
        names.iter().any(|n| fv.contains(*n))
    });
    if !recursive {
        let mut out = rest;
        for f in group.iter().rev() {
            let value = lam_chain(f);
            let value = match &f.ret {
                // an annotated definition is checked against its full type
                // by wrapping it in a (possibly vacuous) fix
                Some(_) => Expr::new(
                    ExprKind::Fix(f.name.clone(), Some(fun_type(f)?), Arc::new(value)),
                    f.span,
                ),
                None => value,
            };
            out = Expr::new(
                ExprKind::Let(
                    LetBinder::Name(f.name.clone()),
                    Arc::new(value),
                    Arc::new(out),
                ),
                f.span,
            );
        }
        return Ok(out);
    }
    for f in group {
        if f.ret.is_none() {
            return Err(Diagnostic::error(
                f.span,
                codes::ELAB,
                format!(
                    "recursive function `{}` needs a return type annotation",
                    f.name
                ),
            ));
        }
    }
    if group.len() == 1 {
        let f = &group[0];
        let mut theta = std::collections::BTreeMap::new();
        theta.insert(
            f.name.clone(),
            Expr::synth(ExprKind::FixVar(f.name.clone())),
        );
        let value = lam_chain(f).subst(&theta);
        let fix = Expr::new(
            ExprKind::Fix(f.name.clone(), Some(fun_type(f)?), Arc::new(value)),
            f.span,
        );
        return Ok(Expr::new(
            ExprKind::Let(
                LetBinder::Name(f.name.clone()),
                Arc::new(fix),
                Arc::new(rest),
            ),
            f.span,
        ));
    }
    // mutual group: fix over nested pairs
    let mut avoid: BTreeSet<String> = rest.free_vars();
    for f in group {
        avoid.extend(f.body.free_vars());
        avoid.insert(f.name.clone());
    }
    let bundle_var = {
        let mut i = 0;
        loop {
            let cand = format!("_g{i}");
            if !avoid.contains(&cand) {
                break cand;
            }
            i += 1;
        }
    };
    let n = group.len();
    let proj = |j: usize| -> Expr {
        let mut e = Expr::synth(ExprKind::FixVar(bundle_var.clone()));
        for _ in 0..j {
            e = Expr::synth(ExprKind::Snd(Arc::new(e)));
        }
        if j < n - 1 {
            e = Expr::synth(ExprKind::Fst(Arc::new(e)));
        }
        e
    };
    let mut theta = std::collections::BTreeMap::new();
    for (j, f) in group.iter().enumerate() {
        theta.insert(f.name.clone(), proj(j));
    }
    let values: Vec<Expr> = group.iter().map(|f| lam_chain(f).subst(&theta)).collect();
    let types: Vec<ViewType> = group.iter().map(fun_type).collect::<Result<_, _>>()?;
    let bundle = values
        .into_iter()
        .rev()
        .reduce(|acc, v| Expr::pair(v, acc))
        .expect("nonempty group");
    let bundle_ty = types
        .into_iter()
        .rev()
        .reduce(|acc, t| ViewType::prod(t, acc))
        .expect("nonempty group");
    let fix = Expr::new(
        ExprKind::Fix(bundle_var.clone(), Some(bundle_ty), Arc::new(bundle)),
        group[0].span,
    );
    // unpack with a chain of let-pairs over fresh rest-variables
    let mut rest_vars = Vec::new();
    for i in 0..n.saturating_sub(2) {
        let mut k = 0;
        let var = loop {
            let cand = format!("_r{i}_{k}");
            if !avoid.contains(&cand) {
                break cand;
            }
            k += 1;
        };
        avoid.insert(var.clone());
        rest_vars.push(var);
    }
    let mut out = rest;
    // innermost unpacking first: build from the tail
    let mut pairs: Vec<(String, String, Expr)> = Vec::new();
    let mut source = fix;
    for (j, f) in group.iter().enumerate() {
        if j + 2 == n {
            pairs.push((f.name.clone(), group[j + 1].name.clone(), source));
            break;
        }
        let rv = rest_vars[j].clone();
        pairs.push((f.name.clone(), rv.clone(), source));
        source = Expr::synth(ExprKind::Var(rv));
    }
    for (a, b, src) in pairs.into_iter().rev() {
        out = Expr::synth(ExprKind::LetPair(a, b, Arc::new(src), Arc::new(out)));
    }
    Ok(out)
}

fn lam_chain(f: &FunDef) -> Expr {
    if f.params.is_empty() {
        return Expr::synth(ExprKind::Lam(
            Linearity::Intuit,
            "_".to_string(),
            ViewType::Unit,
            Arc::new(f.body.clone()),
        ));
    }
    let mut e = f.body.clone();
    for (i, (p, ty)) in f.params.iter().enumerate().rev() {
        let lin = if i == 0 {
            Linearity::Intuit
        } else {
            Linearity::Lin
        };
        e = Expr::synth(ExprKind::Lam(lin, p.clone(), ty.clone(), Arc::new(e)));
    }
    e
}

fn fun_type(f: &FunDef) -> Result<ViewType, Diagnostic> {
    let ret = f.ret.clone().ok_or_else(|| {
        Diagnostic::error(
            f.span,
            codes::ELAB,
            format!("function `{}` needs a return type annotation here", f.name),
        )
    })?;
    if f.params.is_empty() {
        return Ok(ViewType::arrow(Linearity::Intuit, ViewType::Unit, ret));
    }
    let mut ty = ret;
    for (i, (_, pty)) in f.params.iter().enumerate().rev() {
        let lin = if i == 0 {
            Linearity::Intuit
        } else {
            Linearity::Lin
        };
        ty = ViewType::arrow(lin, pty.clone(), ty);
    }
    Ok(ty)
}

impl Program {
    /// Elaborate the whole program into one closed expression: every
    /// function group wraps the body of `main` in definition order.
    pub fn elaborate(&self) -> Result<Expr, Diagnostic> {
        let mut main = None;
        for g in &self.fun_groups {
            for f in g {
                if f.name == "main" {
                    if g.len() != 1 {
                        return Err(Diagnostic::error(
                            f.span,
                            codes::MAIN,
                            "`main` cannot be part of an `and` group",
                        ));
                    }
                    if !f.params.is_empty() {
                        return Err(Diagnostic::error(
                            f.span,
                            codes::MAIN,
                            "`main` takes no parameters",
                        ));
                    }
                    if main.is_some() {
                        return Err(Diagnostic::error(
                            f.span,
                            codes::MAIN,
                            "`main` is defined twice",
                        ));
                    }
                    main = Some(f);
                }
            }
        }
        let main = main.ok_or_else(|| {
            Diagnostic::error(Span::none(), codes::MAIN, "program has no `main` function")
        })?;
        let mut out = main.body.clone();
        for g in self.fun_groups.iter().rev() {
            if g.len() == 1 && g[0].name == "main" {
                continue;
            }
            out = bind_group(g, out)?;
        }
        Ok(out)
    }
}
