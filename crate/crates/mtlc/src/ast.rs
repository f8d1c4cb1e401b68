//! Abstract syntax: expressions, values, viewtypes, session types, and the
//! resource multiset computed over expressions.
//!
//! Channel endpoints are the only resource constants. An endpoint is a
//! channel id plus a polarity; the positive and negative endpoints of one
//! channel share the id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

/// Source position (1-based). `Span::none()` marks synthesized nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Span {
        Span { line, col }
    }

    pub fn none() -> Span {
        Span { line: 0, col: 0 }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    pub fn flip(self) -> Polarity {
        match self {
            Polarity::Pos => Polarity::Neg,
            Polarity::Neg => Polarity::Pos,
        }
    }
}

/// One end of a channel: `ch_i` (positive) or `~ch_i` (negative).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub id: u64,
    pub pol: Polarity,
}

impl Endpoint {
    pub fn pos(id: u64) -> Endpoint {
        Endpoint {
            id,
            pol: Polarity::Pos,
        }
    }

    pub fn neg(id: u64) -> Endpoint {
        Endpoint {
            id,
            pol: Polarity::Neg,
        }
    }

    pub fn dual(self) -> Endpoint {
        Endpoint {
            id: self.id,
            pol: self.pol.flip(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self.pol {
            Polarity::Pos => write!(f, "ch_{}", self.id),
            Polarity::Neg => write!(f, "~ch_{}", self.id),
        }
    }
}

/// Finite multiset of channel endpoints, the image of the resource function.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Resources(pub BTreeMap<Endpoint, usize>);

impl Resources {
    pub fn empty() -> Resources {
        Resources(BTreeMap::new())
    }

    pub fn singleton(ep: Endpoint) -> Resources {
        let mut m = BTreeMap::new();
        m.insert(ep, 1);
        Resources(m)
    }

    pub fn insert(&mut self, ep: Endpoint) {
        *self.0.entry(ep).or_insert(0) += 1;
    }

    /// Multiset union.
    pub fn union(mut self, other: Resources) -> Resources {
        for (ep, n) in other.0 {
            *self.0.entry(ep).or_insert(0) += n;
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, ep: Endpoint) -> bool {
        self.0.contains_key(&ep)
    }

    /// True when no endpoint occurs more than once.
    pub fn is_duplicate_free(&self) -> bool {
        self.0.values().all(|&n| n == 1)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = Endpoint> + '_ {
        self.0.keys().copied()
    }

    pub fn as_set(&self) -> BTreeSet<Endpoint> {
        self.0.keys().copied().collect()
    }
}

impl fmt::Display for Resources {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for (ep, n) in &self.0 {
            for _ in 0..*n {
                if !first {
                    write!(f, ", ")?;
                }
                write!(f, "{ep}")?;
                first = false;
            }
        }
        write!(f, "}}")
    }
}

/// Who picks the tag of a branch session: the positive endpoint (internal
/// choice) or the negative endpoint (external choice).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChoiceDir {
    PosSends,
    NegSends,
}

impl ChoiceDir {
    pub fn flip(self) -> ChoiceDir {
        match self {
            ChoiceDir::PosSends => ChoiceDir::NegSends,
            ChoiceDir::NegSends => ChoiceDir::PosSends,
        }
    }
}

/// Session types, written from the point of view of the positive endpoint:
/// `snd` means the positive side sends, `rcv` that it receives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionType {
    Nil,
    /// Dual of `Nil`; a distinct constant related to `Nil` only by duality.
    NilBar,
    Send(Box<ViewType>, Box<SessionType>),
    Recv(Box<ViewType>, Box<SessionType>),
    /// Reference to a session definition.
    Named(String),
    /// Deferred dual of a named definition; resolved by unfolding.
    DualNamed(String),
    /// Tagged choice; a tag is transmitted and the session continues with
    /// the chosen arm. Only definition bodies carry this form in source.
    Branch(ChoiceDir, Vec<(String, SessionType)>),
    /// Schema variable ranging over session types; only in constant types.
    SVar(u32),
}

impl SessionType {
    pub fn snd(t: ViewType, s: SessionType) -> SessionType {
        SessionType::Send(Box::new(t), Box::new(s))
    }

    pub fn rcv(t: ViewType, s: SessionType) -> SessionType {
        SessionType::Recv(Box::new(t), Box::new(s))
    }
}

impl fmt::Display for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            SessionType::Nil => write!(f, "nil"),
            SessionType::NilBar => write!(f, "~nil"),
            SessionType::Send(t, s) => write!(f, "snd({t}) :: {s}"),
            SessionType::Recv(t, s) => write!(f, "rcv({t}) :: {s}"),
            SessionType::Named(n) => write!(f, "{n}"),
            SessionType::DualNamed(n) => write!(f, "~{n}"),
            SessionType::Branch(dir, arms) => {
                match dir {
                    ChoiceDir::PosSends => write!(f, "+{{ ")?,
                    ChoiceDir::NegSends => write!(f, "&{{ ")?,
                }
                for (i, (tag, s)) in arms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{tag}: {s}")?;
                }
                write!(f, " }}")
            }
            SessionType::SVar(i) => write!(f, "'s{i}"),
        }
    }
}

/// Linearity mark on arrows: `->` may be applied many times, `-<lin>`
/// exactly once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linearity {
    Intuit,
    Lin,
}

/// Possibly-linear types. Products are kept in a single normalized
/// constructor: a product is nonlinear exactly when both components are.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewType {
    /// Schema variable ranging over nonlinear types only.
    TVar(u32),
    /// Schema variable ranging over all viewtypes.
    TVarLin(u32),
    Int,
    Bool,
    Unit,
    Prod(Box<ViewType>, Box<ViewType>),
    Arrow(Linearity, Box<ViewType>, Box<ViewType>),
    ChPos(SessionType),
    ChNeg(SessionType),
    /// A persistent server from which fresh sessions can be requested;
    /// nonlinear by construction.
    Service(SessionType),
}

impl ViewType {
    pub fn prod(a: ViewType, b: ViewType) -> ViewType {
        ViewType::Prod(Box::new(a), Box::new(b))
    }

    pub fn arrow(lin: Linearity, a: ViewType, b: ViewType) -> ViewType {
        ViewType::Arrow(lin, Box::new(a), Box::new(b))
    }

    /// True viewtypes must be consumed exactly once.
    pub fn is_linear(&self) -> bool {
        match self {
            ViewType::TVar(_) | ViewType::Int | ViewType::Bool | ViewType::Unit => false,
            ViewType::TVarLin(_) => true,
            ViewType::Prod(a, b) => a.is_linear() || b.is_linear(),
            ViewType::Arrow(Linearity::Intuit, _, _) => false,
            ViewType::Arrow(Linearity::Lin, _, _) => true,
            ViewType::ChPos(_) | ViewType::ChNeg(_) => true,
            ViewType::Service(_) => false,
        }
    }
}

impl fmt::Display for ViewType {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            ViewType::TVar(i) => write!(f, "'a{i}"),
            ViewType::TVarLin(i) => write!(f, "'l{i}"),
            ViewType::Int => write!(f, "int"),
            ViewType::Bool => write!(f, "bool"),
            ViewType::Unit => write!(f, "unit"),
            ViewType::Prod(a, b) => {
                // left operand of * binds tighter than arrows; parenthesize
                // nested arrows and right-nested products for re-parsing
                match a.as_ref() {
                    ViewType::Arrow(..) | ViewType::Prod(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                write!(f, " * ")?;
                match b.as_ref() {
                    ViewType::Arrow(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            ViewType::Arrow(lin, a, b) => {
                match a.as_ref() {
                    ViewType::Arrow(..) => write!(f, "({a})")?,
                    _ => write!(f, "{a}")?,
                }
                match lin {
                    Linearity::Intuit => write!(f, " -> {b}"),
                    Linearity::Lin => write!(f, " -<lin> {b}"),
                }
            }
            ViewType::ChPos(s) => write!(f, "chpos({s})"),
            ViewType::ChNeg(s) => write!(f, "chneg({s})"),
            ViewType::Service(s) => write!(f, "service({s})"),
        }
    }
}

/// Binder of a `let val` form: a name or the unit pattern `()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LetBinder {
    Name(String),
    /// `val () = e`; requires the bound expression to have type unit.
    Unit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseArm {
    pub tag: String,
    pub var: String,
    pub body: Expr,
}

/// Expressions. `Expr` carries a source span which is ignored by equality.
#[derive(Clone, Debug)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    /// Lam-variable; a value.
    Var(String),
    /// Fix-variable; not a value.
    FixVar(String),
    /// Channel endpoint constant; appears only at runtime.
    ResConst(Endpoint),
    Int(i64),
    Bool(bool),
    /// Application of a constant (function or constructor) to arguments.
    ConstApp(String, Vec<Expr>),
    Unit,
    Pair(Arc<Expr>, Arc<Expr>),
    Fst(Arc<Expr>),
    Snd(Arc<Expr>),
    /// `let val (x1, x2) = e1 in e2 end`
    LetPair(String, String, Arc<Expr>, Arc<Expr>),
    /// `let val x = e1 in e2 end`
    Let(LetBinder, Arc<Expr>, Arc<Expr>),
    If(Arc<Expr>, Arc<Expr>, Arc<Expr>),
    /// `lam (x: T) => e` or `llam (x: T) => e`
    Lam(Linearity, String, ViewType, Arc<Expr>),
    App(Arc<Expr>, Arc<Expr>),
    /// `fix f : T => v`; the body must be a syntactic value.
    Fix(String, Option<ViewType>, Arc<Expr>),
    /// Session-tag dispatch on a channel at a branch-defined session.
    Case(Arc<Expr>, Vec<CaseArm>),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Expr) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr { kind, span }
    }

    pub fn synth(kind: ExprKind) -> Expr {
        Expr {
            kind,
            span: Span::none(),
        }
    }

    pub fn unit() -> Expr {
        Expr::synth(ExprKind::Unit)
    }

    pub fn var(name: &str) -> Expr {
        Expr::synth(ExprKind::Var(name.to_string()))
    }

    pub fn int(n: i64) -> Expr {
        Expr::synth(ExprKind::Int(n))
    }

    pub fn boolean(b: bool) -> Expr {
        Expr::synth(ExprKind::Bool(b))
    }

    pub fn res(ep: Endpoint) -> Expr {
        Expr::synth(ExprKind::ResConst(ep))
    }

    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::synth(ExprKind::Pair(Arc::new(a), Arc::new(b)))
    }

    pub fn app(f: Expr, a: Expr) -> Expr {
        Expr::synth(ExprKind::App(Arc::new(f), Arc::new(a)))
    }

    pub fn const_app(name: &str, args: Vec<Expr>) -> Expr {
        Expr::synth(ExprKind::ConstApp(name.to_string(), args))
    }

    pub fn lam(lin: Linearity, x: &str, ty: ViewType, body: Expr) -> Expr {
        Expr::synth(ExprKind::Lam(lin, x.to_string(), ty, Arc::new(body)))
    }

    /// The value grammar: variables, endpoint constants, literals, saturated
    /// constructor applications, unit, pairs of values, and lambdas.
    /// Fix-variables and fix-expressions are not values.
    pub fn is_value(&self) -> bool {
        match &self.kind {
            ExprKind::Var(_)
            | ExprKind::ResConst(_)
            | ExprKind::Int(_)
            | ExprKind::Bool(_)
            | ExprKind::Unit
            | ExprKind::Lam(..) => true,
            ExprKind::Pair(a, b) => a.is_value() && b.is_value(),
            ExprKind::ConstApp(name, args) => {
                is_constructor_const(name) && args.iter().all(Expr::is_value)
            }
            _ => false,
        }
    }

    /// The resource multiset of this expression. The clause for `if` counts
    /// only the first branch; the type checker guarantees both branches
    /// carry the same resources.
    pub fn resources(&self) -> Resources {
        match &self.kind {
            ExprKind::Var(_) | ExprKind::FixVar(_) => Resources::empty(),
            ExprKind::ResConst(ep) => Resources::singleton(*ep),
            ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Unit => Resources::empty(),
            ExprKind::ConstApp(_, args) => args
                .iter()
                .fold(Resources::empty(), |acc, a| acc.union(a.resources())),
            ExprKind::Pair(a, b) => a.resources().union(b.resources()),
            ExprKind::Fst(e) | ExprKind::Snd(e) => e.resources(),
            ExprKind::LetPair(_, _, e1, e2) | ExprKind::Let(_, e1, e2) => {
                e1.resources().union(e2.resources())
            }
            ExprKind::If(c, t, _) => c.resources().union(t.resources()),
            ExprKind::Lam(_, _, _, body) => body.resources(),
            ExprKind::App(f, a) => f.resources().union(a.resources()),
            ExprKind::Fix(_, _, v) => v.resources(),
            ExprKind::Case(scrut, arms) => {
                let base = scrut.resources();
                match arms.first() {
                    Some(arm) => base.union(arm.body.resources()),
                    None => base,
                }
            }
        }
    }

    /// Free lam- and fix-variables.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut acc = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut acc);
        acc
    }

    fn collect_free(&self, bound: &mut Vec<String>, acc: &mut BTreeSet<String>) {
        match &self.kind {
            ExprKind::Var(x) | ExprKind::FixVar(x) => {
                if !bound.iter().any(|b| b == x) {
                    acc.insert(x.clone());
                }
            }
            ExprKind::ResConst(_) | ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Unit => {}
            ExprKind::ConstApp(_, args) => {
                for a in args {
                    a.collect_free(bound, acc);
                }
            }
            ExprKind::Pair(a, b) => {
                a.collect_free(bound, acc);
                b.collect_free(bound, acc);
            }
            ExprKind::Fst(e) | ExprKind::Snd(e) => e.collect_free(bound, acc),
            ExprKind::LetPair(x1, x2, e1, e2) => {
                e1.collect_free(bound, acc);
                bound.push(x1.clone());
                bound.push(x2.clone());
                e2.collect_free(bound, acc);
                bound.pop();
                bound.pop();
            }
            ExprKind::Let(b, e1, e2) => {
                e1.collect_free(bound, acc);
                match b {
                    LetBinder::Name(x) => {
                        bound.push(x.clone());
                        e2.collect_free(bound, acc);
                        bound.pop();
                    }
                    LetBinder::Unit => e2.collect_free(bound, acc),
                }
            }
            ExprKind::If(c, t, e) => {
                c.collect_free(bound, acc);
                t.collect_free(bound, acc);
                e.collect_free(bound, acc);
            }
            ExprKind::Lam(_, x, _, body) => {
                bound.push(x.clone());
                body.collect_free(bound, acc);
                bound.pop();
            }
            ExprKind::App(f, a) => {
                f.collect_free(bound, acc);
                a.collect_free(bound, acc);
            }
            ExprKind::Fix(f, _, v) => {
                bound.push(f.clone());
                v.collect_free(bound, acc);
                bound.pop();
            }
            ExprKind::Case(scrut, arms) => {
                scrut.collect_free(bound, acc);
                for arm in arms {
                    bound.push(arm.var.clone());
                    arm.body.collect_free(bound, acc);
                    bound.pop();
                }
            }
        }
    }

    /// Capture-avoiding simultaneous substitution. The map may bind both
    /// lam-variables (to values) and fix-variables (to expressions).
    /// Untouched subtrees are shared with the input.
    pub fn subst(&self, theta: &BTreeMap<String, Expr>) -> Expr {
        if theta.is_empty() {
            return self.clone();
        }
        let mut range_fv = BTreeSet::new();
        for e in theta.values() {
            range_fv.extend(e.free_vars());
        }
        subst_expr(self, theta, &range_fv).unwrap_or_else(|| self.clone())
    }
}

/// `None` means the substitution does not touch this subtree.
fn subst_expr(
    e: &Expr,
    theta: &BTreeMap<String, Expr>,
    range_fv: &BTreeSet<String>,
) -> Option<Expr> {
    let span = e.span;
    let rebuilt = |kind| Some(Expr { kind, span });
    let arc = |orig: &Arc<Expr>, new: Option<Expr>| match new {
        Some(e) => Arc::new(e),
        None => Arc::clone(orig),
    };
    match &e.kind {
        ExprKind::Var(x) | ExprKind::FixVar(x) => theta.get(x).cloned(),
        ExprKind::ResConst(_) | ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Unit => None,
        ExprKind::ConstApp(c, args) => {
            let news: Vec<Option<Expr>> = args
                .iter()
                .map(|a| subst_expr(a, theta, range_fv))
                .collect();
            if news.iter().all(Option::is_none) {
                return None;
            }
            let args = args
                .iter()
                .zip(news)
                .map(|(a, n)| n.unwrap_or_else(|| a.clone()))
                .collect();
            rebuilt(ExprKind::ConstApp(c.clone(), args))
        }
        ExprKind::Pair(a, b) => {
            let na = subst_expr(a, theta, range_fv);
            let nb = subst_expr(b, theta, range_fv);
            if na.is_none() && nb.is_none() {
                return None;
            }
            rebuilt(ExprKind::Pair(arc(a, na), arc(b, nb)))
        }
        ExprKind::Fst(x) => {
            let n = subst_expr(x, theta, range_fv)?;
            rebuilt(ExprKind::Fst(Arc::new(n)))
        }
        ExprKind::Snd(x) => {
            let n = subst_expr(x, theta, range_fv)?;
            rebuilt(ExprKind::Snd(Arc::new(n)))
        }
        ExprKind::LetPair(x1, x2, e1, e2) => {
            let n1 = subst_expr(e1, theta, range_fv);
            let under = subst_under(&[x1.clone(), x2.clone()], e2, theta, range_fv, false);
            match (&n1, &under) {
                (None, None) => None,
                _ => {
                    let (binders, n2) = under
                        .map(|(bs, e)| (bs, Some(e)))
                        .unwrap_or_else(|| (vec![x1.clone(), x2.clone()], None));
                    rebuilt(ExprKind::LetPair(
                        binders[0].clone(),
                        binders[1].clone(),
                        arc(e1, n1),
                        arc(e2, n2),
                    ))
                }
            }
        }
        ExprKind::Let(b, e1, e2) => {
            let n1 = subst_expr(e1, theta, range_fv);
            let under = match b {
                LetBinder::Name(x) => {
                    subst_under(std::slice::from_ref(x), e2, theta, range_fv, false)
                        .map(|(bs, e)| (LetBinder::Name(bs[0].clone()), e))
                }
                LetBinder::Unit => subst_expr(e2, theta, range_fv).map(|e| (LetBinder::Unit, e)),
            };
            match (&n1, &under) {
                (None, None) => None,
                _ => {
                    let (binder, n2) = under
                        .map(|(bi, e)| (bi, Some(e)))
                        .unwrap_or_else(|| (b.clone(), None));
                    rebuilt(ExprKind::Let(binder, arc(e1, n1), arc(e2, n2)))
                }
            }
        }
        ExprKind::If(c, t, f) => {
            let nc = subst_expr(c, theta, range_fv);
            let nt = subst_expr(t, theta, range_fv);
            let nf = subst_expr(f, theta, range_fv);
            if nc.is_none() && nt.is_none() && nf.is_none() {
                return None;
            }
            rebuilt(ExprKind::If(arc(c, nc), arc(t, nt), arc(f, nf)))
        }
        ExprKind::Lam(lin, x, ty, body) => {
            let (binders, nb) = subst_under(std::slice::from_ref(x), body, theta, range_fv, false)?;
            rebuilt(ExprKind::Lam(
                *lin,
                binders[0].clone(),
                ty.clone(),
                Arc::new(nb),
            ))
        }
        ExprKind::App(f, a) => {
            let nf = subst_expr(f, theta, range_fv);
            let na = subst_expr(a, theta, range_fv);
            if nf.is_none() && na.is_none() {
                return None;
            }
            rebuilt(ExprKind::App(arc(f, nf), arc(a, na)))
        }
        ExprKind::Fix(f, ty, v) => {
            let (binders, nv) = subst_under(std::slice::from_ref(f), v, theta, range_fv, true)?;
            rebuilt(ExprKind::Fix(binders[0].clone(), ty.clone(), Arc::new(nv)))
        }
        ExprKind::Case(scrut, arms) => {
            let ns = subst_expr(scrut, theta, range_fv);
            let new_arms: Vec<Option<(Vec<String>, Expr)>> = arms
                .iter()
                .map(|arm| {
                    subst_under(
                        std::slice::from_ref(&arm.var),
                        &arm.body,
                        theta,
                        range_fv,
                        false,
                    )
                })
                .collect();
            if ns.is_none() && new_arms.iter().all(Option::is_none) {
                return None;
            }
            let arms = arms
                .iter()
                .zip(new_arms)
                .map(|(arm, n)| match n {
                    Some((bs, body)) => CaseArm {
                        tag: arm.tag.clone(),
                        var: bs[0].clone(),
                        body,
                    },
                    None => arm.clone(),
                })
                .collect();
            rebuilt(ExprKind::Case(arc(scrut, ns), arms))
        }
    }
}

/// Substitute under binders, renaming any binder that would capture a
/// free variable of the substitution range. `None` when nothing changes.
fn subst_under(
    binders: &[String],
    body: &Expr,
    theta: &BTreeMap<String, Expr>,
    range_fv: &BTreeSet<String>,
    fix_binder: bool,
) -> Option<(Vec<String>, Expr)> {
    let shadowed = binders.iter().any(|b| theta.contains_key(b));
    let mut new_binders: Vec<String> = binders.to_vec();
    let captured: Vec<bool> = binders.iter().map(|b| range_fv.contains(b)).collect();
    if !shadowed && !captured.iter().any(|&c| c) {
        // the common fast path: no shadowing, no capture risk
        let n = subst_expr(body, theta, range_fv)?;
        return Some((new_binders, n));
    }
    let mut inner: BTreeMap<String, Expr> = theta
        .iter()
        .filter(|(k, _)| !binders.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let really_captured: Vec<bool> = binders
        .iter()
        .enumerate()
        .map(|(i, b)| captured[i] && inner.values().any(|e| e.free_vars().contains(b)))
        .collect();
    if really_captured.iter().any(|&c| c) {
        let mut avoid: BTreeSet<String> = range_fv.clone();
        avoid.extend(body.free_vars());
        for (i, b) in new_binders.iter_mut().enumerate() {
            if really_captured[i] {
                let fresh = fresh_name(b, &avoid);
                avoid.insert(fresh.clone());
                let replacement = if fix_binder {
                    Expr::synth(ExprKind::FixVar(fresh.clone()))
                } else {
                    Expr::synth(ExprKind::Var(fresh.clone()))
                };
                inner.insert(b.clone(), replacement);
                *b = fresh;
            }
        }
    }
    if inner.is_empty() {
        return None;
    }
    let mut inner_fv = BTreeSet::new();
    for e in inner.values() {
        inner_fv.extend(e.free_vars());
    }
    match subst_expr(body, &inner, &inner_fv) {
        Some(e) => Some((new_binders, e)),
        None => {
            if new_binders == binders {
                None
            } else {
                Some((new_binders, body.clone()))
            }
        }
    }
}

fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let stem = base.split('#').next().unwrap_or(base);
    for i in 1.. {
        let cand = format!("{stem}#{i}");
        if !avoid.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

/// Constructor constants: applications of these to values are themselves
/// values. Everything else in the constant table is a function.
pub fn is_constructor_const(name: &str) -> bool {
    name == "service_create"
}

/// A session definition: `sesstype NAME = body`.
#[derive(Clone, Debug)]
pub struct SessDef {
    pub name: String,
    pub body: SessionType,
    pub span: Span,
}

impl PartialEq for SessDef {
    fn eq(&self, other: &SessDef) -> bool {
        self.name == other.name && self.body == other.body
    }
}

/// A function definition; consecutive definitions joined by `and` form one
/// recursion group.
#[derive(Clone, Debug)]
pub struct FunDef {
    pub name: String,
    pub params: Vec<(String, ViewType)>,
    pub ret: Option<ViewType>,
    pub body: Expr,
    pub span: Span,
}

impl PartialEq for FunDef {
    fn eq(&self, other: &FunDef) -> bool {
        self.name == other.name
            && self.params == other.params
            && self.ret == other.ret
            && self.body == other.body
    }
}

/// A parsed program: session definitions, function groups, and a `main`.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub sess_defs: Vec<SessDef>,
    pub fun_groups: Vec<Vec<FunDef>>,
}

impl Program {
    /// The definition of `main`, which every program must have.
    pub fn main_def(&self) -> Option<&FunDef> {
        self.fun_groups.iter().flatten().find(|f| f.name == "main")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(id: u64) -> Expr {
        Expr::res(Endpoint::pos(id))
    }

    #[test]
    fn value_grammar() {
        assert!(Expr::unit().is_value());
        // fix is not a value form even when its body is
        let fix = Expr::synth(ExprKind::Fix(
            "f".into(),
            None,
            Arc::new(Expr::lam(
                Linearity::Lin,
                "x",
                ViewType::Unit,
                Expr::var("x"),
            )),
        ));
        assert!(!fix.is_value());
        assert!(Expr::pair(Expr::unit(), ch(1)).is_value());
        // fix-variables are not values
        assert!(!Expr::synth(ExprKind::FixVar("f".into())).is_value());
        // saturated constructor applications are values
        let svc = Expr::const_app(
            "service_create",
            vec![Expr::lam(
                Linearity::Intuit,
                "x",
                ViewType::Unit,
                Expr::var("x"),
            )],
        );
        assert!(svc.is_value());
        assert!(!Expr::const_app("send", vec![ch(1), Expr::int(2)]).is_value());
    }

    #[test]
    fn resource_multiset() {
        assert_eq!(ch(3).resources(), Resources::singleton(Endpoint::pos(3)));
        assert!(Expr::unit().resources().is_empty());
        let pair = Expr::pair(ch(1), Expr::res(Endpoint::neg(1)));
        let rho = pair.resources();
        assert!(rho.contains(Endpoint::pos(1)));
        assert!(rho.contains(Endpoint::neg(1)));
        assert_eq!(rho.0.len(), 2);
    }

    #[test]
    fn resources_of_if_counts_one_branch() {
        let e = Expr::synth(ExprKind::If(
            Arc::new(Expr::boolean(true)),
            Arc::new(ch(1)),
            Arc::new(ch(1)),
        ));
        assert_eq!(e.resources(), Resources::singleton(Endpoint::pos(1)));
    }

    #[test]
    fn subst_basics() {
        let mut theta = BTreeMap::new();
        theta.insert("x".to_string(), Expr::unit());
        assert_eq!(Expr::var("x").subst(&theta), Expr::unit());

        // intuitionistic reuse duplicates the substituted value
        let dup = Expr::pair(Expr::var("x"), Expr::var("x"));
        assert_eq!(dup.subst(&theta), Expr::pair(Expr::unit(), Expr::unit()));
    }

    #[test]
    fn subst_under_lambda_preserves_resources() {
        let mut theta = BTreeMap::new();
        theta.insert("x".to_string(), ch(1));
        let e = Expr::lam(Linearity::Lin, "y", ViewType::Unit, Expr::var("x"));
        let out = e.subst(&theta);
        assert_eq!(out.resources(), Resources::singleton(Endpoint::pos(1)));
    }

    #[test]
    fn subst_avoids_capture() {
        // (lam y => pair(x, y))[x -> y]  must not capture the free y
        let mut theta = BTreeMap::new();
        theta.insert("x".to_string(), Expr::var("y"));
        let e = Expr::lam(
            Linearity::Lin,
            "y",
            ViewType::Unit,
            Expr::pair(Expr::var("x"), Expr::var("y")),
        );
        let out = e.subst(&theta);
        if let ExprKind::Lam(_, binder, _, body) = &out.kind {
            assert_ne!(binder, "y");
            let fv = body.free_vars();
            assert!(fv.contains("y"));
        } else {
            panic!("expected lambda");
        }
    }

    #[test]
    fn product_linearity_is_componentwise() {
        let lin = ViewType::prod(ViewType::Int, ViewType::ChPos(SessionType::Nil));
        assert!(lin.is_linear());
        let non = ViewType::prod(ViewType::Int, ViewType::Bool);
        assert!(!non.is_linear());
        assert!(!ViewType::Service(SessionType::Nil).is_linear());
    }

    mod subst_law {
        use super::*;
        use proptest::prelude::*;

        /// Occurrences of `x` along the same traversal the resource
        /// function takes (the else-branch of an `if` is not walked).
        fn occurrences(e: &Expr, x: &str) -> usize {
            match &e.kind {
                ExprKind::Var(y) | ExprKind::FixVar(y) => usize::from(y == x),
                ExprKind::ResConst(_) | ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Unit => 0,
                ExprKind::ConstApp(_, args) => args.iter().map(|a| occurrences(a, x)).sum(),
                ExprKind::Pair(a, b) => occurrences(a, x) + occurrences(b, x),
                ExprKind::Fst(e) | ExprKind::Snd(e) => occurrences(e, x),
                ExprKind::LetPair(x1, x2, e1, e2) => {
                    occurrences(e1, x)
                        + if x1 == x || x2 == x {
                            0
                        } else {
                            occurrences(e2, x)
                        }
                }
                ExprKind::Let(b, e1, e2) => {
                    let shadowed = matches!(b, LetBinder::Name(y) if y == x);
                    occurrences(e1, x) + if shadowed { 0 } else { occurrences(e2, x) }
                }
                ExprKind::If(c, t, _) => occurrences(c, x) + occurrences(t, x),
                ExprKind::Lam(_, y, _, body) => {
                    if y == x {
                        0
                    } else {
                        occurrences(body, x)
                    }
                }
                ExprKind::App(f, a) => occurrences(f, x) + occurrences(a, x),
                ExprKind::Fix(f, _, v) => {
                    if f == x {
                        0
                    } else {
                        occurrences(v, x)
                    }
                }
                ExprKind::Case(s, arms) => {
                    occurrences(s, x)
                        + arms
                            .first()
                            .map(|arm| {
                                if arm.var == x {
                                    0
                                } else {
                                    occurrences(&arm.body, x)
                                }
                            })
                            .unwrap_or(0)
                }
            }
        }

        fn repeat(r: &Resources, n: usize) -> Resources {
            let mut out = Resources::empty();
            for _ in 0..n {
                out = out.union(r.clone());
            }
            out
        }

        fn arb_value() -> impl Strategy<Value = Expr> {
            // closed values, some carrying channel endpoints
            prop_oneof![
                Just(Expr::unit()),
                (0..5i64).prop_map(Expr::int),
                (1..4u64).prop_map(|i| Expr::res(Endpoint::pos(i))),
                (1..4u64).prop_map(|i| Expr::res(Endpoint::neg(i))),
                (1..4u64).prop_map(|i| Expr::pair(Expr::res(Endpoint::pos(i)), Expr::int(0))),
            ]
        }

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                Just(Expr::var("a")),
                Just(Expr::var("b")),
                Just(Expr::var("c")),
                Just(Expr::unit()),
                (0..5i64).prop_map(Expr::int),
                Just(Expr::boolean(true)),
            ];
            leaf.prop_recursive(4, 24, 3, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::pair(a, b)),
                    inner
                        .clone()
                        .prop_map(|e| Expr::synth(ExprKind::Fst(Arc::new(e)))),
                    (inner.clone(), inner.clone()).prop_map(|(f, a)| Expr::app(f, a)),
                    (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, t, e)| {
                        Expr::synth(ExprKind::If(Arc::new(c), Arc::new(t), Arc::new(e)))
                    }),
                    inner
                        .clone()
                        .prop_map(|b| Expr::lam(Linearity::Lin, "b", ViewType::Unit, b)),
                    (inner.clone(), inner.clone()).prop_map(|(rhs, body)| {
                        Expr::synth(ExprKind::Let(
                            LetBinder::Name("c".into()),
                            Arc::new(rhs),
                            Arc::new(body),
                        ))
                    }),
                    (inner.clone(), inner)
                        .prop_map(|(a, b)| { Expr::const_app("send", vec![a, b]) }),
                ]
            })
        }

        proptest! {
            /// The resource clause of the substitution lemma, checked
            /// syntactically: substituting closed values adds each value's
            /// resources once per occurrence the resource walk sees.
            #[test]
            fn resources_of_substitution(
                e in arb_expr(),
                va in arb_value(),
                vb in arb_value(),
            ) {
                let mut theta = BTreeMap::new();
                theta.insert("a".to_string(), va.clone());
                theta.insert("b".to_string(), vb.clone());
                let expected = e
                    .resources()
                    .union(repeat(&va.resources(), occurrences(&e, "a")))
                    .union(repeat(&vb.resources(), occurrences(&e, "b")));
                prop_assert_eq!(e.subst(&theta).resources(), expected);
            }
        }
    }
}
