//! The linear type checker.
//!
//! Context splitting is algorithmic: the linear context threads through
//! checking with consumption marks, and each rule's side conditions are
//! enforced where the declarative rule would split. Conditionals (and tag
//! dispatch) require both identical linear consumption and equal resource
//! multisets across branches; intuitionistic lambdas may consume nothing
//! linear and must be resource-free.

use std::collections::BTreeMap;

use crate::ast::{
    ChoiceDir, Endpoint, Expr, ExprKind, LetBinder, Linearity, Polarity, Program, SessionType,
    Span, ViewType,
};
use crate::diag::{codes, Diagnostic};
use crate::parser::selector_name;
use crate::session::{self, SessionEnv};

/// The constant signature: built-in c-types plus per-tag selector
/// constants generated from branch session definitions.
pub struct Signature {
    pub allow_create2: bool,
    selectors: BTreeMap<String, Selector>,
}

/// A generated tag-selection constant for one arm of a branch definition.
#[derive(Clone, Debug)]
pub struct Selector {
    pub def: String,
    pub tag: String,
    pub tag_index: usize,
    pub dir: ChoiceDir,
    pub cont: SessionType,
}

/// A constant type schema `(T1, ..., Tn) => T`. Schemas may mention the
/// viewtype variables `TVar`/`TVarLin` and session variables `SVar`.
#[derive(Clone, Debug, PartialEq)]
pub struct CType {
    pub params: Vec<ViewType>,
    pub result: ViewType,
}

/// Substitution produced by instantiating a c-type schema.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeSubst {
    pub types: BTreeMap<u32, ViewType>,
    pub sessions: BTreeMap<u32, SessionType>,
}

impl Signature {
    pub fn new(env: &SessionEnv, allow_create2: bool) -> Signature {
        let mut selectors = BTreeMap::new();
        for (def, dir, arms) in env.branch_defs() {
            for (i, (tag, cont)) in arms.iter().enumerate() {
                selectors.insert(
                    selector_name(def, tag),
                    Selector {
                        def: def.clone(),
                        tag: tag.clone(),
                        tag_index: i,
                        dir,
                        cont: cont.clone(),
                    },
                );
            }
        }
        Signature {
            allow_create2,
            selectors,
        }
    }

    pub fn selector(&self, name: &str) -> Option<&Selector> {
        self.selectors.get(name)
    }

    pub fn ctype(&self, name: &str) -> Option<CType> {
        use Linearity::*;
        use SessionType as S;
        use ViewType as V;
        let v = |t: V| t;
        let lin0 = V::TVarLin(0);
        let s0 = S::SVar(0);
        let s1 = S::SVar(1);
        let ct = |params: Vec<V>, result: V| Some(CType { params, result });
        match name {
            "thread_create" => ct(vec![V::arrow(Lin, V::Unit, V::Unit)], v(V::Unit)),
            "chneg_create" => ct(
                vec![V::arrow(Lin, V::ChPos(s0.clone()), V::Unit)],
                V::ChNeg(s0),
            ),
            "chneg_create2" if self.allow_create2 => ct(
                vec![V::arrow(
                    Lin,
                    V::prod(V::ChPos(s0.clone()), V::ChPos(s1.clone())),
                    V::Unit,
                )],
                V::prod(V::ChNeg(s0), V::ChNeg(s1)),
            ),
            "send" => ct(
                vec![V::ChPos(S::snd(lin0.clone(), s0.clone())), lin0],
                V::ChPos(s0),
            ),
            "recv" => ct(
                vec![V::ChPos(S::rcv(lin0.clone(), s0.clone()))],
                V::prod(V::ChPos(s0), lin0),
            ),
            "channeg_recv" => ct(
                vec![V::ChNeg(S::rcv(lin0.clone(), s0.clone())), lin0],
                V::ChNeg(s0),
            ),
            "channeg_send" => ct(
                vec![V::ChNeg(S::snd(lin0.clone(), s0.clone()))],
                V::prod(V::ChNeg(s0), lin0),
            ),
            "close" => ct(vec![V::ChPos(S::Nil)], V::Unit),
            "channeg_close" => ct(vec![V::ChNeg(S::Nil)], V::Unit),
            "chposneg_link" => ct(vec![V::ChPos(s0.clone()), V::ChNeg(s0)], V::Unit),
            "service_create" => ct(
                vec![V::arrow(Intuit, V::ChPos(s0.clone()), V::Unit)],
                V::Service(s0),
            ),
            "service_request" => ct(vec![V::Service(s0.clone())], V::ChNeg(s0)),
            "randbit" => ct(vec![], V::Int),
            "add" | "sub" | "mul" | "div" | "mod" => ct(vec![V::Int, V::Int], V::Int),
            "lt" | "le" | "gt" | "ge" | "eq" | "ne" => ct(vec![V::Int, V::Int], V::Bool),
            _ => self.selectors.get(name).map(|sel| {
                let chan = SessionType::Named(sel.def.clone());
                match sel.dir {
                    ChoiceDir::NegSends => CType {
                        params: vec![ViewType::ChNeg(chan)],
                        result: ViewType::ChNeg(sel.cont.clone()),
                    },
                    ChoiceDir::PosSends => CType {
                        params: vec![ViewType::ChPos(chan)],
                        result: ViewType::ChPos(sel.cont.clone()),
                    },
                }
            }),
        }
    }
}

/// Unify a c-type schema's parameters with argument types and return the
/// substitution plus the instantiated result.
pub fn instantiate(
    ctype: &CType,
    args: &[ViewType],
    env: &SessionEnv,
) -> Result<(TypeSubst, ViewType), String> {
    if ctype.params.len() != args.len() {
        return Err(format!(
            "expected {} arguments, got {}",
            ctype.params.len(),
            args.len()
        ));
    }
    let mut sub = TypeSubst::default();
    for (p, a) in ctype.params.iter().zip(args) {
        unify_vt(p, a, &mut sub, env)?;
    }
    let result = apply_subst(&ctype.result, &sub);
    Ok((sub, result))
}

fn unify_vt(
    schema: &ViewType,
    actual: &ViewType,
    sub: &mut TypeSubst,
    env: &SessionEnv,
) -> Result<(), String> {
    use ViewType::*;
    match (schema, actual) {
        (TVarLin(i), _) => bind_tvar(*i, actual, sub, env),
        (TVar(i), _) => {
            if actual.is_linear() {
                return Err(format!(
                    "nonlinear type variable cannot be instantiated with linear type {actual}"
                ));
            }
            bind_tvar(*i, actual, sub, env)
        }
        (Int, Int) | (Bool, Bool) | (Unit, Unit) => Ok(()),
        (Prod(a1, b1), Prod(a2, b2)) => {
            unify_vt(a1, a2, sub, env)?;
            unify_vt(b1, b2, sub, env)
        }
        (Arrow(l1, a1, b1), Arrow(l2, a2, b2)) if l1 == l2 => {
            unify_vt(a1, a2, sub, env)?;
            unify_vt(b1, b2, sub, env)
        }
        (ChPos(s1), ChPos(s2)) | (ChNeg(s1), ChNeg(s2)) | (Service(s1), Service(s2)) => {
            unify_sess(s1, s2, sub, env)
        }
        _ => Err(format!("cannot match {actual} against {schema}")),
    }
}

fn bind_tvar(
    i: u32,
    actual: &ViewType,
    sub: &mut TypeSubst,
    env: &SessionEnv,
) -> Result<(), String> {
    if let Some(prev) = sub.types.get(&i) {
        if session::viewtype_eq(prev, actual, env) {
            Ok(())
        } else {
            Err(format!("conflicting instantiation: {prev} vs {actual}"))
        }
    } else {
        sub.types.insert(i, actual.clone());
        Ok(())
    }
}

fn unify_sess(
    schema: &SessionType,
    actual: &SessionType,
    sub: &mut TypeSubst,
    env: &SessionEnv,
) -> Result<(), String> {
    use SessionType::*;
    match (schema, actual) {
        (SVar(i), _) => {
            if let Some(prev) = sub.sessions.get(i) {
                if session::session_eq(prev, actual, env) {
                    Ok(())
                } else {
                    Err(format!("conflicting instantiation: {prev} vs {actual}"))
                }
            } else {
                sub.sessions.insert(*i, actual.clone());
                Ok(())
            }
        }
        (Nil, Nil) | (NilBar, NilBar) => Ok(()),
        (Named(a), Named(b)) if a == b => Ok(()),
        (Send(t1, s1), Send(t2, s2)) | (Recv(t1, s1), Recv(t2, s2)) => {
            unify_vt(t1, t2, sub, env)?;
            unify_sess(s1, s2, sub, env)
        }
        (Branch(d1, a1), Branch(d2, a2)) if d1 == d2 && a1.len() == a2.len() => {
            for ((t1, s1), (t2, s2)) in a1.iter().zip(a2) {
                if t1 != t2 {
                    return Err(format!("tag mismatch: {t1} vs {t2}"));
                }
                unify_sess(s1, s2, sub, env)?;
            }
            Ok(())
        }
        // a structural schema head can see through plain definitions
        (_, Named(_) | DualNamed(_)) => {
            let unfolded = session::unfold_head(actual, env)
                .map_err(|e| format!("cannot unfold session: {e}"))?;
            if matches!(unfolded, Named(_) | DualNamed(_)) {
                return Err(format!("cannot match session {actual} against {schema}"));
            }
            unify_sess(schema, &unfolded, sub, env)
        }
        _ => Err(format!("cannot match session {actual} against {schema}")),
    }
}

fn apply_subst(t: &ViewType, sub: &TypeSubst) -> ViewType {
    use ViewType::*;
    match t {
        TVar(i) | TVarLin(i) => sub.types.get(i).cloned().unwrap_or_else(|| t.clone()),
        Int | Bool | Unit => t.clone(),
        Prod(a, b) => ViewType::prod(apply_subst(a, sub), apply_subst(b, sub)),
        Arrow(l, a, b) => ViewType::arrow(*l, apply_subst(a, sub), apply_subst(b, sub)),
        ChPos(s) => ChPos(apply_subst_sess(s, sub)),
        ChNeg(s) => ChNeg(apply_subst_sess(s, sub)),
        Service(s) => Service(apply_subst_sess(s, sub)),
    }
}

fn apply_subst_sess(s: &SessionType, sub: &TypeSubst) -> SessionType {
    use SessionType::*;
    match s {
        SVar(i) => sub.sessions.get(i).cloned().unwrap_or_else(|| s.clone()),
        Nil | NilBar | Named(_) | DualNamed(_) => s.clone(),
        Send(t, rest) => SessionType::snd(apply_subst(t, sub), apply_subst_sess(rest, sub)),
        Recv(t, rest) => SessionType::rcv(apply_subst(t, sub), apply_subst_sess(rest, sub)),
        Branch(d, arms) => Branch(
            *d,
            arms.iter()
                .map(|(t, s)| (t.clone(), apply_subst_sess(s, sub)))
                .collect(),
        ),
    }
}

// ---------------------------------------------------------------------
// expression checking
// ---------------------------------------------------------------------

type Gamma = BTreeMap<String, ViewType>;

#[derive(Clone, Debug, PartialEq)]
struct DeltaEntry {
    ty: ViewType,
    consumed: bool,
}

type Delta = BTreeMap<String, DeltaEntry>;

/// The split context of nonlinear and linear bindings, as seen by callers.
#[derive(Clone, Debug, Default)]
pub struct TypingCtx {
    pub gamma: BTreeMap<String, ViewType>,
    pub delta: BTreeMap<String, ViewType>,
}

pub struct Checker<'a> {
    pub env: &'a SessionEnv,
    pub sig: &'a Signature,
    /// Types for channel endpoint constants, from the live channel store.
    pub res_types: BTreeMap<Endpoint, ViewType>,
}

impl<'a> Checker<'a> {
    pub fn new(env: &'a SessionEnv, sig: &'a Signature) -> Checker<'a> {
        Checker {
            env,
            sig,
            res_types: BTreeMap::new(),
        }
    }

    /// Check `e` under `ctx`; returns its viewtype and the unconsumed
    /// part of the linear context.
    pub fn check(
        &self,
        ctx: &TypingCtx,
        e: &Expr,
    ) -> Result<(ViewType, BTreeMap<String, ViewType>), Diagnostic> {
        let gamma = ctx.gamma.clone();
        let mut delta: Delta = ctx
            .delta
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    DeltaEntry {
                        ty: v.clone(),
                        consumed: false,
                    },
                )
            })
            .collect();
        let ty = self.infer(&gamma, &mut delta, e)?;
        let leftover = delta
            .into_iter()
            .filter(|(_, v)| !v.consumed)
            .map(|(k, v)| (k, v.ty))
            .collect();
        Ok((ty, leftover))
    }

    /// Check a closed expression in the empty variable context.
    pub fn check_closed(&self, e: &Expr) -> Result<ViewType, Diagnostic> {
        let (ty, _) = self.check(&TypingCtx::default(), e)?;
        Ok(ty)
    }

    fn infer(&self, gamma: &Gamma, delta: &mut Delta, e: &Expr) -> Result<ViewType, Diagnostic> {
        match &e.kind {
            ExprKind::Var(x) | ExprKind::FixVar(x) => {
                if let Some(entry) = delta.get_mut(x) {
                    if entry.consumed {
                        return Err(Diagnostic::error(
                            e.span,
                            codes::LIN_REUSE,
                            format!("linear variable `{x}` is used more than once"),
                        ));
                    }
                    entry.consumed = true;
                    return Ok(entry.ty.clone());
                }
                if let Some(ty) = gamma.get(x) {
                    return Ok(ty.clone());
                }
                let hint = if self.sig.ctype(x).is_some() || x == "chneg_create2" {
                    " (constants are not first-class; apply them directly)"
                } else {
                    ""
                };
                Err(Diagnostic::error(
                    e.span,
                    codes::UNBOUND,
                    format!("unbound variable `{x}`{hint}"),
                ))
            }
            ExprKind::ResConst(ep) => self.res_types.get(ep).cloned().ok_or_else(|| {
                Diagnostic::error(
                    e.span,
                    codes::POOL_REGULARITY,
                    format!("channel endpoint {ep} is not live"),
                )
            }),
            ExprKind::Int(_) => Ok(ViewType::Int),
            ExprKind::Bool(_) => Ok(ViewType::Bool),
            ExprKind::Unit => Ok(ViewType::Unit),
            ExprKind::Pair(a, b) => {
                let ta = self.infer(gamma, delta, a)?;
                let tb = self.infer(gamma, delta, b)?;
                Ok(ViewType::prod(ta, tb))
            }
            ExprKind::Fst(inner) => {
                let t = self.infer(gamma, delta, inner)?;
                match t {
                    ViewType::Prod(a, b) => {
                        if a.is_linear() || b.is_linear() {
                            Err(Diagnostic::error(
                                e.span,
                                codes::TYPE_MISMATCH,
                                format!(
                                    "fst discards one component; it applies only to nonlinear pairs, got {}",
                                    ViewType::Prod(a, b)
                                ),
                            ))
                        } else {
                            Ok(*a)
                        }
                    }
                    other => Err(Diagnostic::error(
                        e.span,
                        codes::TYPE_MISMATCH,
                        format!("fst expects a pair, got {other}"),
                    )),
                }
            }
            ExprKind::Snd(inner) => {
                let t = self.infer(gamma, delta, inner)?;
                match t {
                    ViewType::Prod(a, b) => {
                        if a.is_linear() || b.is_linear() {
                            Err(Diagnostic::error(
                                e.span,
                                codes::TYPE_MISMATCH,
                                format!(
                                    "snd discards one component; it applies only to nonlinear pairs, got {}",
                                    ViewType::Prod(a, b)
                                ),
                            ))
                        } else {
                            Ok(*b)
                        }
                    }
                    other => Err(Diagnostic::error(
                        e.span,
                        codes::TYPE_MISMATCH,
                        format!("snd expects a pair, got {other}"),
                    )),
                }
            }
            ExprKind::LetPair(x1, x2, rhs, body) => {
                let t = self.infer(gamma, delta, rhs)?;
                let (ta, tb) = match t {
                    ViewType::Prod(a, b) => (*a, *b),
                    other => {
                        return Err(Diagnostic::error(
                            rhs.span,
                            codes::TYPE_MISMATCH,
                            format!("let-pair expects a pair, got {other}"),
                        ))
                    }
                };
                let mut g2 = gamma.clone();
                let s1 = self.bind(&mut g2, delta, x1, ta, e.span)?;
                let s2 = self.bind(&mut g2, delta, x2, tb, e.span)?;
                let tbody = self.infer(&g2, delta, body)?;
                self.unbind(delta, x2, s2, e.span)?;
                self.unbind(delta, x1, s1, e.span)?;
                Ok(tbody)
            }
            ExprKind::Let(binder, rhs, body) => {
                let t = self.infer(gamma, delta, rhs)?;
                match binder {
                    LetBinder::Unit => {
                        if !session::viewtype_eq(&t, &ViewType::Unit, self.env) {
                            return Err(Diagnostic::error(
                                rhs.span,
                                codes::TYPE_MISMATCH,
                                format!("`val ()` binds a unit-typed expression, got {t}"),
                            ));
                        }
                        self.infer(gamma, delta, body)
                    }
                    LetBinder::Name(x) => {
                        let mut g2 = gamma.clone();
                        let stash = self.bind(&mut g2, delta, x, t, e.span)?;
                        let tbody = self.infer(&g2, delta, body)?;
                        self.unbind(delta, x, stash, e.span)?;
                        Ok(tbody)
                    }
                }
            }
            ExprKind::If(cond, then_e, else_e) => {
                let tc = self.infer(gamma, delta, cond)?;
                if !session::viewtype_eq(&tc, &ViewType::Bool, self.env) {
                    return Err(Diagnostic::error(
                        cond.span,
                        codes::TYPE_MISMATCH,
                        format!("if condition must be bool, got {tc}"),
                    ));
                }
                if then_e.resources() != else_e.resources() {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::RHO_MISMATCH,
                        "if branches carry different channel resources",
                    ));
                }
                let snapshot = delta.clone();
                let t1 = self.infer(gamma, delta, then_e)?;
                let after_then = delta.clone();
                *delta = snapshot;
                let t2 = self.infer(gamma, delta, else_e)?;
                if *delta != after_then {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::IF_LINEAR,
                        "if branches consume different linear variables",
                    ));
                }
                if !session::viewtype_eq(&t1, &t2, self.env) {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::TYPE_MISMATCH,
                        format!("if branches have different types: {t1} vs {t2}"),
                    ));
                }
                Ok(t1)
            }
            ExprKind::Lam(lin, x, ann, body) => {
                self.validate_ann(ann, e.span)?;
                let snapshot = delta.clone();
                let mut g2 = gamma.clone();
                let stash = self.bind(&mut g2, delta, x, ann.clone(), e.span)?;
                let tbody = self.infer(&g2, delta, body)?;
                self.unbind(delta, x, stash, e.span)?;
                if *lin == Linearity::Intuit {
                    if let Some(name) = first_consumption_difference(&snapshot, delta) {
                        return Err(Diagnostic::error(
                            e.span,
                            codes::LAM_CAPTURE,
                            format!("nonlinear function captures linear variable `{name}`"),
                        ));
                    }
                    if !body.resources().is_empty() {
                        return Err(Diagnostic::error(
                            e.span,
                            codes::LAM_RHO,
                            "nonlinear function body must not contain channel resources",
                        ));
                    }
                }
                Ok(ViewType::arrow(*lin, ann.clone(), tbody))
            }
            ExprKind::App(f, a) => {
                let tf = self.infer(gamma, delta, f)?;
                let ta = self.infer(gamma, delta, a)?;
                match tf {
                    ViewType::Arrow(_, param, result) => {
                        if !session::viewtype_eq(&param, &ta, self.env) {
                            return Err(Diagnostic::error(
                                a.span,
                                codes::TYPE_MISMATCH,
                                format!("function expects {param}, got {ta}"),
                            ));
                        }
                        Ok(*result)
                    }
                    other => Err(Diagnostic::error(
                        f.span,
                        codes::TYPE_MISMATCH,
                        format!("application of a non-function of type {other}"),
                    )),
                }
            }
            ExprKind::Fix(f, ann, body) => {
                if !body.is_value() {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::FIX,
                        "fix body must be a syntactic value",
                    ));
                }
                let ann = ann.as_ref().ok_or_else(|| {
                    Diagnostic::error(e.span, codes::FIX, "fix needs a type annotation")
                })?;
                self.validate_ann(ann, e.span)?;
                if ann.is_linear() {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::FIX,
                        format!("fix must have a nonlinear type, got {ann}"),
                    ));
                }
                let snapshot = delta.clone();
                let mut g2 = gamma.clone();
                g2.insert(f.clone(), ann.clone());
                let tbody = self.infer(&g2, delta, body)?;
                if *delta != snapshot {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::FIX,
                        "fix body must not consume linear variables",
                    ));
                }
                if !session::viewtype_eq(&tbody, ann, self.env) {
                    return Err(Diagnostic::error(
                        e.span,
                        codes::TYPE_MISMATCH,
                        format!("fix body has type {tbody}, annotation says {ann}"),
                    ));
                }
                Ok(ann.clone())
            }
            ExprKind::ConstApp(name, args) => self.infer_const(gamma, delta, e, name, args),
            ExprKind::Case(scrut, arms) => self.infer_case(gamma, delta, e, scrut, arms),
        }
    }

    fn infer_const(
        &self,
        gamma: &Gamma,
        delta: &mut Delta,
        e: &Expr,
        name: &str,
        args: &[Expr],
    ) -> Result<ViewType, Diagnostic> {
        let ctype = self.sig.ctype(name).ok_or_else(|| {
            Diagnostic::error(
                e.span,
                codes::UNKNOWN_CONST,
                format!("unknown constant `{name}`"),
            )
        })?;
        if ctype.params.len() != args.len() {
            return Err(Diagnostic::error(
                e.span,
                codes::ARITY,
                format!(
                    "`{name}` takes {} arguments, got {}",
                    ctype.params.len(),
                    args.len()
                ),
            ));
        }
        let mut arg_tys = Vec::with_capacity(args.len());
        for a in args {
            arg_tys.push(self.infer(gamma, delta, a)?);
        }
        let (_, result) = instantiate(&ctype, &arg_tys, self.env).map_err(|msg| {
            Diagnostic::error(e.span, codes::NO_UNIFIER, format!("`{name}`: {msg}"))
        })?;
        Ok(result)
    }

    fn infer_case(
        &self,
        gamma: &Gamma,
        delta: &mut Delta,
        e: &Expr,
        scrut: &Expr,
        arms: &[crate::ast::CaseArm],
    ) -> Result<ViewType, Diagnostic> {
        let tscrut = self.infer(gamma, delta, scrut)?;
        let (pol, def_name) = match &tscrut {
            ViewType::ChPos(SessionType::Named(n)) => (Polarity::Pos, n.clone()),
            ViewType::ChNeg(SessionType::Named(n)) => (Polarity::Neg, n.clone()),
            other => {
                return Err(Diagnostic::error(
                    scrut.span,
                    codes::CASE_POLARITY,
                    format!("case expects a channel at a named branch session, got {other}"),
                ))
            }
        };
        let body = self.env.body(&def_name).ok_or_else(|| {
            Diagnostic::error(
                scrut.span,
                codes::CASE_POLARITY,
                format!("unknown session definition `{def_name}`"),
            )
        })?;
        let (dir, def_arms) = match body {
            SessionType::Branch(dir, arms) => (*dir, arms.clone()),
            _ => {
                return Err(Diagnostic::error(
                    scrut.span,
                    codes::CASE_POLARITY,
                    format!("session `{def_name}` is not a branch definition"),
                ))
            }
        };
        // the dispatching side is the one that receives the tag
        let receiver_ok = match dir {
            ChoiceDir::NegSends => pol == Polarity::Pos,
            ChoiceDir::PosSends => pol == Polarity::Neg,
        };
        if !receiver_ok {
            return Err(Diagnostic::error(
                e.span,
                codes::CASE_POLARITY,
                format!(
                    "this endpoint selects tags on `{def_name}`; only the receiving side can dispatch"
                ),
            ));
        }
        if arms.len() != def_arms.len()
            || def_arms
                .iter()
                .any(|(tag, _)| !arms.iter().any(|a| &a.tag == tag))
        {
            let expected: Vec<&str> = def_arms.iter().map(|(t, _)| t.as_str()).collect();
            return Err(Diagnostic::error(
                e.span,
                codes::CASE_ARMS,
                format!(
                    "case arms must cover exactly the tags of `{def_name}`: {}",
                    expected.join(", ")
                ),
            ));
        }
        let rho0 = arms[0].body.resources();
        for arm in &arms[1..] {
            if arm.body.resources() != rho0 {
                return Err(Diagnostic::error(
                    e.span,
                    codes::RHO_MISMATCH,
                    "case arms carry different channel resources",
                ));
            }
        }
        let snapshot = delta.clone();
        let mut result_ty: Option<ViewType> = None;
        let mut after_first: Option<Delta> = None;
        for arm in arms {
            *delta = snapshot.clone();
            let cont = def_arms
                .iter()
                .find(|(t, _)| t == &arm.tag)
                .map(|(_, s)| s.clone())
                .expect("covered above");
            let var_ty = match pol {
                Polarity::Pos => ViewType::ChPos(cont),
                Polarity::Neg => ViewType::ChNeg(cont),
            };
            let mut g2 = gamma.clone();
            let stash = self.bind(&mut g2, delta, &arm.var, var_ty, arm.body.span)?;
            let t = self.infer(&g2, delta, &arm.body)?;
            self.unbind(delta, &arm.var, stash, arm.body.span)?;
            match &after_first {
                None => after_first = Some(delta.clone()),
                Some(d) => {
                    if delta != d {
                        return Err(Diagnostic::error(
                            e.span,
                            codes::IF_LINEAR,
                            "case arms consume different linear variables",
                        ));
                    }
                }
            }
            match &result_ty {
                None => result_ty = Some(t),
                Some(rt) => {
                    if !session::viewtype_eq(rt, &t, self.env) {
                        return Err(Diagnostic::error(
                            e.span,
                            codes::TYPE_MISMATCH,
                            format!("case arms have different types: {rt} vs {t}"),
                        ));
                    }
                }
            }
        }
        Ok(result_ty.expect("at least one arm"))
    }

    fn validate_ann(&self, t: &ViewType, span: Span) -> Result<(), Diagnostic> {
        self.env
            .validate_viewtype(t)
            .map_err(|e| Diagnostic::error(span, codes::SESSION, e.to_string()))
    }

    /// Bind `x : ty`, stashing any shadowed linear entry for restoration
    /// when the scope ends. Linear bindings go to the threaded delta,
    /// nonlinear ones into the given gamma.
    fn bind(
        &self,
        gamma: &mut Gamma,
        delta: &mut Delta,
        x: &str,
        ty: ViewType,
        _span: Span,
    ) -> Result<BindStash, Diagnostic> {
        let stash = delta.remove(x);
        let linear = ty.is_linear();
        if linear {
            delta.insert(
                x.to_string(),
                DeltaEntry {
                    ty,
                    consumed: false,
                },
            );
        } else {
            gamma.insert(x.to_string(), ty);
        }
        Ok(BindStash { linear, stash })
    }

    fn unbind(
        &self,
        delta: &mut Delta,
        x: &str,
        stash: BindStash,
        span: Span,
    ) -> Result<(), Diagnostic> {
        if stash.linear {
            let entry = delta.remove(x).expect("bound entry present");
            if !entry.consumed {
                return Err(Diagnostic::error(
                    span,
                    codes::LIN_UNUSED,
                    format!("linear variable `{x}` is never used"),
                ));
            }
        }
        if let Some(prev) = stash.stash {
            delta.insert(x.to_string(), prev);
        }
        Ok(())
    }
}

struct BindStash {
    linear: bool,
    stash: Option<DeltaEntry>,
}

/// First linear variable whose consumption state differs between two
/// snapshots of the same context.
fn first_consumption_difference(before: &Delta, after: &Delta) -> Option<String> {
    for (name, entry) in after {
        if let Some(prev) = before.get(name) {
            if prev.consumed != entry.consumed {
                return Some(name.clone());
            }
        }
    }
    None
}

// ---------------------------------------------------------------------
// whole-program checking and audits
// ---------------------------------------------------------------------

/// Everything needed to check a program, bundled for reuse by the runtime.
pub struct CheckedProgram {
    pub program: Program,
    pub env: SessionEnv,
    pub main: Expr,
    pub main_type: ViewType,
}

/// Validate sessions, elaborate, and type the main expression.
pub fn check_program(
    program: &Program,
    allow_create2: bool,
) -> Result<CheckedProgram, Vec<Diagnostic>> {
    let env = SessionEnv::new(&program.sess_defs).map_err(|e| {
        vec![Diagnostic::error(
            Span::none(),
            codes::SESSION,
            e.to_string(),
        )]
    })?;
    let sig = Signature::new(&env, allow_create2);
    let main = program.elaborate().map_err(|d| vec![d])?;
    let checker = Checker::new(&env, &sig);
    let main_type = checker.check_closed(&main).map_err(|d| vec![d])?;
    if let Some(def) = program.main_def() {
        if let Some(want) = &def.ret {
            if !session::viewtype_eq(&main_type, want, &env) {
                return Err(vec![Diagnostic::error(
                    def.span,
                    codes::TYPE_MISMATCH,
                    format!("main has type {main_type}, annotation says {want}"),
                )]);
            }
        }
    }
    Ok(CheckedProgram {
        program: program.clone(),
        env,
        main,
        main_type,
    })
}

/// Type a whole pool: the main thread at some viewtype, every other
/// thread at unit, with channel endpoints typed from the store. Also
/// enforces pool regularity (each endpoint in at most one thread, both
/// ends of a live channel present) and the positive/negative matching
/// condition.
pub fn check_pool(
    pool: &crate::runtime::Pool,
    store: &crate::runtime::ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
) -> Result<ViewType, Diagnostic> {
    use std::collections::BTreeSet;

    let mut checker = Checker::new(env, sig);
    checker.res_types = store.resource_types();

    let mut seen: BTreeSet<Endpoint> = BTreeSet::new();
    for (tid, expr) in &pool.threads {
        let rho = expr.resources();
        if !rho.is_duplicate_free() {
            return Err(Diagnostic::error(
                Span::none(),
                codes::POOL_REGULARITY,
                format!("thread {tid} holds a duplicated endpoint: {rho}"),
            ));
        }
        for ep in rho.endpoints() {
            if !seen.insert(ep) {
                return Err(Diagnostic::error(
                    Span::none(),
                    codes::POOL_REGULARITY,
                    format!("endpoint {ep} occurs in two threads"),
                ));
            }
        }
    }
    for ep in &seen {
        if !seen.contains(&ep.dual()) {
            return Err(Diagnostic::error(
                Span::none(),
                codes::POOL_REGULARITY,
                format!("endpoint {ep} is live but its dual is not"),
            ));
        }
    }
    // both endpoint views of a channel must be at matching sessions; with
    // one stored session per id this is an internal consistency assert
    for (id, st) in &store.chans {
        if !session::matches(&st.session, &st.session, env) {
            return Err(Diagnostic::error(
                Span::none(),
                codes::POOL_MATCH,
                format!("channel {id}: endpoint sessions do not match"),
            ));
        }
        if !seen.contains(&Endpoint::pos(*id)) || !seen.contains(&Endpoint::neg(*id)) {
            return Err(Diagnostic::error(
                Span::none(),
                codes::POOL_REGULARITY,
                format!("channel {id} is in the store but not (fully) in the pool"),
            ));
        }
    }

    let mut main_ty = None;
    for (tid, expr) in &pool.threads {
        let ty = checker.check_closed(expr)?;
        if *tid == 0 {
            main_ty = Some(ty);
        } else if !session::viewtype_eq(&ty, &ViewType::Unit, env) {
            return Err(Diagnostic::error(
                Span::none(),
                codes::TYPE_MISMATCH,
                format!("thread {tid} has type {ty}, expected unit"),
            ));
        }
    }
    main_ty.ok_or_else(|| {
        Diagnostic::error(
            Span::none(),
            codes::POOL_REGULARITY,
            "pool has no main thread",
        )
    })
}

/// A closed value of nonlinear type must contain no channel resources.
pub fn check_value_purity(v: &Expr, t: &ViewType) -> Result<(), Diagnostic> {
    debug_assert!(v.is_value());
    if !t.is_linear() && !v.resources().is_empty() {
        return Err(Diagnostic::error(
            v.span,
            codes::PURITY,
            format!(
                "value of nonlinear type {t} contains resources {}",
                v.resources()
            ),
        ));
    }
    Ok(())
}

/// Head-constructor agreement between a closed value and its viewtype.
pub fn canonical_agrees(v: &Expr, t: &ViewType) -> bool {
    match t {
        ViewType::Int => matches!(v.kind, ExprKind::Int(_)),
        ViewType::Bool => matches!(v.kind, ExprKind::Bool(_)),
        ViewType::Unit => matches!(v.kind, ExprKind::Unit),
        ViewType::Prod(..) => matches!(v.kind, ExprKind::Pair(..)),
        ViewType::Arrow(..) => matches!(v.kind, ExprKind::Lam(..)),
        ViewType::ChPos(_) => {
            matches!(&v.kind, ExprKind::ResConst(ep) if ep.pol == Polarity::Pos)
        }
        ViewType::ChNeg(_) => {
            matches!(&v.kind, ExprKind::ResConst(ep) if ep.pol == Polarity::Neg)
        }
        ViewType::Service(_) => {
            matches!(&v.kind, ExprKind::ConstApp(name, _) if name == "service_create")
        }
        ViewType::TVar(_) | ViewType::TVarLin(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Linearity;

    fn empty_env() -> SessionEnv {
        SessionEnv::new(&[]).unwrap()
    }

    fn check_in(
        env: &SessionEnv,
        ctx: &TypingCtx,
        e: &Expr,
    ) -> Result<(ViewType, BTreeMap<String, ViewType>), Diagnostic> {
        let sig = Signature::new(env, false);
        let checker = Checker::new(env, &sig);
        checker.check(ctx, e)
    }

    #[test]
    fn identity_lambda() {
        let env = empty_env();
        let e = Expr::lam(Linearity::Intuit, "x", ViewType::Int, Expr::var("x"));
        let (ty, leftover) = check_in(&env, &TypingCtx::default(), &e).unwrap();
        assert_eq!(
            ty,
            ViewType::arrow(Linearity::Intuit, ViewType::Int, ViewType::Int)
        );
        assert!(leftover.is_empty());
    }

    #[test]
    fn if_consumes_linear_in_both_branches() {
        let env = empty_env();
        let mut ctx = TypingCtx::default();
        ctx.delta
            .insert("x".into(), ViewType::ChPos(SessionType::Nil));
        let e = Expr::synth(ExprKind::If(
            std::sync::Arc::new(Expr::boolean(true)),
            std::sync::Arc::new(Expr::var("x")),
            std::sync::Arc::new(Expr::var("x")),
        ));
        let (ty, leftover) = check_in(&env, &ctx, &e).unwrap();
        assert_eq!(ty, ViewType::ChPos(SessionType::Nil));
        assert!(leftover.is_empty(), "x must be consumed");
    }

    #[test]
    fn linear_reuse_rejected() {
        let env = empty_env();
        let mut ctx = TypingCtx::default();
        ctx.delta
            .insert("x".into(), ViewType::ChPos(SessionType::Nil));
        let e = Expr::pair(Expr::var("x"), Expr::var("x"));
        let err = check_in(&env, &ctx, &e).unwrap_err();
        assert_eq!(err.code, codes::LIN_REUSE);
    }

    #[test]
    fn close_on_live_endpoint() {
        let env = empty_env();
        let sig = Signature::new(&env, false);
        let mut checker = Checker::new(&env, &sig);
        let ep = Endpoint::pos(1);
        checker
            .res_types
            .insert(ep, ViewType::ChPos(SessionType::Nil));
        let e = Expr::const_app("close", vec![Expr::res(ep)]);
        let ty = checker.check_closed(&e).unwrap();
        assert_eq!(ty, ViewType::Unit);
    }

    #[test]
    fn instantiate_send() {
        let env = empty_env();
        let sig = Signature::new(&env, false);
        let ct = sig.ctype("send").unwrap();
        let args = vec![
            ViewType::ChPos(SessionType::snd(ViewType::Int, SessionType::Nil)),
            ViewType::Int,
        ];
        let (sub, result) = instantiate(&ct, &args, &env).unwrap();
        assert_eq!(sub.types.get(&0), Some(&ViewType::Int));
        assert_eq!(sub.sessions.get(&0), Some(&SessionType::Nil));
        assert_eq!(result, ViewType::ChPos(SessionType::Nil));
    }

    #[test]
    fn instantiate_thread_create() {
        let env = empty_env();
        let sig = Signature::new(&env, false);
        let ct = sig.ctype("thread_create").unwrap();
        let args = vec![ViewType::arrow(
            Linearity::Lin,
            ViewType::Unit,
            ViewType::Unit,
        )];
        let (_, result) = instantiate(&ct, &args, &env).unwrap();
        assert_eq!(result, ViewType::Unit);
    }

    #[test]
    fn send_on_receiving_session_has_no_unifier() {
        let env = empty_env();
        let sig = Signature::new(&env, false);
        let ct = sig.ctype("send").unwrap();
        let args = vec![
            ViewType::ChPos(SessionType::rcv(ViewType::Int, SessionType::Nil)),
            ViewType::Int,
        ];
        assert!(instantiate(&ct, &args, &env).is_err());
    }

    #[test]
    fn nonlinear_tvar_rejects_linear_instantiation() {
        let env = empty_env();
        let ct = CType {
            params: vec![ViewType::TVar(0)],
            result: ViewType::TVar(0),
        };
        let args = vec![ViewType::ChPos(SessionType::Nil)];
        assert!(instantiate(&ct, &args, &env).is_err());
    }

    #[test]
    fn create2_is_flag_gated() {
        let env = empty_env();
        let sig = Signature::new(&env, false);
        assert!(sig.ctype("chneg_create2").is_none());
        let sig = Signature::new(&env, true);
        assert!(sig.ctype("chneg_create2").is_some());
    }

    #[test]
    fn nonlinear_lambda_cannot_capture_linear() {
        let env = empty_env();
        let mut ctx = TypingCtx::default();
        ctx.delta
            .insert("c".into(), ViewType::ChPos(SessionType::Nil));
        let e = Expr::lam(
            Linearity::Intuit,
            "x",
            ViewType::Unit,
            Expr::const_app("close", vec![Expr::var("c")]),
        );
        let err = check_in(&env, &ctx, &e).unwrap_err();
        assert_eq!(err.code, codes::LAM_CAPTURE);
    }

    #[test]
    fn purity_audit() {
        assert!(check_value_purity(&Expr::unit(), &ViewType::Unit).is_ok());
        let pair = Expr::pair(Expr::int(1), Expr::boolean(true));
        assert!(check_value_purity(&pair, &ViewType::prod(ViewType::Int, ViewType::Bool)).is_ok());
        // a channel inside a value of (bogus) nonlinear type trips the audit
        let bad = Expr::pair(Expr::int(1), Expr::res(Endpoint::pos(1)));
        assert!(check_value_purity(&bad, &ViewType::prod(ViewType::Int, ViewType::Int)).is_err());
    }

    #[test]
    fn canonical_forms() {
        assert!(canonical_agrees(&Expr::int(3), &ViewType::Int));
        assert!(canonical_agrees(
            &Expr::res(Endpoint::neg(2)),
            &ViewType::ChNeg(SessionType::Nil)
        ));
        assert!(!canonical_agrees(
            &Expr::res(Endpoint::pos(2)),
            &ViewType::ChNeg(SessionType::Nil)
        ));
    }
}
